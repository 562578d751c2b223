use thiserror::Error;

/// Errors produced by the coagulation solvers.
#[derive(Debug, Error)]
pub enum CoagError {
    /// The problem instance violates a structural requirement.
    #[error("invalid model: {0}")]
    InvalidSpec(String),

    /// An argument to an operation is outside its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The requested time is at or beyond the critical (gelation) time.
    #[error("time t = {t} is not below the critical time T_c = {t_c}")]
    Supercritical { t: f64, t_c: f64 },

    /// A hypothesis of the localization result does not hold.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// The ODE state left the admissible region.
    #[error("integration failure at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    /// An iterative method did not reach its tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// A floating-point evaluation lost all significance.
    #[error("numerical breakdown: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CoagError> = std::result::Result<T, E>;
