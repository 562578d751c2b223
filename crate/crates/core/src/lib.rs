//! Multicomponent Smoluchowski coagulation with the multiplicative kernel
//! `K(k, l) = kᵀ A l` and monodisperse initial conditions.
//!
//! Three independent routes to the size distribution `w_n(t)`:
//!
//! - [`ode`]: fixed-step integration of the truncated countable ODE system,
//! - [`analytic`]: the exact total-progeny law of a multi-type Poisson
//!   branching process, `w_n(t) = (p_i / n_i) P(T⁽ⁱ⁾ = n)`,
//! - [`branching_mc`]: Monte Carlo simulation of that branching process.
//!
//! [`pgf`] computes the gelation time `T_c = 1 / ‖AP‖₂` and evaluates the
//! generating-function fixed point; [`localization`] minimizes the rate
//! function `Γ(ρ)` that governs the composition of large clusters.

pub mod analytic;
pub mod branching_mc;
pub mod error;
pub mod io;
pub mod linalg;
pub mod localization;
pub mod model;
pub mod ode;
pub mod pgf;

pub use error::{CoagError, Result};
pub use model::{borel_oracle, validate, Composition, ModelSpec, SizeDistribution, ValidationReport};
pub use analytic::AnalyticSolver;
pub use branching_mc::{McConfig, RootChoice};
pub use localization::{LocalizationResult, SimplexPoint};
pub use pgf::{gelation_time, GelationReport};
