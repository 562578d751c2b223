//! `coag`: gelation times, size distributions, localization and cross-checks
//! for multicomponent coagulation with the kernel `kᵀ A l`.

mod commands;
mod compare;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coag_core::CoagError;
use serde::Serialize;

/// Exit status for a successful run.
pub const EXIT_OK: u8 = 0;
/// Anything not covered below, including a failed `compare`.
pub const EXIT_OTHER: u8 = 1;
/// The model file or an argument failed validation.
pub const EXIT_VALIDATION: u8 = 2;
/// The requested time is at or past the critical time.
pub const EXIT_CRITICALITY: u8 = 3;
/// A hypothesis of the requested computation fails (e.g. some `p_i = 0`).
pub const EXIT_HYPOTHESIS: u8 = 4;
/// Integration, convergence or cancellation failure.
pub const EXIT_NUMERICAL: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "coag", version, about)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "COAG_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the gelation time report as JSON.
    Gelation(GelationArgs),
    /// Compute the size distribution at time t and write it as CSV.
    Solve(SolveArgs),
    /// Minimize the rate function and print the localization direction.
    Localize(LocalizeArgs),
    /// Run the ODE, exact and Monte Carlo routes and check their agreement.
    Compare(CompareArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GelationArgs {
    /// Model JSON: {"m": .., "A": [[..]], "p": [..]}.
    pub spec: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Ode,
    Analytic,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FormArg {
    Reduced,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Rk4,
    Euler,
}

#[derive(Debug, Args, Serialize)]
pub struct OdeArgs {
    /// ODE step size.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    /// Loss term of the truncated system.
    #[arg(long, value_enum, default_value_t = FormArg::Reduced)]
    pub form: FormArg,
    /// Time stepper.
    #[arg(long, value_enum, default_value_t = MethodArg::Rk4)]
    pub stepper: MethodArg,
}

#[derive(Debug, Args, Serialize)]
pub struct McArgs {
    /// Trees are censored once larger than this.
    #[arg(long, default_value_t = 100_000)]
    pub cap: u64,
    /// Seed of the Monte Carlo streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SolveArgs {
    /// Model JSON file.
    pub spec: PathBuf,
    /// Time.
    #[arg(long)]
    pub t: f64,
    /// Largest cluster size |n| reported (and ODE truncation window).
    #[arg(long)]
    pub nmax: u32,
    /// Truncated ODE, exact solution or branching-process simulation.
    #[arg(long, value_enum)]
    pub method: SolveMethod,
    /// Output CSV; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Monte Carlo replicates.
    #[arg(long, default_value_t = 1_000_000)]
    pub replicates: u64,
    #[command(flatten)]
    pub ode: OdeArgs,
    #[command(flatten)]
    pub mc: McArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct LocalizeArgs {
    /// Model JSON file.
    pub spec: PathBuf,
    /// Time.
    #[arg(long)]
    pub t: f64,
    /// Projected-gradient tolerance of the minimizer.
    #[arg(long, default_value_t = 1e-11)]
    pub tol: f64,
    #[arg(long, default_value_t = 100_000)]
    pub max_iter: usize,
    /// Direction ρ for the empirical rate check, comma separated.
    #[arg(long, value_delimiter = ',', requires = "n_list")]
    pub rate_check: Option<Vec<f64>>,
    /// Sizes N for the rate check; each N ρ must be integral.
    #[arg(long = "N-list", alias = "n-list", value_delimiter = ',')]
    pub n_list: Option<Vec<u64>>,
    /// CSV for the rate sequence (`N,rate,extrapolated`).
    #[arg(long, requires = "rate_check")]
    pub rate_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// Model JSON file.
    pub spec: PathBuf,
    /// Time.
    #[arg(long)]
    pub t: f64,
    /// ODE truncation window; the exact deficit is measured beyond it.
    #[arg(long)]
    pub nmax: u32,
    #[arg(long, default_value_t = 1_000_000)]
    pub mc_replicates: u64,
    /// Sizes compared between routes (default: min(nmax, 20)).
    #[arg(long)]
    pub compare_size: Option<u32>,
    /// Largest accepted ODE-vs-exact gap.
    #[arg(long, default_value_t = 1e-6)]
    pub ode_tol: f64,
    /// Largest accepted in-window mass deficit of the exact solution.
    #[arg(long, default_value_t = 1e-6)]
    pub deficit_tol: f64,
    /// Largest accepted Monte Carlo deviation, in standard errors.
    #[arg(long, default_value_t = 4.0)]
    pub mc_sigmas: f64,
    /// Cells with probability below this are not tested against Monte Carlo.
    #[arg(long, default_value_t = 1e-3)]
    pub mc_min_prob: f64,
    /// JSON report; a manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub ode: OdeArgs,
    #[command(flatten)]
    pub mc: McArgs,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<CoagError>() {
        Some(CoagError::InvalidSpec(_) | CoagError::InvalidArgument(_) | CoagError::Json(_) | CoagError::Csv(_)) => {
            EXIT_VALIDATION
        }
        Some(CoagError::Supercritical { .. }) => EXIT_CRITICALITY,
        Some(CoagError::Hypothesis(_)) => EXIT_HYPOTHESIS,
        Some(CoagError::Integration { .. } | CoagError::NonConvergence { .. } | CoagError::Numerical(_)) => {
            EXIT_NUMERICAL
        }
        Some(CoagError::Io(_)) | None => EXIT_OTHER,
    }
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    match cli.command {
        Command::Gelation(args) => commands::gelation(&args),
        Command::Solve(args) => commands::solve(&args),
        Command::Localize(args) => commands::localize(&args),
        Command::Compare(args) => compare::compare(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
