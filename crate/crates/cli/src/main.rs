//! `mc-lab`: generate ground truths, simulate observations, fit the three
//! estimators, run concentration diagnostics and rate scans.

mod commands;
mod config;
mod fail;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mclab::Estimator;

#[derive(Parser)]
#[command(
    name = "mc-lab",
    version,
    about = "Matrix completion under sampling with replacement"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random rank-r matrix with entries in [-a, a] as CSV.
    Generate(GenerateArgs),
    /// Sample noisy observations of the config's ground truth.
    Simulate(SimulateArgs),
    /// Fit an estimator to an observation file.
    Solve(SolveArgs),
    /// Concentration parameters, bounds and a Monte Carlo spectral-norm summary.
    Concentration(ConcentrationArgs),
    /// Error-rate scan over n, M or r with a log-log power-law fit.
    RateScan(RateScanArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    #[arg(long)]
    m1: usize,
    #[arg(long)]
    m2: usize,
    #[arg(long)]
    rank: usize,
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn parse_estimator(s: &str) -> Result<Estimator, String> {
    s.parse().map_err(|e: mclab::Error| e.to_string())
}

#[derive(Args)]
pub struct SolveArgs {
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// ls, huber or sqrt.
    #[arg(long, value_parser = parse_estimator)]
    estimator: Estimator,
    /// `auto` (theorem rule), `pilot` (simulated quantile) or a number.
    #[arg(long, default_value = "auto")]
    lambda: String,
    /// Huber threshold; overrides the config and the rule.
    #[arg(long)]
    tau: Option<f64>,
    /// Estimate CSV; the sidecar goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Exit with status 4 when the solver does not converge.
    #[arg(long)]
    strict: bool,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Family {
    Rademacher,
    Noise,
    Truncated,
    Indicator,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    Gaussian,
    StudentT,
    TwoPoint,
}

#[derive(Args)]
pub struct ConcentrationArgs {
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long)]
    m1: usize,
    #[arg(long)]
    m2: usize,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "gaussian")]
    noise: NoiseArg,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = mclab::sampling::DEFAULT_STUDENT_DF)]
    df: f64,
    /// Truncation level for the truncated and indicator families.
    #[arg(long)]
    tau: Option<f64>,
    /// Report R = 2b/n for a recentered truncation.
    #[arg(long)]
    recentered: bool,
    /// Deviation level for the tail threshold.
    #[arg(long, default_value_t = 3.0)]
    t: f64,
    /// Universal constant in the sharp bounds.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct RateScanArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Record wall time per trial.
    #[arg(long)]
    timing: bool,
}

fn configure_threads() -> Result<(), fail::CliError> {
    let Ok(v) = std::env::var("MC_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| {
        fail::CliError::usage(format!("MC_LAB_THREADS must be an integer, got {v:?}"))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| fail::CliError {
                code: 1,
                message: e.to_string(),
            })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Solve(a) => commands::solve(a),
        Command::Concentration(a) => commands::concentration(a),
        Command::RateScan(a) => commands::rate_scan_cmd(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
