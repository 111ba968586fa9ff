mod commands;
mod error;
mod manifest;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlcap::optimizer::SweepMode;
use nlcap::BoxShape;

use error::Status;

#[derive(Parser)]
#[command(
    name = "nlcap",
    version,
    about = "Nonlocal capacity of nonsignaling boxes and quantum correlations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Capacity of a box file together with its dual certificate.
    Capacity(CapacityArgs),
    /// Violation of CHSH, CGLMP or a functional file.
    Violation(ViolationArgs),
    /// Capacity-optimal measurements for a state.
    Optimize(OptimizeArgs),
    /// Capacity and Bell columns over a gamma1 grid.
    Sweep(SweepArgs),
    /// Re-check bracket and weak duality on a result file.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
pub struct SolverArgs {
    /// Stop once upper and lower bound are this close (bits).
    #[arg(long, default_value_t = 1e-6)]
    pub gap_tol: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_iters: usize,
}

#[derive(Args)]
pub struct CapacityArgs {
    /// Box JSON file: {"shape": {...}, "p": [...]}.
    #[arg(long = "box")]
    pub nsbox: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Hold Alice's input distribution fixed, e.g. 0.5,0.5.
    #[arg(long, value_delimiter = ',')]
    pub input_dist: Option<Vec<f64>>,
    /// Write the result here (plus a manifest) instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ViolationArgs {
    #[arg(long = "box")]
    pub nsbox: PathBuf,
    /// `chsh`, `cglmp3` or a functional JSON file.
    #[arg(long, default_value = "chsh")]
    pub functional: String,
}

#[derive(Args)]
pub struct StateArgs {
    /// State JSON file.
    #[arg(long, conflicts_with = "gamma")]
    pub state: Option<PathBuf>,
    /// `gamma1,gamma2` of the state |00> + gamma1 |11> + gamma2 |22>.
    #[arg(long, value_delimiter = ',', num_args = 1..=2)]
    pub gamma: Option<Vec<f64>>,
}

#[derive(Args, Clone)]
pub struct SearchArgs {
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop the setup search once a step gains less than this (bits).
    #[arg(long, default_value_t = 1e-7)]
    pub outer_tol: f64,
}

#[derive(Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long, default_value = "2x2x2x2", value_parser = parse_shape)]
    pub shape: BoxShape,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory.
    #[arg(long, default_value = "optimize-out")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long, default_value = "2x2x2x2", value_parser = parse_shape)]
    pub shape: BoxShape,
    #[arg(long, default_value = "optimize")]
    pub mode: SweepMode,
    /// Comma-separated gamma1 values; defaults to 0.02, 0.04, ..., 1.
    #[arg(long, value_delimiter = ',')]
    pub gamma1: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.0)]
    pub gamma2: f64,
    /// Bisection rounds around the capacity maximum.
    #[arg(long, default_value_t = 0)]
    pub refine: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// 1 runs a warm-started chain; more threads (or 0 for all cores) run every point cold in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// CSV path; the JSON sidecar and manifest are written next to it.
    #[arg(long, default_value = "sweep.csv")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Sweep CSV, sweep JSON sidecar or capacity result JSON.
    pub file: PathBuf,
    /// Box the capacity result belongs to; enables recomputing its dual bound.
    #[arg(long = "box")]
    pub nsbox: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
}

fn parse_shape(text: &str) -> Result<BoxShape, nlcap::Error> {
    BoxShape::parse(text)
}

fn main() -> ExitCode {
    // clap's own usage errors exit with 2, which is reserved for the iteration limit.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Capacity(args) => commands::capacity(&args),
        Command::Violation(args) => commands::violation(&args),
        Command::Optimize(args) => commands::optimize(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Verify(args) => verify::run(&args),
    };
    match outcome {
        Ok(Status::Converged) => ExitCode::SUCCESS,
        Ok(Status::IterationLimit) => {
            eprintln!("warning: iteration limit reached before the gap closed");
            ExitCode::from(2)
        }
        Ok(Status::Failed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
