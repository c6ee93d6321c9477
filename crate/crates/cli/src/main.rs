//! `drlfm`: estimation on user data, Monte-Carlo simulation and standalone
//! Tall-Wide completion.
//!
//! Exit codes: 0 success, 2 usage or validation failure, 3 numerical failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drlfm::estimators::EstimatorKind;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "drlfm", version, about = "Doubly-robust treatment effects in latent factor models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate per-outcome treatment effects from outcome and treatment CSVs.
    Estimate(EstimateArgs),
    /// Run the Monte-Carlo replication harness.
    Simulate(SimulateArgs),
    /// Complete a matrix with missing cells by Tall-Wide.
    Complete(CompleteArgs),
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output directory; created if absent.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite a directory that already holds a run manifest.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Observed outcomes, N×M CSV.
    #[arg(long)]
    y: PathBuf,
    /// Binary treatment matrix, N×M CSV.
    #[arg(long)]
    a: PathBuf,
    /// Rank of the propensity factors.
    #[arg(long)]
    rank_p: usize,
    /// Rank of the control mean-outcome factors.
    #[arg(long)]
    rank_theta0: usize,
    /// Rank of the treated mean-outcome factors.
    #[arg(long)]
    rank_theta1: usize,
    #[arg(long, default_value_t = drlfm::cfsvd::DEFAULT_LAMBDA_BAR)]
    lambda_bar: f64,
    /// Confidence level of the DR interval.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// `halves`, `random`, or a JSON file with `r0` and `c0` index lists.
    #[arg(long, default_value = "halves")]
    partition: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "oi,ipw,dr")]
    estimators: Vec<EstimatorKind>,
    /// Input CSVs start with a header row.
    #[arg(long)]
    header: bool,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// TOML or JSON simulation config; unset fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, env = "DRLFM_THREADS")]
    threads: Option<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    /// Matrix CSV; empty cells are missing unless `--mask` is given.
    #[arg(long)]
    s: PathBuf,
    /// Optional 0/1 CSV marking observed cells of `--s`.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    rank: usize,
    /// Cross-fitted completion for arbitrary missingness: the zero-filled
    /// matrix is completed blockwise and rescaled by the estimated
    /// observation probability.
    #[arg(long)]
    cross_fit: bool,
    /// Rank of the observation-probability fit under `--cross-fit`.
    #[arg(long, default_value_t = 1)]
    rank_p: usize,
    #[arg(long, default_value_t = drlfm::cfsvd::DEFAULT_LAMBDA_BAR)]
    lambda_bar: f64,
    #[arg(long, default_value = "halves")]
    partition: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    header: bool,
    #[command(flatten)]
    output: OutputArgs,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<drlfm::Error>())
        .any(drlfm::Error::is_numerical);
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_VALIDATION
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => commands::estimate(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Complete(args) => commands::complete(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
