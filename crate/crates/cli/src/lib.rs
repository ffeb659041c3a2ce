//! Command-line driver: parses configs and flags, runs one experiment and
//! writes CSV/JSON artifacts.
//!
//! Exit codes: 0 success, 1 usage, 2 numerical failure, 3 verification
//! failure.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use estent_core::Error;

pub mod acceptance;
mod commands;
pub mod config;
pub mod output;

pub use config::{ExperimentConfig, Format};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "estent", version, about = "Estimation entropy experiments")]
pub struct Cli {
    /// TOML experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; sub-seeds are derived per module.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: results].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Lyapunov spectrum along one orbit.
    Lyapunov(LyapunovArgs),
    /// Lyapunov lower bound on estimation entropy.
    Bound(BoundArgs),
    /// Separated-set counts and fitted rate.
    EntropySep(EntropyArgs),
    /// Spanning-set counts and fitted rate.
    EntropySpan(EntropyArgs),
    /// Rate of f^k against k times the rate of f.
    PowerCheck(PowerArgs),
    /// Bowen-ball volume decay by multilevel splitting.
    Ballvolume(BallArgs),
    /// Finite-rate estimation coder.
    SimulateCoder(CoderArgs),
    /// Refining simplicial partitions with separated cores.
    Partitions(PartitionArgs),
    /// Runs the acceptance suite and writes a pass/fail table.
    Repro,
}

#[derive(Debug, Args)]
pub struct LyapunovArgs {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Steps between QR reorthonormalizations.
    #[arg(long)]
    pub reorth: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// One or more comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    /// Single-orbit sampling from this point.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub tmin: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    /// Grid points per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Also count at half the grid resolution and flag a >10% change.
    #[arg(long)]
    pub resolution_check: bool,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub k: Option<u32>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub tmin: Option<f64>,
    #[arg(long)]
    pub tmax: Option<f64>,
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BallArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Deepest level.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct CoderArgs {
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub lipschitz: Option<f64>,
    #[arg(long)]
    pub safety: Option<f64>,
    /// Initial points for the Lyapunov lower bound.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Steps per Lyapunov sample.
    #[arg(long)]
    pub n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub nmax: Option<usize>,
    /// `square` or `torus`.
    #[arg(long)]
    pub domain: Option<String>,
    /// Essential bound on the measure density.
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub chart_lipschitz: Option<f64>,
    /// Dump cell and core meshes for every level.
    #[arg(long)]
    pub mesh: bool,
}

/// Exit code for an error chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Numerical { .. } | Error::InsufficientData { .. } | Error::LevelFailure { .. }) => EXIT_NUMERICAL,
        Some(Error::SchemeViolation { .. } | Error::Soundness { .. } | Error::Verification(_)) => EXIT_VERIFICATION,
        _ => EXIT_USAGE,
    }
}

/// Runs a parsed invocation and returns the one-line summary.
pub fn execute(cli: Cli) -> anyhow::Result<String> {
    commands::dispatch(cli)
}

/// Parses `args` (including the program name) and runs them.
pub fn execute_args<I, T>(args: I) -> anyhow::Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Usage(e.to_string()))?;
    execute(cli)
}

/// Full entry point: prints the summary or the error and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
