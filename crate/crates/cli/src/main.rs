//! `vmlb` — simulate and compare load balancers for fixed-interval VM
//! reservations on shared physical machines.
//!
//! Exit codes: 0 success, 1 usage problem, 2 infeasible workload or a
//! violated performance bound, 3 filesystem trouble.

mod commands;
mod experiment;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Process-level failure with the exit code the interface promises.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad experiment file, bad parameter combination: exit 1.
    Usage(String),
    /// The workload cannot be scheduled or a proven bound broke: exit 2.
    Infeasible(String),
    /// Reading or writing a file failed: exit 3.
    Io(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        CliError::Infeasible(msg.into())
    }

    pub fn io(path: &std::path::Path, err: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Infeasible(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Infeasible(msg) | CliError::Io(msg) => {
                f.write_str(msg)
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "vmlb",
    version,
    about = "Simulate and compare load balancers for fixed-interval VM reservations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a seeded synthetic workload and save it as an instance file
    Generate(GenerateArgs),
    /// Run one algorithm over one instance and print its metric row
    Run(RunArgs),
    /// Run an experiment file: workloads x algorithms x repetitions
    Compare(CompareArgs),
    /// Re-check the provable performance bounds on randomized instances
    Verify(VerifyArgs),
    /// Minimize the peak load of a small instance by exhaustive search
    Oracle(OracleArgs),
}

/// Start-slot/duration generation shape.
#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    /// Durations normal around the mean; starts uniform
    DurationNormal,
    /// Starts normal around the mean; durations uniform
    StartNormal,
}

#[derive(Args)]
pub struct GenerateArgs {
    /// Number of VM requests to draw
    #[arg(long, default_value_t = 1000)]
    pub n: u32,
    /// Generator seed; the same seed always yields the same instance
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Mean of the duration (or start) distribution, in slots
    #[arg(long, default_value_t = 864.0)]
    pub mean_slots: f64,
    /// Standard deviation of that distribution, in slots
    #[arg(long, default_value_t = 288.0)]
    pub std_slots: f64,
    /// Generation window for start slots; defaults to four times the mean
    #[arg(long)]
    pub horizon_slots: Option<u64>,
    /// Which quantity the normal distribution drives
    #[arg(long, value_enum, default_value_t = ModeArg::DurationNormal)]
    pub mode: ModeArg,
    /// Eight comma-separated draw weights for the catalog VM types
    #[arg(long)]
    pub type_dist: Option<String>,
    /// Machine counts for the three hardware families, as N1,N2,N3
    #[arg(long, default_value = "4,2,2")]
    pub pms: String,
    /// Where to write the instance JSON
    #[arg(long)]
    pub out: PathBuf,
}

/// Per-algorithm tuning knobs; each applies only to the algorithms that
/// read it, and naming one for any other algorithm is a usage error.
#[derive(Args, Default)]
pub struct TuningArgs {
    /// Partition depth for the partition-first algorithms
    #[arg(long)]
    pub k: Option<u32>,
    /// Imbalance tolerance for the online equal partitioner, e.g. 1/8
    #[arg(long)]
    pub f: Option<String>,
    /// Per-machine load budget for the online equal partitioner, e.g. 192
    #[arg(long)]
    pub cm_bound: Option<String>,
    /// Drain-band half-width for the migration rebalancer, e.g. 1/10
    #[arg(long)]
    pub pmg_factor: Option<String>,
    /// RNG seed for the random placer
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct RunArgs {
    /// Instance JSON produced by `generate` (or written by hand)
    #[arg(long)]
    pub instance: PathBuf,
    /// Algorithm name, e.g. lpt, round-robin, olrsa, prepartition-off
    #[arg(long)]
    pub algorithm: String,
    #[command(flatten)]
    pub tuning: TuningArgs,
    /// Directory for decision logs and series files
    /// (default: $VMLB_OUT_DIR, then ./vmlb-out)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Sampling step of the imbalance series, in slots
    #[arg(long, default_value_t = 288)]
    pub series_step_slots: u64,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Experiment file listing workloads, algorithms and repetitions
    #[arg(long)]
    pub experiment: PathBuf,
    /// Override the file's repetition count
    #[arg(long)]
    pub repetitions: Option<u32>,
    /// Override the file's output directory
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Override the file's imbalance-series sampling step
    #[arg(long)]
    pub series_step_slots: Option<u64>,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Number of randomized instances per bound family
    #[arg(long, default_value_t = 50)]
    pub instances: u64,
    /// Base seed for the instance stream
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to save a counterexample instance if a bound breaks
    /// (default: $VMLB_OUT_DIR, then ./vmlb-out)
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct OracleArgs {
    /// Instance JSON to solve exactly
    #[arg(long)]
    pub instance: PathBuf,
    /// Refuse instances with more requests than this
    #[arg(long, default_value_t = 10)]
    pub max_requests: usize,
    /// Refuse instances with more machines than this
    #[arg(long, default_value_t = 4)]
    pub max_pms: usize,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => commands::generate(args),
        Command::Run(args) => commands::run(args),
        Command::Compare(args) => commands::compare(args),
        Command::Verify(args) => commands::verify(args),
        Command::Oracle(args) => commands::oracle(args),
    }
}

fn main() -> ExitCode {
    // Die quietly when the reader of our stdout goes away (`vmlb ... | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    match Cli::try_parse() {
        Ok(cli) => match dispatch(cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(err) => {
                eprintln!("error: {err}");
                ExitCode::from(err.code())
            }
        },
        Err(err) => {
            // Help and version requests land here too; those are successes.
            let ok = matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            err.print().ok();
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
