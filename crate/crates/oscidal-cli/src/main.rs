//! Batch driver for the oscillatory-equation solver: trains multi-grade
//! (and baseline single-network) runs over a seed list and an optional
//! hyperparameter sweep, writes per-run artifacts plus summary tables, and
//! offers direct-solve, bound-verification, spectrum, and matrix-dump
//! subcommands on top of the same experiment configs.
//!
//! Exit codes separate blame: 0 success; 1 numerical failure (divergent or
//! singular runs, violated residual bounds, a sweep with no usable point);
//! 2 usage or configuration errors (bad flags, malformed TOML, missing or
//! corrupt files); 3 internal errors (I/O and anything unclassified).

mod artifacts;
mod check;
mod config;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// An error carrying the process exit code it should produce.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    /// Numerical failure: the computation ran but its numbers are unusable.
    pub fn numeric(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }

    /// Usage or configuration error: the request itself was malformed.
    pub fn usage(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }

    /// Internal error: I/O and everything else.
    pub fn internal(error: anyhow::Error) -> Self {
        Failure { code: 3, error }
    }

    /// Classify an error by the most specific cause in its chain: library
    /// errors map by variant, TOML parse errors are usage errors, anything
    /// else is internal.
    pub fn classified(error: anyhow::Error) -> Self {
        for cause in error.chain() {
            if let Some(lib) = cause.downcast_ref::<oscidal::error::Error>() {
                use oscidal::error::Error::*;
                let code = match lib {
                    InvalidConfig(_) | NoExactSolution | GridMismatch(_)
                    | DimensionMismatch(_) | ZeroDenominator | CorruptCheckpoint { .. } => 2,
                    SingularMatrix { .. } | NonFiniteLoss { .. } => 1,
                    Io { .. } => 3,
                };
                return Failure { code, error };
            }
            if cause.downcast_ref::<toml::de::Error>().is_some() {
                return Failure { code: 2, error };
            }
        }
        Failure { code: 3, error }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure::classified(error)
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "oscidal-cli",
    version,
    about = "Batch solver for oscillatory Fredholm equations of the second kind"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

/// Which training driver to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Adaptive multi-grade training (default).
    Amgdl,
    /// Depth-matched single-network baseline.
    Sgdl,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every (sweep point, seed) job, write run artifacts, and pick
    /// the winning hyperparameters by mean validation loss.
    Train {
        /// Experiment description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Training driver.
        #[arg(long, value_enum, default_value_t = Mode::Amgdl)]
        mode: Mode,
        /// Override the config's output_dir.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Worker threads (default: available parallelism, capped at the
        /// job count).
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Solve the collocation system directly by Gaussian elimination and
    /// write the nodal solution (with error diagnostics when an exact
    /// solution is configured).
    ReferenceSolve {
        /// Experiment description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's output_dir).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Recompute residual norms from a finished run's checkpoints alone and
    /// check them against the operator's posterior error bounds.
    Verify {
        /// A run directory written by `train` (contains config.toml and
        /// grade_<n>.json checkpoints).
        run_dir: PathBuf,
        /// Where to write bounds.csv (default: inside the run directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare the frequency content of a finished run's solution against
    /// the configured exact solution, bin by bin.
    Spectrum {
        /// A run directory written by `train`.
        run_dir: PathBuf,
        /// Where to write spectrum.csv (default: inside the run directory).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the assembled collocation matrix as a tagged binary file.
    DumpMatrix {
        /// Experiment description (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output file path.
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> CmdResult<()> {
    match cli.command {
        Cmd::Train {
            config,
            mode,
            output,
            seed_override,
            parallel,
        } => train::cmd_train(&config, mode == Mode::Sgdl, output, seed_override, parallel),
        Cmd::ReferenceSolve { config, output } => check::cmd_reference_solve(&config, output),
        Cmd::Verify { run_dir, output } => check::cmd_verify(&run_dir, output),
        Cmd::Spectrum { run_dir, output } => check::cmd_spectrum(&run_dir, output),
        Cmd::DumpMatrix { config, output } => check::cmd_dump_matrix(&config, &output),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
