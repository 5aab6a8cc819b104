//! Crate-wide error type. Numerical routines return structured variants so
//! callers (and the CLI's exit-code mapping) can distinguish configuration
//! mistakes from genuine numerical failure.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameter combinations ruled out up front (gamma < Gamma + 3, beta < 1,
    /// kappa < 1, q = 0, empty architectures, zero epochs with refit off, ...).
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An operation needed the manufactured exact solution but the problem
    /// does not carry one.
    #[error("problem has no exact solution attached")]
    NoExactSolution,

    /// A grid-sampled function was handed to an operation expecting samples
    /// on a different grid.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// LU elimination hit a pivot below the breakdown threshold.
    #[error("singular matrix: pivot magnitude {pivot:.3e} at step {step} (threshold {threshold:.3e})")]
    SingularMatrix {
        step: usize,
        pivot: f64,
        threshold: f64,
    },

    /// Training produced a non-finite loss; the surrounding run is abandoned
    /// at this grade and earlier grades are kept.
    #[error("non-finite loss at grade {grade}, epoch {epoch}, step {step}")]
    NonFiniteLoss {
        grade: usize,
        epoch: usize,
        step: usize,
    },

    /// Relative-error denominators vanished (exact solution identically zero
    /// on the evaluation grid).
    #[error("exact solution has zero norm on the evaluation grid")]
    ZeroDenominator,

    #[error("corrupt checkpoint {path}: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
