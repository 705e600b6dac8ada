use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("size error: {0}")]
    Size(String),

    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("retained modes K={modes} exceed n/2={half} for grid n={n}")]
    Truncation { modes: usize, n: usize, half: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric divergence in {location}")]
    NumericDivergence { location: String },

    #[error("degenerate target: sample {sample} has zero norm")]
    DegenerateTarget { sample: usize },

    #[error("solver diverged{}: {reason}", sample.map(|s| format!(" on sample {s}")).unwrap_or_default())]
    SolverDiverged { sample: Option<usize>, reason: String },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("format error at byte offset {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("sweep failed: every run diverged for K={modes}")]
    SweepFailed { modes: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
