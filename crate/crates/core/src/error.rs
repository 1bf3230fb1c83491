use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("target grid outside source extent: {0}")]
    Extent(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("masked cells are not supported by {0}; use the Gaussian-blur separator for masked domains")]
    MaskUnsupported(&'static str),

    #[error("ordering error: {0}")]
    Ordering(String),

    #[error("target grid is coarser than the source; use bilinear regridding")]
    UseBilinear,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("fields are not aligned: {0}")]
    Alignment(String),

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate})")]
    Divergence { epoch: usize, learning_rate: f64 },

    #[error("non-finite state at integration step {step}")]
    BlowUp { step: usize },

    #[error("ensemble spread is undefined for a single member")]
    SpreadUndefined,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("period error: {0}")]
    Period(String),

    #[error("invalid specification: {0}")]
    Spec(String),

    #[error("unknown scenario `{0}` (expected shared_largescale, biased_source or future_shift)")]
    UnknownScenario(String),

    #[error("gradient check failed: max relative error {0:.3e}")]
    GradientCheck(f64),

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

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
