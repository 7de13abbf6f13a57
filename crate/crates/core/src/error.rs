use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Where and how a training run blew up.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceReport {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub threshold: f64,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape error in {op}: {lhs:?} vs {rhs:?}")]
    Shape { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },

    #[error("invalid calibration: {0}")]
    InvalidCalibration(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("label kind mismatch: {0}")]
    LabelKind(String),

    #[error(
        "training diverged at epoch {} batch {}: loss {} (threshold {})",
        .0.epoch, .0.batch, .0.loss, .0.threshold
    )]
    Diverged(DivergenceReport),

    #[error("unsupported version {found:?} (expected {expected:?})")]
    UnsupportedVersion { found: String, expected: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
