use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for parameter {index} ({name})")]
    NonFiniteGradient { index: usize, name: String },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unsupported mode: {0}")]
    UnsupportedMode(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("starter budget exhausted: accepted {accepted} of {requested} after {drawn} draws (acceptance rate {rate:.4})")]
    StarterBudget {
        accepted: usize,
        requested: usize,
        drawn: usize,
        rate: f64,
        partial: Vec<crate::traverse::Starter>,
    },

    #[error("trajectory did not converge: {0:?}")]
    NotConverged(crate::traverse::Outcome),

    #[error("partial augmentation: achieved {achieved} of {requested} for cell {cell}")]
    PartialAugmentation {
        cell: String,
        achieved: usize,
        requested: usize,
    },

    #[error("unsupported weights format {0:?}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source} (artifacts: {artifacts:?})")]
    Stage {
        stage: String,
        artifacts: Vec<PathBuf>,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed csv {path}: {detail}")]
    Csv { path: PathBuf, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
