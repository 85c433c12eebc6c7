use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: input too short ({len} samples) for the configured kernel/stride")]
    InputTooShort { op: &'static str, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("label {label} out of range at batch index {index}")]
    Label { index: usize, label: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0}")]
    Mode(String),

    #[error("batch norm statistics are uninitialized; run a train-mode pass or load a checkpoint")]
    UninitializedStatistics,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{path}:{row}:{column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint family mismatch: expected {expected}, found {found}")]
    FamilyMismatch { expected: String, found: String },

    #[error("feature-order hash mismatch: checkpoint {checkpoint}, data {data}")]
    Incompatible { checkpoint: String, data: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
