use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("I/O error: {0}")]
    Stream(#[from] std::io::Error),

    #[error("{context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("index {index} out of range for {kind} (size {size})")]
    OutOfRange {
        kind: &'static str,
        index: usize,
        size: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("missing timestamp for pair ({pipeline_id}, {dataset_id})")]
    MissingTimestamp {
        pipeline_id: String,
        dataset_id: String,
    },

    #[error("singular {size}x{size} system (after jitter retries)")]
    Singular { size: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("single-class input: no {0} labels")]
    SingleClass(&'static str),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
