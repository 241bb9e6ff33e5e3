use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: timestamp {t} precedes previous event at {prev}")]
    Unsorted {
        path: PathBuf,
        line: usize,
        t: f64,
        prev: f64,
    },

    #[error("{path}:{line}: unsupported edge operation `{op}` (only Add is supported)")]
    UnsupportedOperation {
        path: PathBuf,
        line: usize,
        op: String,
    },

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("invalid event: {0}")]
    InvalidEvent(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("query time {t} precedes previous event time {last}")]
    TimeOrder { t: f64, last: f64 },

    #[error("non-finite intensity at t = {0}")]
    NonFiniteIntensity(f64),

    #[error("node {0} was not seen during training")]
    UnseenNode(usize),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
