//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("dataset is empty: {0}")]
    EmptyDataset(String),
    #[error("user {user} has only {eligible} non-interacted items, need {needed} negatives")]
    InsufficientNegatives {
        user: u32,
        eligible: usize,
        needed: usize,
    },
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("clustering infeasible: {0}")]
    Infeasible(String),
    #[error("aggregation protocol violation: {0}")]
    Protocol(String),
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("runs are not comparable: {0}")]
    Comparability(String),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
