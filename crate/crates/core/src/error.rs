use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, FdError>;

#[derive(Debug, Error)]
pub enum FdError {
    #[error("input shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("barrier incomplete: missing uploads from clients {missing:?}")]
    Barrier { missing: Vec<usize> },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FdError {
    pub fn config(msg: impl Into<String>) -> Self {
        FdError::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        FdError::Usage(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FdError::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether this error stems from user input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            FdError::Config(_) | FdError::Usage(_) | FdError::Parse { .. } | FdError::Schema(_)
        )
    }
}
