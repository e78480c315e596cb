use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition or invariant on the inputs does not hold.
    #[error("validation error: {0}")]
    Validation(String),

    /// Input is well-formed but carries no usable information
    /// (zero variance, all-zero correlation, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A linear system could not be solved to working precision.
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),

    /// Malformed file content.
    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("training error: {0}")]
    Training(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
