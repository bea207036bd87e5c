use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("gateway error: {message}")]
    Gateway { message: String, retryable: bool },

    #[error("no admissible (task, checkpoint) pairs for horizon {horizon}")]
    EmptyHorizon { horizon: usize },

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("snapshot {step} could not be restored: {message}")]
    Snapshot { step: usize, message: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn gateway(message: impl Into<String>, retryable: bool) -> Self {
        Error::Gateway {
            message: message.into(),
            retryable,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Gateway { retryable: true, .. })
    }
}
