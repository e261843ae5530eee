use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("rendering error: {0}")]
    Render(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid field `{field}`: {reason}")]
    Parse { field: String, reason: String },

    #[error("malformed WAV data: {0}")]
    Wav(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("sequencing error: {0}")]
    Sequencing(String),

    #[error("session is complete")]
    Completed,

    #[error("phase II loops are still being generated")]
    Generating,

    #[error("invalid session state: {0}")]
    State(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
