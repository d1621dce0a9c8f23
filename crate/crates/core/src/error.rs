use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the capture / processing chain.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("capacity exceeded: {what} ({got} > {max})")]
    Capacity {
        what: &'static str,
        got: usize,
        max: usize,
    },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Wire(#[from] crate::net::wire::WireError),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
