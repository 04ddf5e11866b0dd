use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or settings that cannot describe a valid model or experiment.
    #[error("configuration error: {0}")]
    Config(String),

    /// The caller violated an operation's precondition (empty batch, empty list, ...).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value in layer {layer} during {stage}")]
    NonFiniteActivation { layer: usize, stage: &'static str },

    #[error("non-finite loss for client {client} in {phase} phase, epoch {epoch}")]
    NonFiniteLoss {
        client: usize,
        phase: &'static str,
        epoch: usize,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("partition error: {0}")]
    Partition(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
