use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("chunk store {path}: {message}")]
    ChunkStore { path: PathBuf, message: String },

    #[error("tokenizer: {0}")]
    Tokenizer(String),

    #[error("weights: {0}")]
    Weights(String),

    #[error("chunk rejected: {0}")]
    Rejected(String),

    #[error("selection: {0}")]
    Selection(String),

    #[error("malformed record: {0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
