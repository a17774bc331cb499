use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("top-{k} error is not tracked by this trace (tracked: {tracked:?})")]
    UnsupportedK { k: u32, tracked: Vec<u32> },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("decode error: {0}")]
    Decode(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
