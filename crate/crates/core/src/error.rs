//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by the enhancement toolkit.
#[derive(Error, Debug)]
pub enum Error {
    /// An argument violates a documented precondition (shape, range, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration document is inconsistent or incomplete.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file does not conform to its declared on-disk format.
    #[error("format error: {0}")]
    Format(String),

    /// A numerical operation failed (singular matrix, non-finite values).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
