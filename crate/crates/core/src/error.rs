//! Crate-wide error type.

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input file could not be tokenized or parsed at all.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A line parsed but carries a value outside the accepted domain
    /// (negative box size, class id out of range, ...).
    #[error("rejected record at line {line}: {msg}")]
    RejectedRecord { line: usize, msg: String },

    /// A function argument violates its preconditions.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A configuration value (file or programmatic) is unusable.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data is structurally valid but inconsistent with the run
    /// (missing labels, duplicate ids, mismatched clip lengths, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A binary artifact (graph set, checkpoint) has an unreadable layout.
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite gradient for the named tensor.
    #[error("non-finite gradient in tensor '{tensor}'")]
    NonFiniteGradient { tensor: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
