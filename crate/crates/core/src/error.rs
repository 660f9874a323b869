//! Shared error type.
//!
//! Variants map onto the CLI exit-code classes: [`Error::Argument`] exits 2,
//! [`Error::Format`] and [`Error::Validation`] exit 3, [`Error::Budget`]
//! exits 4.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A file does not conform to its declared format. `offset` is the byte
    /// position of the first offending datum where that is meaningful.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// In-memory data violates an invariant (e.g. a probability map whose
    /// pixel sums leave the simplex).
    #[error("validation error: {0}")]
    Validation(String),

    /// A combinatorial or pixel budget would be exceeded; the operation
    /// refuses rather than run unbounded.
    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn argument(message: impl Into<String>) -> Self {
        Error::Argument(message.into())
    }

    pub fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Error::Validation(message.into())
    }

    pub fn budget(message: impl Into<String>) -> Self {
        Error::Budget(message.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            context: path.display().to_string(),
            source,
        }
    }
}
