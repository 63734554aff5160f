use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("context of length {len} exceeds maximum {max} for an order-{order} store")]
    ContextTooLong {
        len: usize,
        max: usize,
        order: usize,
    },

    #[error("word id {id} out of range for vocabulary of size {size}")]
    WordOutOfRange { id: usize, size: usize },

    #[error("zero probability event: word {word} after context {context:?}")]
    ZeroProbability { context: Vec<u32>, word: u32 },

    #[error("zero probability for word {word} at position {position} of sentence {sentence}")]
    ZeroProbabilityAt {
        sentence: usize,
        position: usize,
        word: u32,
    },

    #[error("{0}")]
    Shape(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite loss after {words} training words")]
    Divergence { words: u64 },

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    RawIo(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }

    /// True for failures of the numerics (as opposed to bad input data).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::ZeroProbability { .. }
                | Error::ZeroProbabilityAt { .. }
                | Error::NonFiniteGradient(_)
                | Error::Divergence { .. }
        )
    }
}
