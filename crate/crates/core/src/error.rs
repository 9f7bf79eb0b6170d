use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("insufficient sentences: need at least {needed}, have {available}")]
    InsufficientSentences { needed: usize, available: usize },

    #[error("population too small: need at least {needed} clients, have {available}")]
    PopulationTooSmall { needed: usize, available: usize },

    #[error("no updates")]
    NoUpdates,

    #[error("empty evaluation")]
    EmptyEvaluation,

    #[error("numeric overflow: {0}")]
    NumericOverflow(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("special token {0} offered as a prediction candidate")]
    SpecialCandidate(u32),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
