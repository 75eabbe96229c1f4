use thiserror::Error;

/// Errors produced by the model, estimators, data and training code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid token {token} (vocabulary size {vocab})")]
    InvalidToken { token: usize, vocab: usize },

    #[error("thought length {actual} does not match model thought length {expected}")]
    ThoughtLength { expected: usize, actual: usize },

    #[error("prefix length {len} must be shorter than thought length {thought_len}")]
    PrefixTooLong { len: usize, thought_len: usize },

    #[error("thought space {vocab}^{thought_len} exceeds enumeration cap {cap}")]
    EnumerationCap {
        vocab: usize,
        thought_len: usize,
        cap: usize,
    },

    #[error("empty group")]
    EmptyGroup,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
