use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cosine undefined for a zero vector")]
    ZeroVector,

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("undefined quantity: {0}")]
    Undefined(String),

    #[error("line {line}: malformed header: {msg}")]
    MalformedHeader { line: usize, msg: String },

    #[error("line {line}: malformed record: {msg}")]
    MalformedRecord { line: usize, msg: String },

    #[error("line {line}: duplicate id `{id}`")]
    DuplicateId { line: usize, id: String },

    #[error("line {line}: non-positive delta in field {field}")]
    NonPositiveDelta { line: usize, field: usize },

    #[error("line {line}: unknown id `{id}`")]
    UnknownIdAt { line: usize, id: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
