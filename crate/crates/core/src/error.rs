use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("width mismatch: expected {expected}, got {got}")]
    Width { expected: usize, got: usize },

    #[error("malformed word: {0}")]
    MalformedWord(String),

    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("read on empty memory")]
    EmptyMemory,

    #[error("goal unreachable within {0} explored nodes")]
    Unreachable(usize),

    #[error("task sampling failed after {attempts} attempts for level {level}")]
    Sampling { level: usize, attempts: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training budget exhausted: {0}")]
    Budget(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
