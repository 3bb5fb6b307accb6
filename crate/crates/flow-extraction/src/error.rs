use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrupt file: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, FlowError>;
