use thiserror::Error;

/// Errors surfaced by tensor operations and serialization.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("{op}: produced non-finite values")]
    NonFinite { op: &'static str },

    #[error("{op}: {detail}")]
    Invalid { op: &'static str, detail: String },

    #[error("probability row {row} sums to {sum:.6}, expected 1 within 1e-5")]
    NotNormalized { row: usize, sum: f64 },

    #[error("parameter {index} has no gradient")]
    MissingGrad { index: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

impl TensorError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Invalid {
            op,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
