use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("descriptor error: {0}")]
    Descriptor(String),

    #[error("model/input mismatch: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Tensor(#[from] tensor_engine::TensorError),

    #[error(transparent)]
    Flow(#[from] flow_extraction::FlowError),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;
