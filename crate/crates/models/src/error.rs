use face2scene_core::Error as CoreError;
use face2scene_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] TensorError),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("degenerate embedding: pre-normalization norm {0:e}")]
    DegenerateEmbedding(f64),
    #[error("degenerate task: {0}")]
    DegenerateTask(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

pub(crate) fn too_small(side: usize, min: usize) -> ModelError {
    ModelError::Core(CoreError::TooSmallFace { side, min })
}

pub(crate) fn shape(msg: impl Into<String>) -> ModelError {
    ModelError::Core(CoreError::Shape(msg.into()))
}

pub(crate) fn config(msg: impl Into<String>) -> ModelError {
    ModelError::Config(msg.into())
}
