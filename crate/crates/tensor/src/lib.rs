//! Small f64 reverse-mode autodiff: n-d arrays, a tape-based graph,
//! im2col convolution, optimizers and a checkpoint container.

pub mod array;
pub mod checkpoint;
pub mod gradcheck;
mod graph;
pub mod kernels;
pub mod optim;
mod param;

pub use array::Array;
pub use graph::{Gradients, Graph, Tensor};
pub use param::{Init, Param, ParamStore};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("parameter structure mismatch: {0}")]
    Structure(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
