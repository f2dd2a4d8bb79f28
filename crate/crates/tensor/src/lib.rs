//! A small dense-tensor kernel with a tape for reverse-mode differentiation.
//!
//! Parameters live in a [`ParamStore`]; a [`Graph`] borrows the store, records
//! the forward computation and produces [`Gradients`] that are accumulated back
//! into the store. Everything is generic over [`Scalar`] so the same model code
//! runs in `f32` for training and in `f64` for finite-difference checks.

pub mod adam;
pub mod checkpoint;
mod graph;
pub mod init;
mod param;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Gradients, Graph, Var};
pub use param::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::{log_softmax_row, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    BadLength { shape: Vec<usize>, len: usize },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("index {index} out of range for table with {rows} rows")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
