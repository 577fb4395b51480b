//! Dense tensors, a reverse-mode tape, parameter storage, Adam and the
//! binary checkpoint container.

mod checkpoint;
mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use checkpoint::{
    decode_records, encode_records, load_checkpoint, manifest_path, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC,
};
pub use gradcheck::{finite_diff_check, finite_diff_check_many};
pub use optim::{Adam, AdamConfig};
pub use params::{glorot_uniform, ParamStore};
pub use tape::{sigmoid, softmax, softplus, Gradients, Tape, Var, NORMALIZE_EPS};
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("expected a one-element tensor, got shape {shape:?}")]
    NonScalar { shape: Vec<usize> },
    #[error("missing parameter '{0}'")]
    MissingParameter(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl NumericError {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        NumericError::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
