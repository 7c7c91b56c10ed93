//! A small reverse-mode automatic differentiation engine over dense `f64` tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Learnable state
//! lives in a [`ParamStore`] that outlives the tape; [`Tape::backward`]
//! consumes the tape and accumulates gradients into the store, after which
//! [`AdamState::step`] updates the parameters.
//!
//! ```
//! use medfront::autodiff::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let id = store.add("x", Tensor::from_vec(vec![1.0, 2.0]));
//! let mut tape = Tape::new();
//! let x = tape.param(&store, id);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss, &mut store).unwrap();
//! assert_eq!(store.grad(id).unwrap().data(), &[2.0, 4.0]);
//! ```

mod adam;
mod ops;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use ops::softmax;
pub use params::{ParamId, ParamStore, Parameter, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use rng::stream_rng;
pub use tape::{BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("{0} produced a non-finite value")]
    NonFinite(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
