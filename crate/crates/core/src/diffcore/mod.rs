//! Minimal reverse-mode differentiable numerics.
//!
//! Values live in [`Array`]s recorded on a [`Tape`]. Trainable weights are
//! owned by a [`ParamStore`] and enter a tape by reference through
//! [`Tape::param`]; [`Tape::backward`] returns [`Gradients`] which the store
//! accumulates before an [`Adam`] step.
//!
//! ```
//! use nvif_lab::diffcore::{Array, ParamStore, Tape};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Array::matrix(1, 1, vec![3.0])).unwrap();
//! let mut tape = Tape::new();
//! let x = tape.constant(Array::matrix(1, 1, vec![2.0]));
//! let wv = tape.param(&store, w);
//! let y = tape.matmul(x, wv).unwrap();
//! let loss = tape.square(y);
//! let grads = tape.backward(loss).unwrap();
//! store.accumulate(&grads);
//! // d(w·x)²/dw = 2·w·x² = 24
//! assert_eq!(store.grad(w).item(), 24.0);
//! ```

mod array;
pub mod checkpoint;
pub mod gradcheck;
pub mod init;
mod layers;
mod optim;
mod params;
mod tape;

pub use array::{matmul, Array, SparseMatrix};
pub use layers::{gaussian_sample, GruCell, Linear, TwoLayerMlp, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
pub use optim::{clip_grad_norm, Adam, Moments};
pub use params::{ParamId, ParamKey, ParamStore};
pub use tape::{Gradients, Tape, Var, BCE_CLAMP};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter name {0:?} already registered")]
    DuplicateName(String),
    #[error("unknown parameter {0:?}")]
    UnknownParam(String),
    #[error("index {index} out of range for {what} of size {size}")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// `std::io::Error` wrapper so that [`DiffError`] can stay `PartialEq`.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct IoError(#[from] pub std::io::Error);

impl PartialEq for IoError {
    fn eq(&self, other: &Self) -> bool {
        self.0.kind() == other.0.kind()
    }
}

impl From<std::io::Error> for DiffError {
    fn from(e: std::io::Error) -> Self {
        DiffError::Io(IoError(e))
    }
}
