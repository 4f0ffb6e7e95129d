//! Tensor math: arena-based reverse-mode autodiff, Adam, and seeded RNG.
//!
//! Tensors are `f32` throughout. Loss reductions accumulate in `f64` before
//! casting back, so batch means are stable and reproducible. Every operation
//! validates shapes up front and checks its output for NaN/Inf, failing fast
//! with a typed error instead of letting poison propagate into training.

mod adam;
mod prng;
mod tape;

pub use adam::Adam;
pub use prng::Prng;
pub use tape::{Tape, TensorId};

/// Errors from tensor operations and the optimizer.
#[derive(Debug, thiserror::Error)]
pub enum NumericsError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArg { op: &'static str, msg: String },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("operation on an empty tape")]
    EmptyTape,
    #[error("tensor id {0} is not on this tape")]
    BadTensorId(usize),
    #[error("adam: parameter {index} has no gradient; run backward first")]
    MissingGrad { index: usize },
    #[error("adam: parameter {index} changed size between steps")]
    StateSizeMismatch { index: usize },
}

pub type Result<T> = std::result::Result<T, NumericsError>;
