//! Dense numeric kernels shared by the backbone, adapters and training code.

mod alloc;
mod matrix;
mod ops;
mod rng;
mod scalar;

pub use alloc::{AllocCounter, AllocScope, AllocStats, Buffer};
pub use matrix::Matrix;
pub use ops::*;
pub use rng::Rng;
pub use scalar::{Precision, Scalar};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: dimension mismatch {left:?} vs {right:?}")]
    DimMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: expected length {expected}, got {got}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("{op}: non-finite input")]
    NonFiniteInput { op: &'static str },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
}
