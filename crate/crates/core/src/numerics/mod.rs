//! Dense `f64` arrays, tape-based reverse-mode differentiation and SGD.

mod gradcheck;
pub mod ops;
mod params;
mod sgd;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::grad_check;
pub use ops::{matmul, softmax, softmax_slice, Binary, Unary};
pub use params::{InitScheme, Initializer, ParamId, ParamStore};
pub use sgd::{sgd_step, DecayUnit, SgdConfig};
pub use tape::{SparseRow, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("empty input to {op}")]
    Empty { op: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
}

/// `a + b` for equal shapes, or with one side a single value.
pub fn elementwise(op: Binary, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    ops::binary(op, a, b)
}
