//! Dense tensors and a reverse-mode tape.
//!
//! Operations are recorded on a [`Tape`] as they execute. [`Tape::backward`]
//! walks the record in reverse and accumulates adjoints; parameter leaves
//! forward their gradients to a [`Parameter`] list with
//! [`Tape::accumulate_into`].
//!
//! ```
//! use vitcap::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.variable(Tensor::from_f64(vec![2], &[1.0, 2.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

mod kernels;
mod param;
mod tape;
mod tensor;

pub use param::{zero_grad, Parameter};
pub use tape::{Tape, Var};
pub use tensor::{Precision, Real, Tensor};

/// Layer-norm epsilon used throughout the model.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("shape {shape:?} has a zero extent")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("rows of unequal length")]
    Ragged,
    #[error("cannot reshape {from:?} to {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("axis {axis} out of range for shape {shape:?}")]
    Axis { axis: usize, shape: Vec<usize> },
    #[error("concat of zero tensors")]
    EmptyConcat,
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("backward already ran on this tape; record a new one")]
    BackwardReplayed,
    #[error("tape was created without gradient tracking")]
    GradDisabled,
}

#[cfg(test)]
mod tests;
