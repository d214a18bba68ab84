//! Reverse-mode automatic differentiation over dense 2-D tensors.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with, GradCheckReport, ParamCheck};
pub use graph::{CustomOp, Gradients, Graph, OpKind, ParamId, ParamStore, Var};
pub use tensor::{log_sum_exp, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("tensor shape {rows}x{cols} does not fit {len} values")]
    BadShape { rows: usize, cols: usize, len: usize },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: (usize, usize) },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: String },
    #[error("loss builder is not deterministic: {first} vs {second}")]
    NonDeterministic { first: f64, second: f64 },
    #[error("gradient check needs epsilon > 0, got {0}")]
    BadEpsilon(f64),
}
