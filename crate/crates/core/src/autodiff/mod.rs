//! Reverse-mode differentiation over a per-step operation record.
//!
//! A [`Graph`] owns every value produced while evaluating a model. Each op
//! whose inputs require gradients is recorded with whatever it needs to
//! replay its adjoint; [`Graph::backward`] walks the record in reverse once.

mod gemm;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub(crate) use gemm::gemm;
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Conv2dAttrs, Graph, OpAttrs, OpKind, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{Param, ParamId, ParamStore, SavedParam};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: invalid attributes: {detail}")]
    InvalidAttrs { op: &'static str, detail: String },
    #[error("unknown op kind `{0}`")]
    UnknownOp(String),
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity { op: &'static str, expected: usize, got: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by a backward pass; call reset_grads first")]
    GraphConsumed,
    #[error("non-finite value while checking input {input} (element {index})")]
    NonFinite { input: usize, index: usize },
}
