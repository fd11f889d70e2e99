//! Reverse-mode differentiation over a per-forward-pass tape.
//!
//! A [`Graph`] records every operation in construction order, so node ids
//! are already a topological order and the backward pass is a single reverse
//! sweep. Graphs are cheap to build and are rebuilt for each forward pass.

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Stencil};
pub(crate) use graph::normalise_rows_forward;
pub use graph::{CustomOp, Gradients, Graph, NodeId};

use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("{labels} labels for a batch of {batch}")]
    LabelCount { labels: usize, batch: usize },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("row {row} has centred norm {norm:e}, below 1e-12")]
    DegenerateRow { row: usize, norm: f64 },
}
