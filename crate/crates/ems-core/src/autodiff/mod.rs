//! Reverse-mode automatic differentiation over `f64` tensors.
//!
//! A [`Graph`] is built define-by-run: every operation appends a node and
//! returns its [`NodeId`], so node order is already topological and a single
//! reverse sweep computes all gradients. Leaves are either named inputs
//! (bound at [`Graph::forward`] time), named parameters (values held in the
//! graph, deduplicated by name so reuse across time steps accumulates
//! gradients), or constants.
//!
//! All arithmetic is `f64`; there is no implicit broadcasting — elementwise
//! operations require identical shapes and report a descriptive error
//! otherwise.

mod graph;
mod tensor;

pub use graph::{grad_check, grad_check_against, GradCheckReport, Graph, NodeId};
pub use tensor::Tensor;
