//! Tensors and reverse-mode differentiation for the fusion model.

pub mod gradcheck;
mod graph;
pub mod kernels;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, GradChecker, Objective};
pub use graph::{Graph, NodeId, OpKind};
pub use tensor::{Fill, Real, Tensor};
