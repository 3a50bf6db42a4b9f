//! Dense tensors with reverse-mode automatic differentiation.

mod check;
mod graph;
mod tensor;

pub use check::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use tensor::{sigmoid, softplus, Real, Tensor};
