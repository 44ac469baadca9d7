//! Differentiable numerical substrate: tensors, a reverse-mode tape, layer
//! compositions, parameter trees with checkpointing, Adam and finite-difference
//! gradient checking.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod nn;
mod params;
mod real;
mod tensor;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gradcheck::{grad_check, grad_check_tree, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use params::{Bound, Param, ParameterTree, Role};
pub use real::{DType, Real};
pub use tensor::Tensor;
