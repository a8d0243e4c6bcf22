//! Dense double-precision tensors, a reverse-mode tape, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{log_sigmoid, sigmoid, Gradients, Graph, Var};
pub use params::{ParamId, ParamSet};
pub use tensor::Tensor;
