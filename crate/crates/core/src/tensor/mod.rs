//! Dense tensors and the reverse-mode differentiation tape.

mod graph;
mod kernels;
mod value;

pub use graph::{Gradients, Graph, Norm, ParamId, Var, BCE_CLAMP};
pub use value::Tensor;
