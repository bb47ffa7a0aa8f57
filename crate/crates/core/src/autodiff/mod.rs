//! Reverse-mode automatic differentiation, Adam, and finite-difference
//! gradient checking.

mod adam;
mod gradcheck;
mod graph;
mod param;

pub use adam::{Adam, AdamConfig};
pub use gradcheck::grad_check;
pub use graph::{Gradients, Graph, Var};
pub use param::{IdGen, ParamId, Parameter, Params};

pub(crate) use graph::matmul;
