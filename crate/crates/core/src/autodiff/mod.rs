//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Graph`] is rebuilt for every forward pass. Leaves are created with
//! [`Graph::param`] (differentiable) or [`Graph::constant`]; operations append
//! nodes; [`Graph::backward`] sweeps once in reverse creation order and
//! returns [`Gradients`] for every leaf the root depends on.
//!
//! [`grad_check`] compares those gradients against central differences and
//! flags entries where the objective has a kink.

mod gradcheck;
mod graph;

pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
