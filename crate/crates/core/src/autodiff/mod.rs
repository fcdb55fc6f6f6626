//! Reverse-mode differentiation over a recorded tape of tensor ops.

mod graph;
pub mod kernels;
mod param;

pub use graph::{Eager, Exec, Tape, Var};
pub use param::{GradBuffer, ParamId, ParamStore, Parameter};
