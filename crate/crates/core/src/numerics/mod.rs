//! Dense tensors, a small primitive set and reverse-mode gradients.

mod cell;
mod graph;
mod param;
mod tape;
mod tensor;

pub use cell::GruCell;
pub use graph::{Eval, Graph};
pub use param::{Gradients, ParamId, ParamSet, Parameter};
pub use tape::{Tape, Var};
pub use tensor::{log_add, logsumexp, sigmoid, Tensor};
