//! Dense tensors, a reverse-mode tape and first-order optimizers.

mod optim;
mod tape;
mod tensor;

pub use optim::{clip_global_norm, AdamHyper, AdamState, Optimizer, OptimizerKind};
pub use tape::{Gradients, Tape, Var, BCE_EPSILON};
pub use tensor::Tensor;

