//! Reverse-mode automatic differentiation, parameters and optimization.

mod gradcheck;
mod optim;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_at, GradCheckReport};
pub use optim::{adam_step, cosine_lr, AdamState};
pub use params::{ParamStore, ParamVars};
pub use tape::{logit, sigmoid, Tape, Var};
pub use tensor::Tensor;
