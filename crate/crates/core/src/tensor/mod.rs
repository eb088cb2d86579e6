//! Minimal reverse-mode automatic differentiation over `f64` tensors.

mod dense;
mod gradcheck;
mod optim;
mod params;
mod tape;

pub use dense::{argmax, log_sum_exp, softmax, Tensor};
pub use gradcheck::{grad_check, grad_check_params};
pub use optim::{Adam, AdamState};
pub use params::{Gradients, Param, ParamId, ParamKey, ParamSet};
pub use tape::{stable_sigmoid, Tape, Var};

#[cfg(test)]
mod tests;
