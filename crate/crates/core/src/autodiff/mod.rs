//! Minimal reverse-mode differentiation over dense matrices, plus Adam.

mod adam;
mod nn;
mod tape;
mod tensor;

pub use adam::{AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON, DEFAULT_LR};
pub use nn::{batch_norm, gru_cell, GruVars, Mode, RunningStats, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM};
pub use tape::{bce_logit, sigmoid, Axis, Gradients, Tape, Var};
pub use tensor::Tensor;
