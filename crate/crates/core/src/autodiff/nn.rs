//! Composite layers built from tape primitives.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};
use crate::Scalar;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Running mean / population variance tracked by batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    pub momentum: T,
}

impl<T: Scalar> RunningStats<T> {
    pub fn new(width: usize) -> Self {
        Self {
            mean: Tensor::zeros(1, width),
            var: Tensor::filled(1, width, T::one()),
            momentum: T::lit(BATCH_NORM_MOMENTUM),
        }
    }

    fn update(&mut self, mean: &[T], var: &[T]) {
        let m = self.momentum;
        for (r, &b) in self.mean.data_mut().iter_mut().zip(mean) {
            *r = (T::one() - m) * *r + m * b;
        }
        for (r, &b) in self.var.data_mut().iter_mut().zip(var) {
            *r = (T::one() - m) * *r + m * b;
        }
    }
}

/// Batch normalization of the rows of `x`. In train mode the batch
/// statistics are used and folded into `stats`; in infer mode `stats` is used.
pub fn batch_norm<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut RunningStats<T>,
    mode: Mode,
) -> Result<Var> {
    let eps = T::lit(BATCH_NORM_EPS);
    match mode {
        Mode::Train => {
            let (y, mean, var) = tape.batch_norm_train(x, gamma, beta, eps)?;
            stats.update(&mean, &var);
            Ok(y)
        }
        Mode::Infer => tape.batch_norm_infer(
            x,
            gamma,
            beta,
            stats.mean.data(),
            stats.var.data(),
            eps,
        ),
    }
}

/// Tape handles of one GRU's parameters.
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_z: Var,
    pub w_r: Var,
    pub w_n: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_n: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_n: Var,
}

/// Gated recurrent unit, reset applied before the candidate's recurrent map:
///
/// ```text
/// z  = σ(m W_zᵀ + h U_zᵀ + b_z)
/// r  = σ(m W_rᵀ + h U_rᵀ + b_r)
/// n  = tanh(m W_nᵀ + (r∘h) U_nᵀ + b_n)
/// h' = (1 − z)∘n + z∘h
/// ```
pub fn gru_cell<T: Scalar>(tape: &mut Tape<T>, h: Var, m: Var, p: &GruVars) -> Result<Var> {
    if tape.shape(h) != tape.shape(m) {
        return shape_err(
            "gru_cell",
            format!("hidden {:?} vs input {:?}", tape.shape(h), tape.shape(m)),
        );
    }
    let gate = |tape: &mut Tape<T>, w: Var, u: Var, b: Var, h_in: Var| -> Result<Var> {
        let a = tape.linear(m, w, b)?;
        let c = tape.matmul_t(h_in, u)?;
        tape.add(a, c)
    };
    let z = gate(tape, p.w_z, p.u_z, p.b_z, h)?;
    let z = tape.sigmoid(z)?;
    let r = gate(tape, p.w_r, p.u_r, p.b_r, h)?;
    let r = tape.sigmoid(r)?;
    let rh = tape.mul(r, h)?;
    let n = gate(tape, p.w_n, p.u_n, p.b_n, rh)?;
    let n = tape.tanh(n)?;
    // n + z∘(h − n)
    let d = tape.sub(h, n)?;
    let zd = tape.mul(z, d)?;
    tape.add(n, zd)
}
