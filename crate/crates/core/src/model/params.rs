use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AssocUpdate, ModelConfig};
use crate::autodiff::{GruVars, RunningStats, Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::Scalar;

/// Initial detection readout bias: σ(4.595) ≈ 0.99.
pub const DET_READOUT_BIAS: f64 = 4.595;
/// Initial association readout bias: σ(−4.595) ≈ 0.01.
pub const ASSOC_READOUT_BIAS: f64 = -4.595;
/// Readout weights start this many times smaller than other weights so the
/// initial probabilities stay at the bias values.
pub const READOUT_INIT_SCALE: f64 = 1e-3;

#[derive(Clone, Copy, Debug)]
enum Init {
    Uniform,
    /// Uniform in `±scale/√fan_in`.
    Scaled(f64),
    Zeros,
    Const(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruSlots {
    pub w_z: usize,
    pub w_r: usize,
    pub w_n: usize,
    pub u_z: usize,
    pub u_r: usize,
    pub u_n: usize,
    pub b_z: usize,
    pub b_r: usize,
    pub b_n: usize,
}

impl GruSlots {
    pub fn vars(&self, v: &ParamVars) -> GruVars {
        GruVars {
            w_z: v.get(self.w_z),
            w_r: v.get(self.w_r),
            w_n: v.get(self.w_n),
            u_z: v.get(self.u_z),
            u_r: v.get(self.u_r),
            u_n: v.get(self.u_n),
            b_z: v.get(self.b_z),
            b_r: v.get(self.b_r),
            b_n: v.get(self.b_n),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionSlots {
    /// Shared projection `W^h` of the head.
    pub w: usize,
    /// Attention vector `a` (stored as `1 × H`).
    pub a: usize,
}

/// Positions of every learnable array inside [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub enc_w1: usize,
    pub enc_b1: usize,
    pub bn_gamma: usize,
    pub bn_beta: usize,
    pub enc_w2: usize,
    pub enc_b2: usize,
    pub det_gru: GruSlots,
    pub attention: Vec<AttentionSlots>,
    pub det_out_w: usize,
    pub det_out_b: usize,
    pub assoc_msg_w: usize,
    pub assoc_msg_b: usize,
    pub assoc_gru: GruSlots,
    pub assoc_out_w: usize,
    pub assoc_out_b: usize,
}

struct Builder {
    specs: Vec<(String, usize, usize, Init)>,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> usize {
        self.specs.push((name.into(), rows, cols, init));
        self.specs.len() - 1
    }

    fn gru(&mut self, prefix: &str, h: usize) -> GruSlots {
        let mut w = |n: &str, r, c, i| self.add(format!("{prefix}.{n}"), r, c, i);
        GruSlots {
            w_z: w("w_z", h, h, Init::Uniform),
            w_r: w("w_r", h, h, Init::Uniform),
            w_n: w("w_n", h, h, Init::Uniform),
            u_z: w("u_z", h, h, Init::Uniform),
            u_r: w("u_r", h, h, Init::Uniform),
            u_n: w("u_n", h, h, Init::Uniform),
            b_z: w("b_z", 1, h, Init::Zeros),
            b_r: w("b_r", 1, h, Init::Zeros),
            b_n: w("b_n", 1, h, Init::Zeros),
        }
    }
}

fn build_layout(config: &ModelConfig) -> (Layout, Vec<(String, usize, usize, Init)>) {
    let h = config.hidden_size;
    let f = config.feature_width();
    let mut b = Builder { specs: Vec::new() };
    let enc_w1 = b.add("det_enc.w1", h, f, Init::Uniform);
    let enc_b1 = b.add("det_enc.b1", 1, h, Init::Zeros);
    let bn_gamma = b.add("det_enc.bn_gamma", 1, h, Init::Const(1.0));
    let bn_beta = b.add("det_enc.bn_beta", 1, h, Init::Zeros);
    let enc_w2 = b.add("det_enc.w2", h, h, Init::Uniform);
    let enc_b2 = b.add("det_enc.b2", 1, h, Init::Zeros);
    let det_gru = b.gru("det_gru", h);
    let attention = (0..config.heads)
        .map(|k| AttentionSlots {
            w: b.add(format!("attn.{k}.w"), h, h, Init::Uniform),
            a: b.add(format!("attn.{k}.a"), 1, h, Init::Uniform),
        })
        .collect();
    let det_out_w = b.add("det_out.w", 1, h, Init::Scaled(READOUT_INIT_SCALE));
    let det_out_b = b.add("det_out.b", 1, 1, Init::Const(DET_READOUT_BIAS));
    let msg_in = match config.assoc_update {
        AssocUpdate::Difference => h,
        AssocUpdate::Concat => 2 * h,
    };
    let assoc_msg_w = b.add("assoc_msg.w", h, msg_in, Init::Uniform);
    let assoc_msg_b = b.add("assoc_msg.b", 1, h, Init::Zeros);
    let assoc_gru = b.gru("assoc_gru", h);
    let assoc_out_w = b.add("assoc_out.w", 1, h, Init::Scaled(READOUT_INIT_SCALE));
    let assoc_out_b = b.add("assoc_out.b", 1, 1, Init::Const(ASSOC_READOUT_BIAS));
    let layout = Layout {
        enc_w1,
        enc_b1,
        bn_gamma,
        bn_beta,
        enc_w2,
        enc_b2,
        det_gru,
        attention,
        det_out_w,
        det_out_b,
        assoc_msg_w,
        assoc_msg_b,
        assoc_gru,
        assoc_out_w,
        assoc_out_b,
    };
    (layout, b.specs)
}

/// Every learnable array of the network plus the encoder's batch-norm
/// running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    pub bn_stats: RunningStats<T>,
}

impl<T: Scalar> ModelParams<T> {
    /// Weight matrices uniform in `±1/√fan_in`, non-readout biases zero,
    /// readout weights uniform in `±10⁻³/√fan_in` and readout biases `±4.595`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, rows, cols, init) in specs {
            let t = match init {
                Init::Zeros => Tensor::zeros(rows, cols),
                Init::Const(c) => Tensor::filled(rows, cols, T::lit(c)),
                Init::Uniform | Init::Scaled(_) => {
                    let scale = if let Init::Scaled(s) = init { s } else { 1.0 };
                    let bound = scale / (cols as f64).sqrt();
                    let data = (0..rows * cols)
                        .map(|_| T::lit(rng.gen_range(-bound..bound)))
                        .collect();
                    Tensor::from_vec(rows, cols, data)?
                }
            };
            names.push(name);
            tensors.push(t);
        }
        let bn_stats = RunningStats::new(config.hidden_size);
        Ok(Self {
            config,
            layout,
            names,
            tensors,
            bn_stats,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.tensors.iter_mut().collect()
    }

    pub fn get(&self, slot: usize) -> &Tensor<T> {
        &self.tensors[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor<T> {
        &mut self.tensors[slot]
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Replaces one array, checking its shape against the layout.
    pub fn set_named(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let Some(slot) = self.slot(name) else {
            return shape_err("ModelParams::set_named", format!("unknown array `{name}`"));
        };
        if self.tensors[slot].shape() != value.shape() {
            return shape_err(
                "ModelParams::set_named",
                format!(
                    "array `{name}` expects {:?}, got {:?}",
                    self.tensors[slot].shape(),
                    value.shape()
                ),
            );
        }
        self.tensors[slot] = value;
        Ok(())
    }

    /// Same parameters in another scalar type.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            bn_stats: RunningStats {
                mean: self.bn_stats.mean.cast(),
                var: self.bn_stats.var.cast(),
                momentum: U::lit(self.bn_stats.momentum.to_f64_lossy()),
            },
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every array on `tape` as a trainable leaf.
    pub fn register(&self, tape: &mut Tape<T>) -> ParamVars {
        ParamVars {
            vars: self.tensors.iter().map(|t| tape.param(t.clone())).collect(),
        }
    }
}

/// Tape handles of the parameters, indexed like [`ModelParams::tensors`].
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
}

impl ParamVars {
    pub fn get(&self, slot: usize) -> Var {
        self.vars[slot]
    }

    pub fn all(&self) -> &[Var] {
        &self.vars
    }
}
