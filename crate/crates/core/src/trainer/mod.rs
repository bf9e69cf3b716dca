//! Mini-sequence training: one accumulated loss, one backward pass and one
//! Adam step per chunk of `cws` frames.

use log::{error, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Tape, Tensor};
use crate::config::RunConfig;
use crate::data::{augment, Augmentation, Sequence};
use crate::decoder::DecodeConfig;
use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, WindowConfig};
use crate::metrics::{evaluate_counts, MotCounts, MATCH_IOU};
use crate::model::{compute_losses, forward, frame_inputs, Carry, LossBundle, ModelConfig, ModelParams, RoundOptions};
use crate::tracker::track_sequence;
use crate::Scalar;

mod checkpoint;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, RngState, CHECKPOINT_MAGIC};


#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Each augmentation fires independently with probability 1/2 per chunk.
    pub time_reversal: bool,
    pub horizontal_flip: bool,
    /// Probability of dropping each true-positive detection (0 = off).
    pub dropout: f64,
    /// Save a checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_interval: usize,
    /// Epochs without validation improvement before stopping (0 = never).
    pub patience: usize,
    /// Rescale gradients to at most this global L2 norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            time_reversal: false,
            horizontal_flip: false,
            dropout: 0.0,
            checkpoint_interval: 0,
            patience: 10,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("train.dropout must lie in [0, 1], got {}", self.dropout)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("train.clip_norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    fn augmentations<R: Rng>(&self, rng: &mut R) -> Vec<Augmentation> {
        let mut ops = Vec::new();
        if self.time_reversal && rng.gen_bool(0.5) {
            ops.push(Augmentation::TimeReversal);
        }
        if self.horizontal_flip && rng.gen_bool(0.5) {
            ops.push(Augmentation::HorizontalFlip);
        }
        if self.dropout > 0.0 {
            ops.push(Augmentation::DetectionDropout(self.dropout));
        }
        ops
    }
}

/// Start of a uniformly drawn chunk of `length` frames.
pub fn sample_start<R: Rng>(frames: usize, length: usize, rng: &mut R) -> usize {
    if frames <= length {
        0
    } else {
        rng.gen_range(0..=frames - length)
    }
}

/// One random contiguous chunk of `length` frames per sequence, renumbered
/// from frame 0. Sequences shorter than `length` yield a single truncated
/// chunk.
pub fn sample_mini_sequences<R: Rng>(seqs: &[Sequence], length: usize, rng: &mut R) -> Result<Vec<Sequence>> {
    if length < 2 {
        return Err(Error::Config(format!("mini-sequence length must be >= 2, got {length}")));
    }
    Ok(seqs
        .iter()
        .map(|s| {
            if s.len() < length {
                warn!("sequence `{}` has {} frames, shorter than mini-sequence length {length}", s.name, s.len());
            }
            let start = sample_start(s.len(), length, rng);
            s.slice(start, length)
        })
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationStats<T> {
    /// Sum of the per-step losses.
    pub loss: LossBundle<T>,
    pub steps: Vec<LossBundle<T>>,
    /// L2 norm of each parameter block's gradient, in parameter order,
    /// before clipping.
    pub grad_norms: Vec<T>,
    /// False when the graph never held a node and no update was made.
    pub stepped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_mota: Option<f64>,
    pub improved: bool,
}

impl std::fmt::Display for EpochLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "epoch={} loss={:.6}", self.epoch, self.mean_loss)?;
        match self.val_mota {
            Some(m) => write!(f, " val_mota={m:.4}"),
            None => write!(f, " val_mota=-"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitSummary {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_mota: Option<f64>,
    pub stopped_early: bool,
}

/// Model, optimizer and sampling state.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub window: WindowConfig,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: ChaCha8Rng,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: ModelConfig, window: WindowConfig, config: TrainConfig) -> Result<Self> {
        let params = ModelParams::new(model, config.seed)?;
        Self::from_params(params, window, config)
    }

    pub fn from_params(params: ModelParams<T>, window: WindowConfig, config: TrainConfig) -> Result<Self> {
        window.validate()?;
        config.validate()?;
        let adam = AdamState::new(params.tensors(), T::lit(config.lr), T::lit(config.beta1), T::lit(config.beta2));
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            params,
            adam,
            window,
            config,
            epoch: 0,
            rng,
        })
    }

    /// Snapshot for saving; `config` supplies the non-model settings.
    pub fn checkpoint(&self, config: &RunConfig) -> Checkpoint {
        let cast = |v: &[Tensor<T>]| v.iter().map(Tensor::cast).collect();
        let mut config = config.clone();
        config.model = self.params.config().clone();
        config.window = self.window.clone();
        config.train = self.config.clone();
        Checkpoint {
            config,
            params: self.params.cast(),
            adam: AdamState {
                lr: self.adam.lr.to_f64_lossy(),
                beta1: self.adam.beta1.to_f64_lossy(),
                beta2: self.adam.beta2.to_f64_lossy(),
                epsilon: self.adam.epsilon.to_f64_lossy(),
                t: self.adam.t,
                m: cast(&self.adam.m),
                v: cast(&self.adam.v),
            },
            epoch: self.epoch,
            rng: RngState::of(&self.rng),
        }
    }

    /// Resumes from `ckpt`, including optimizer and sampling state.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let cast = |v: &[Tensor<f64>]| v.iter().map(Tensor::cast).collect();
        let mut t = Self::from_params(ckpt.params.cast(), ckpt.config.window.clone(), ckpt.config.train.clone())?;
        t.adam = AdamState {
            lr: T::lit(ckpt.adam.lr),
            beta1: T::lit(ckpt.adam.beta1),
            beta2: T::lit(ckpt.adam.beta2),
            epsilon: T::lit(ckpt.adam.epsilon),
            t: ckpt.adam.t,
            m: cast(&ckpt.adam.m),
            v: cast(&ckpt.adam.v),
        };
        t.epoch = ckpt.epoch;
        t.rng = ckpt.rng.restore();
        Ok(t)
    }

    /// Runs the whole chunk through the graph, summing the loss of every
    /// round, then takes one optimizer step. `mini` must carry labels
    /// (track ids and ignore flags) on its detections.
    pub fn train_iteration(&mut self, mini: &Sequence) -> Result<IterationStats<T>> {
        let mut stats = IterationStats::default();
        let tp = self.params.config().tp_classification;
        let inputs = |t: usize, p: &ModelParams<T>| frame_inputs::<T>(&mini.frames[t], p.config(), true);
        if mini.is_empty() {
            return Ok(stats);
        }

        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let mut carry = Carry::new();
        let first = inputs(0, &self.params);
        let second = (mini.len() > 1).then(|| inputs(1, &self.params));
        let mut graph = DynamicGraph::initialize_graph(self.window.clone(), first, second)?;
        let mut total = None;
        let mut any_nodes = false;
        for t in 1..mini.len().max(2) {
            if t >= 2 {
                graph.update_graph(t, inputs(t, &self.params), |_, _| {})?;
            }
            any_nodes |= !graph.is_empty();
            let out = forward(&mut tape, &mut self.params, &vars, &mut graph, &mut carry, RoundOptions::train())?;
            let l = compute_losses(&mut tape, &graph, &out, tp)?;
            let bundle = l.values(&tape);
            if !bundle.total.is_finite() {
                error!("non-finite loss at frame {t} of `{}`; graph:\n{}", mini.name, graph.dump());
                return Err(Error::NonFinite { op: "train_iteration" });
            }
            stats.loss += bundle;
            stats.steps.push(bundle);
            total = Some(match total {
                None => l.total,
                Some(acc) => tape.add(acc, l.total)?,
            });
            if t >= 2 {
                graph.prune_graph(tp);
            }
        }
        if !any_nodes {
            return Ok(stats);
        }

        let grads = tape.backward(total.expect("at least one round"))?;
        let mut g: Vec<Tensor<T>> = vars
            .all()
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, p)| grads.get_or_zeros(v, p.rows(), p.cols()))
            .collect();
        if g.iter().any(|t| !t.is_finite()) {
            error!("non-finite gradient on `{}`; graph:\n{}", mini.name, graph.dump());
            return Err(Error::NonFinite { op: "train_iteration" });
        }
        stats.grad_norms = g.iter().map(|t| t.sum_sq().sqrt()).collect();
        if let Some(c) = self.config.clip_norm {
            let norm = stats.grad_norms.iter().fold(T::zero(), |a, &n| a + n * n).sqrt();
            let c = T::lit(c);
            if norm > c {
                let s = c / norm;
                for t in g.iter_mut() {
                    *t = t.map(|x| x * s);
                }
            }
        }
        self.adam.step(&mut self.params.tensors_mut(), &g)?;
        stats.stepped = true;
        Ok(stats)
    }

    /// One pass over `train` (labeled detection sequences) in random order,
    /// one augmented chunk per sequence. Returns the mean chunk loss.
    pub fn run_epoch(&mut self, train: &[Sequence]) -> Result<f64> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = 0.0;
        for &i in &order {
            let chunk = sample_mini_sequences(std::slice::from_ref(&train[i]), self.window.cws, &mut self.rng)?
                .pop()
                .expect("one chunk");
            let ops = self.config.augmentations(&mut self.rng);
            let chunk = augment(&chunk, &ops, &mut self.rng)?;
            sum += self.train_iteration(&chunk)?.loss.total.to_f64_lossy();
        }
        self.epoch += 1;
        Ok(if order.is_empty() { 0.0 } else { sum / order.len() as f64 })
    }

    /// Pooled CLEAR-MOT counts of the current model over `(detections,
    /// ground truth)` pairs.
    pub fn validate(&self, val: &[(Sequence, Sequence)], decode: &DecodeConfig) -> Result<MotCounts> {
        let mut counts = MotCounts::default();
        for (dets, gt) in val {
            let hyp = track_sequence(&self.params, &self.window, decode, dets)?;
            counts.merge(&evaluate_counts(gt, &hyp, MATCH_IOU)?);
        }
        Ok(counts)
    }

    /// Trains until `config.epochs` or early stopping. With validation data
    /// the parameters of the best epoch are restored at the end.
    /// `on_epoch` sees the trainer after every epoch.
    pub fn fit(
        &mut self,
        train: &[Sequence],
        val: &[(Sequence, Sequence)],
        decode: &DecodeConfig,
        mut on_epoch: impl FnMut(&Self, &EpochLog) -> Result<()>,
    ) -> Result<FitSummary> {
        let mut best: Option<(usize, f64, ModelParams<T>)> = None;
        let mut summary = FitSummary {
            epochs_run: 0,
            best_epoch: None,
            best_mota: None,
            stopped_early: false,
        };
        while self.epoch < self.config.epochs {
            let mean_loss = self.run_epoch(train)?;
            summary.epochs_run += 1;
            let val_mota = if val.is_empty() {
                None
            } else {
                Some(self.validate(val, decode)?.report().mota)
            };
            let improved = match (val_mota, &best) {
                (Some(m), Some((_, b, _))) => m > *b,
                (Some(_), None) => true,
                (None, _) => false,
            };
            if improved {
                best = Some((self.epoch, val_mota.expect("validated"), self.params.clone()));
            }
            on_epoch(
                self,
                &EpochLog {
                    epoch: self.epoch,
                    mean_loss,
                    val_mota,
                    improved,
                },
            )?;
            if let Some((e, _, _)) = &best {
                if self.config.patience > 0 && self.epoch - e >= self.config.patience {
                    summary.stopped_early = true;
                    break;
                }
            }
        }
        if let Some((e, m, p)) = best {
            summary.best_epoch = Some(e);
            summary.best_mota = Some(m);
            self.params = p;
        }
        Ok(summary)
    }
}
