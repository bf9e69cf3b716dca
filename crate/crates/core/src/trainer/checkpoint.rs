//! Binary checkpoints.
//!
//! ```text
//! "TRACKMPNN-CKPT v1\n"
//! u64 length, UTF-8 configuration text (`key=value` lines)
//! u64 completed epochs
//! u64 Adam step count, f64 lr, beta1, beta2, epsilon
//! [u8; 32] RNG seed, u64 RNG stream, u128 RNG word position
//! u64 array count, then per array:
//!   u32 name length, name, u32 rank, u64 dims[rank], f64 values (row-major)
//! ```
//!
//! All integers and floats are little-endian. Arrays are the model
//! parameters by name, `bn.running_mean`, `bn.running_var`, and the Adam
//! moments as `adam.m.<name>` / `adam.v.<name>`.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, RunningStats, Tensor};
use crate::config::RunConfig;
use crate::error::{shape_err, Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const CHECKPOINT_MAGIC: &[u8] = b"TRACKMPNN-CKPT v1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn of(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut r = ChaCha8Rng::from_seed(self.seed);
        r.set_stream(self.stream);
        r.set_word_pos(self.word_pos);
        r
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub params: ModelParams<f64>,
    pub adam: AdamState<f64>,
    pub epoch: usize,
    pub rng: RngState,
}

struct Arrays(Vec<(String, Tensor<f64>)>);

impl Checkpoint {
    fn arrays(&self) -> Arrays {
        let mut out: Vec<(String, Tensor<f64>)> = Vec::new();
        for (n, t) in self.params.names().iter().zip(self.params.tensors()) {
            out.push((n.clone(), t.clone()));
        }
        out.push(("bn.running_mean".into(), self.params.bn_stats.mean.clone()));
        out.push(("bn.running_var".into(), self.params.bn_stats.var.clone()));
        for (n, m) in self.params.names().iter().zip(&self.adam.m) {
            out.push((format!("adam.m.{n}"), m.clone()));
        }
        for (n, v) in self.params.names().iter().zip(&self.adam.v) {
            out.push((format!("adam.v.{n}"), v.clone()));
        }
        Arrays(out)
    }

    /// Re-checks every array against `model`, e.g. when a caller overrides
    /// the stored model configuration. Errors name the first array whose
    /// shape differs.
    pub fn with_model_config(self, model: &ModelConfig) -> Result<Self> {
        let mut config = self.config.clone();
        config.model = model.clone();
        let arrays = self.arrays().0.into_iter().collect();
        let (params, adam) = assemble(&config, arrays, &self.adam)?;
        Ok(Self {
            config,
            params,
            adam,
            ..self
        })
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let text = ckpt.config.to_text();
    put_u64(w, text.len() as u64)?;
    w.write_all(text.as_bytes())?;
    put_u64(w, ckpt.epoch as u64)?;
    put_u64(w, ckpt.adam.t)?;
    for v in [ckpt.adam.lr, ckpt.adam.beta1, ckpt.adam.beta2, ckpt.adam.epsilon] {
        put_f64(w, v)?;
    }
    w.write_all(&ckpt.rng.seed)?;
    put_u64(w, ckpt.rng.stream)?;
    w.write_all(&ckpt.rng.word_pos.to_le_bytes())?;
    let arrays = ckpt.arrays().0;
    put_u64(w, arrays.len() as u64)?;
    for (name, t) in &arrays {
        put_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        put_u32(w, 2)?;
        put_u64(w, t.rows() as u64)?;
        put_u64(w, t.cols() as u64)?;
        for &x in t.data() {
            put_f64(w, x)?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Checkpoint(format!("truncated while reading {what}")),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }

    fn vec(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut b)?;
        if b.len() != n {
            return Err(Error::Checkpoint(format!("truncated while reading {what}")));
        }
        Ok(b)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(what)?))
    }
}

/// Upper bound on any single length field, to fail fast on garbage.
const MAX_LEN: u64 = 1 << 32;

pub fn read_checkpoint(r: impl Read) -> Result<Checkpoint> {
    let mut r = Reader { inner: r };
    let magic = r.vec(CHECKPOINT_MAGIC.len(), "header").map_err(|_| {
        Error::Checkpoint("missing or unsupported header, expected TRACKMPNN-CKPT v1".into())
    })?;
    if magic != CHECKPOINT_MAGIC {
        let shown = String::from_utf8_lossy(&magic);
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version `{}`, expected TRACKMPNN-CKPT v1",
            shown.trim_end()
        )));
    }
    let n = r.u64("configuration length")?;
    if n > MAX_LEN {
        return Err(Error::Checkpoint(format!("implausible configuration length {n}")));
    }
    let text = String::from_utf8(r.vec(n as usize, "configuration")?)
        .map_err(|_| Error::Checkpoint("configuration is not UTF-8".into()))?;
    let config = RunConfig::parse(&text)?;
    let epoch = r.u64("epoch")? as usize;
    let t = r.u64("optimizer step")?;
    let lr = r.f64("optimizer")?;
    let beta1 = r.f64("optimizer")?;
    let beta2 = r.f64("optimizer")?;
    let epsilon = r.f64("optimizer")?;
    let rng = RngState {
        seed: r.bytes("rng state")?,
        stream: r.u64("rng state")?,
        word_pos: u128::from_le_bytes(r.bytes("rng state")?),
    };
    let count = r.u64("array count")?;
    if count > MAX_LEN {
        return Err(Error::Checkpoint(format!("implausible array count {count}")));
    }
    let mut arrays = HashMap::new();
    for _ in 0..count {
        let len = r.u32("array name")? as usize;
        let name = String::from_utf8(r.vec(len, "array name")?)
            .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
        let rank = r.u32(&name)? as usize;
        let (rows, cols) = match rank {
            1 => (1, r.u64(&name)?),
            2 => (r.u64(&name)?, r.u64(&name)?),
            _ => return Err(Error::Checkpoint(format!("array `{name}` has unsupported rank {rank}"))),
        };
        let numel = rows.checked_mul(cols).filter(|&n| n <= MAX_LEN).ok_or_else(|| {
            Error::Checkpoint(format!("array `{name}` has implausible shape {rows}x{cols}"))
        })?;
        let mut data = Vec::with_capacity(numel as usize);
        for _ in 0..numel {
            data.push(r.f64(&name)?);
        }
        let (rows, cols) = (rows as usize, cols as usize);
        arrays.insert(name, Tensor::from_vec(rows, cols, data)?);
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after the last array".into()));
    }
    let template = AdamState {
        lr,
        beta1,
        beta2,
        epsilon,
        t,
        m: Vec::new(),
        v: Vec::new(),
    };
    let (params, adam) = assemble(&config, arrays, &template)?;
    Ok(Checkpoint {
        config,
        params,
        adam,
        epoch,
        rng,
    })
}

fn assemble(
    config: &RunConfig,
    mut arrays: HashMap<String, Tensor<f64>>,
    template: &AdamState<f64>,
) -> Result<(ModelParams<f64>, AdamState<f64>)> {
    let mut params = ModelParams::<f64>::new(config.model.clone(), 0)?;
    let mut take = |name: &str| {
        arrays
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    };
    let names: Vec<String> = params.names().to_vec();
    for n in &names {
        params.set_named(n, take(n)?)?;
    }
    let h = config.model.hidden_size;
    let mut stats = RunningStats::new(h);
    for (name, slot) in [("bn.running_mean", &mut stats.mean), ("bn.running_var", &mut stats.var)] {
        let t = take(name)?;
        if t.shape() != (1, h) {
            return shape_err("load_checkpoint", format!("array `{name}` has shape {:?}, expected {:?}", t.shape(), (1, h)));
        }
        *slot = t;
    }
    params.bn_stats = stats;
    let mut adam = template.clone();
    adam.m.clear();
    adam.v.clear();
    for (prefix, out) in [("adam.m.", &mut adam.m), ("adam.v.", &mut adam.v)] {
        for (n, p) in names.iter().zip(params.tensors()) {
            let name = format!("{prefix}{n}");
            let t = take(&name)?;
            if t.shape() != p.shape() {
                return shape_err("load_checkpoint", format!("array `{name}` has shape {:?}, expected {:?}", t.shape(), p.shape()));
            }
            out.push(t);
        }
    }
    if let Some(extra) = arrays.keys().min() {
        return Err(Error::Checkpoint(format!("unexpected array `{extra}`")));
    }
    Ok((params, adam))
}
