//! Run configuration as flat `section.key=value` text.

use std::path::Path;
use std::str::FromStr;

use crate::data::{Scenario, SynthConfig};
use crate::decoder::{DecodeConfig, DecodeMethod};
use crate::error::{Error, Result};
use crate::graph::WindowConfig;
use crate::model::{AssocUpdate, ModelConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Used for flips when a sequence does not record its image size.
    pub image_width: f64,
    pub image_height: f64,
    /// Sequence names held out for validation.
    pub validation: Vec<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            image_width: 1242.0,
            image_height: 375.0,
            validation: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub window: WindowConfig,
    pub model: ModelConfig,
    pub decode: DecodeConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub synth: SynthConfig,
    /// Number of sequences `synth` writes.
    pub synth_sequences: usize,
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V>
where
    V::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("invalid value `{value}` for `{key}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}`: expected true or false"))),
    }
}

fn parse_range(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::Config(format!("invalid value `{value}` for `{key}`: expected `lo,hi`")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

impl RunConfig {
    /// Defaults overridden by `text`. Blank lines and lines starting with
    /// `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self {
            synth_sequences: 1,
            ..Self::default()
        };
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_assignment(line).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        self.validate()
    }

    /// Applies one `key=value` override.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected `key=value`, got `{assignment}`")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "window.cws" => self.window.cws = parse(k, v)?,
            "window.rws" => self.window.rws = parse(k, v)?,
            "window.prune_threshold" => self.window.prune_threshold = parse(k, v)?,
            "window.prune_trigger" => self.window.prune_trigger = parse(k, v)?,
            "window.pair_threshold" => self.window.pair_threshold = parse(k, v)?,
            "model.hidden_size" => self.model.hidden_size = parse(k, v)?,
            "model.assoc_update" => self.model.assoc_update = AssocUpdate::from_str(v)?,
            "model.heads" => self.model.heads = parse(k, v)?,
            "model.tp_classification" => self.model.tp_classification = parse_bool(k, v)?,
            "model.categories" => self.model.categories = parse_list(v),
            "decode.method" => self.decode.method = DecodeMethod::from_str(v)?,
            "decode.assoc_threshold" => self.decode.assoc_threshold = parse(k, v)?,
            "decode.tp_threshold" => self.decode.tp_threshold = parse(k, v)?,
            "train.epochs" => self.train.epochs = parse(k, v)?,
            "train.lr" => self.train.lr = parse(k, v)?,
            "train.beta1" => self.train.beta1 = parse(k, v)?,
            "train.beta2" => self.train.beta2 = parse(k, v)?,
            "train.seed" => self.train.seed = parse(k, v)?,
            "train.time_reversal" => self.train.time_reversal = parse_bool(k, v)?,
            "train.horizontal_flip" => self.train.horizontal_flip = parse_bool(k, v)?,
            "train.dropout" => self.train.dropout = parse(k, v)?,
            "train.checkpoint_interval" => self.train.checkpoint_interval = parse(k, v)?,
            "train.patience" => self.train.patience = parse(k, v)?,
            "train.clip_norm" => {
                let c: f64 = parse(k, v)?;
                self.train.clip_norm = (c != 0.0).then_some(c);
            }
            "data.image_width" => self.data.image_width = parse(k, v)?,
            "data.image_height" => self.data.image_height = parse(k, v)?,
            "data.validation" => self.data.validation = parse_list(v),
            "synth.scenario" => self.synth.scenario = Scenario::from_str(v)?,
            "synth.objects" => self.synth.objects = parse(k, v)?,
            "synth.frames" => self.synth.frames = parse(k, v)?,
            "synth.velocity" => self.synth.velocity = parse_range(k, v)?,
            "synth.box_size" => self.synth.box_size = parse_range(k, v)?,
            "synth.fp_rate" => self.synth.fp_rate = parse(k, v)?,
            "synth.miss_rate" => self.synth.miss_rate = parse(k, v)?,
            "synth.occlusion_gap" => self.synth.occlusion_gap = parse(k, v)?,
            "synth.image_width" => self.synth.image_width = parse(k, v)?,
            "synth.image_height" => self.synth.image_height = parse(k, v)?,
            "synth.category" => self.synth.category = v.to_string(),
            "synth.seed" => self.synth.seed = parse(k, v)?,
            "synth.sequences" => self.synth_sequences = parse(k, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let w = &self.window;
        let m = &self.model;
        let d = &self.decode;
        let t = &self.train;
        let s = &self.synth;
        vec![
            ("window.cws", w.cws.to_string()),
            ("window.rws", w.rws.to_string()),
            ("window.prune_threshold", w.prune_threshold.to_string()),
            ("window.prune_trigger", w.prune_trigger.to_string()),
            ("window.pair_threshold", w.pair_threshold.to_string()),
            ("model.hidden_size", m.hidden_size.to_string()),
            ("model.assoc_update", m.assoc_update.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.tp_classification", m.tp_classification.to_string()),
            ("model.categories", m.categories.join(",")),
            ("decode.method", d.method.to_string()),
            ("decode.assoc_threshold", d.assoc_threshold.to_string()),
            ("decode.tp_threshold", d.tp_threshold.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.seed", t.seed.to_string()),
            ("train.time_reversal", t.time_reversal.to_string()),
            ("train.horizontal_flip", t.horizontal_flip.to_string()),
            ("train.dropout", t.dropout.to_string()),
            ("train.checkpoint_interval", t.checkpoint_interval.to_string()),
            ("train.patience", t.patience.to_string()),
            ("train.clip_norm", t.clip_norm.unwrap_or(0.0).to_string()),
            ("data.image_width", self.data.image_width.to_string()),
            ("data.image_height", self.data.image_height.to_string()),
            ("data.validation", self.data.validation.join(",")),
            ("synth.scenario", s.scenario.to_string()),
            ("synth.objects", s.objects.to_string()),
            ("synth.frames", s.frames.to_string()),
            ("synth.velocity", format!("{},{}", s.velocity.0, s.velocity.1)),
            ("synth.box_size", format!("{},{}", s.box_size.0, s.box_size.1)),
            ("synth.fp_rate", s.fp_rate.to_string()),
            ("synth.miss_rate", s.miss_rate.to_string()),
            ("synth.occlusion_gap", s.occlusion_gap.to_string()),
            ("synth.image_width", s.image_width.to_string()),
            ("synth.image_height", s.image_height.to_string()),
            ("synth.category", s.category.clone()),
            ("synth.seed", s.seed.to_string()),
            ("synth.sequences", self.synth_sequences.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.model.validate()?;
        self.decode.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if !(self.data.image_width > 0.0 && self.data.image_height > 0.0) {
            return Err(Error::Config("data.image_width and data.image_height must be positive".into()));
        }
        Ok(())
    }
}
