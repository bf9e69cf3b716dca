use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Detection, Sequence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scenario {
    /// Independent objects at random positions and headings.
    Random,
    /// Objects move horizontally towards the image centre and pass each
    /// other halfway through the sequence.
    Crossing,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Self::Random),
            "crossing" => Ok(Self::Crossing),
            other => Err(Error::Config(format!(
                "scenario must be `random` or `crossing`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::Crossing => "crossing",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub scenario: Scenario,
    pub objects: usize,
    pub frames: usize,
    /// Speed range in pixels per frame.
    pub velocity: (f64, f64),
    /// Side length range of boxes in pixels.
    pub box_size: (f64, f64),
    /// Expected clutter detections per object and frame.
    pub fp_rate: f64,
    /// Probability that a visible object is not detected in a frame.
    pub miss_rate: f64,
    /// Length of one forced detection gap per object (0 = none).
    pub occlusion_gap: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub category: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Random,
            objects: 3,
            frames: 30,
            velocity: (2.0, 20.0),
            box_size: (30.0, 120.0),
            fp_rate: 0.0,
            miss_rate: 0.0,
            occlusion_gap: 0,
            image_width: 1242.0,
            image_height: 375.0,
            category: "Car".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("synth.fp_rate", self.fp_rate), ("synth.miss_rate", self.miss_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && 0.0 <= a && a <= b;
        if !ordered(self.velocity) {
            return Err(Error::Config(format!("invalid velocity range {:?}", self.velocity)));
        }
        if !ordered(self.box_size) || self.box_size.0 <= 0.0 {
            return Err(Error::Config(format!("invalid box size range {:?}", self.box_size)));
        }
        if self.box_size.1 >= self.image_width.min(self.image_height) {
            return Err(Error::Config("boxes must fit inside the image".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

struct Object {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    w: f64,
    h: f64,
}

impl Object {
    fn bbox(&self, t: usize) -> [f64; 4] {
        let x = self.x + self.vx * t as f64;
        let y = self.y + self.vy * t as f64;
        [x, y, x + self.w, y + self.h]
    }
}

/// Constant-velocity objects plus misses and clutter. Returns
/// `(detections, ground truth)`; deterministic in `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Sequence, Sequence)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (iw, ih) = (cfg.image_width, cfg.image_height);
    let objects: Vec<Object> = match cfg.scenario {
        Scenario::Random => (0..cfg.objects)
            .map(|_| {
                let w = uniform(&mut rng, cfg.box_size);
                let h = uniform(&mut rng, cfg.box_size);
                let speed = uniform(&mut rng, cfg.velocity);
                let heading = rng.gen_range(0.0..std::f64::consts::TAU);
                Object {
                    x: rng.gen_range(0.0..iw - w),
                    y: rng.gen_range(0.0..ih - h),
                    vx: speed * heading.cos(),
                    vy: speed * heading.sin(),
                    w,
                    h,
                }
            })
            .collect(),
        Scenario::Crossing => {
            let mid = (cfg.frames.max(1) - 1) as f64 / 2.0;
            let n = cfg.objects as f64;
            (0..cfg.objects)
                .map(|i| {
                    let w = uniform(&mut rng, cfg.box_size);
                    let h = uniform(&mut rng, cfg.box_size);
                    let speed = uniform(&mut rng, cfg.velocity);
                    let dir = if i % 2 == 0 { 1.0 } else { -1.0 };
                    let lane = (i as f64 - (n - 1.0) / 2.0) * 0.6 * cfg.box_size.1;
                    Object {
                        x: iw / 2.0 - w / 2.0 - dir * speed * mid,
                        y: ih / 2.0 - h / 2.0 + lane,
                        vx: dir * speed,
                        vy: 0.0,
                        w,
                        h,
                    }
                })
                .collect()
        }
    };
    let gaps: Vec<Option<usize>> = objects
        .iter()
        .map(|_| {
            let g = cfg.occlusion_gap;
            (g > 0 && cfg.frames > g + 1).then(|| rng.gen_range(1..cfg.frames - g))
        })
        .collect();

    let mut gt = Sequence::new("synth");
    let mut dets = Sequence::new("synth");
    for s in [&mut gt, &mut dets] {
        s.ensure_frames(cfg.frames);
        s.image_width = Some(iw);
        s.image_height = Some(ih);
    }
    for t in 0..cfg.frames {
        for (k, o) in objects.iter().enumerate() {
            let bbox = o.bbox(t);
            gt.frames[t].push(Detection::new_2d(t, Some(k as u64), &cfg.category, bbox, 1.0));
            let occluded = gaps[k].is_some_and(|s| (s..s + cfg.occlusion_gap).contains(&t));
            let missed = cfg.miss_rate > 0.0 && rng.gen_bool(cfg.miss_rate);
            if !occluded && !missed {
                dets.frames[t].push(Detection::new_2d(t, None, &cfg.category, bbox, 1.0));
            }
        }
        for _ in 0..objects.len() {
            if cfg.fp_rate > 0.0 && rng.gen_bool(cfg.fp_rate) {
                let w = uniform(&mut rng, cfg.box_size);
                let h = uniform(&mut rng, cfg.box_size);
                let x = rng.gen_range(0.0..iw - w);
                let y = rng.gen_range(0.0..ih - h);
                let score = rng.gen_range(0.0..1.0);
                dets.frames[t].push(Detection::new_2d(t, None, &cfg.category, [x, y, x + w, y + h], score));
            }
        }
    }
    Ok((dets, gt))
}
