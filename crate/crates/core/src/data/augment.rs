use rand::Rng;

use super::{Detection, Sequence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Augmentation {
    TimeReversal,
    /// Drops each true-positive detection with this probability.
    DetectionDropout(f64),
    HorizontalFlip,
}

/// Frame `t` becomes frame `N − 1 − t`.
pub fn time_reversal(seq: &Sequence) -> Sequence {
    let rev = |frames: &[Vec<Detection>]| -> Vec<Vec<Detection>> {
        frames
            .iter()
            .rev()
            .enumerate()
            .map(|(t, f)| f.iter().map(|d| Detection { frame: t, ..d.clone() }).collect())
            .collect()
    };
    Sequence {
        frames: rev(&seq.frames),
        masks: rev(&seq.masks),
        ..seq.clone()
    }
}

/// Mirrors every box about the vertical centre line: `x1' = W − x2`,
/// `x2' = W − x1`.
pub fn horizontal_flip(seq: &Sequence) -> Result<Sequence> {
    let w = seq
        .image_width
        .ok_or_else(|| Error::Config(format!("sequence `{}` has no image width to flip", seq.name)))?;
    let flip = |frames: &[Vec<Detection>]| -> Vec<Vec<Detection>> {
        frames
            .iter()
            .map(|f| {
                f.iter()
                    .map(|d| {
                        let [x1, y1, x2, y2] = d.bbox;
                        Detection {
                            bbox: [w - x2, y1, w - x1, y2],
                            ..d.clone()
                        }
                    })
                    .collect()
            })
            .collect()
    };
    Ok(Sequence {
        frames: flip(&seq.frames),
        masks: flip(&seq.masks),
        ..seq.clone()
    })
}

/// Removes each detection carrying a track id independently with
/// probability `p`.
pub fn detection_dropout<R: Rng>(seq: &Sequence, p: f64, rng: &mut R) -> Result<Sequence> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("dropout probability must lie in [0, 1], got {p}")));
    }
    let mut out = seq.clone();
    for f in out.frames.iter_mut() {
        f.retain(|d| d.track_id.is_none() || !rng.gen_bool(p));
    }
    Ok(out)
}

/// Applies `ops` in order.
pub fn augment<R: Rng>(seq: &Sequence, ops: &[Augmentation], rng: &mut R) -> Result<Sequence> {
    let mut s = seq.clone();
    for op in ops {
        s = match *op {
            Augmentation::TimeReversal => time_reversal(&s),
            Augmentation::HorizontalFlip => horizontal_flip(&s)?,
            Augmentation::DetectionDropout(p) => detection_dropout(&s, p, rng)?,
        };
    }
    Ok(s)
}
