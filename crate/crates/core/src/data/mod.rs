//! KITTI tracking files, training labels, augmentations and synthetic
//! sequences.

mod augment;
mod kitti;
mod labels;
mod synth;

pub use augment::{augment, horizontal_flip, time_reversal, detection_dropout, Augmentation};
pub use kitti::{
    format_line, parse_kitti, parse_kitti_str, parse_line, read_kitti_file, write_kitti, Frame,
    FrameReader, FrameWriter, Vocabulary, DONT_CARE, KITTI_CLASSES,
};
pub use labels::{label_detections, mask_overlaps, LABEL_IOU};
pub use synth::{synth_generate, Scenario, SynthConfig};


/// One row of a KITTI tracking file.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub frame: usize,
    /// `None` is written as `-1` (detections, false positives).
    pub track_id: Option<u64>,
    pub category: String,
    pub truncated: f64,
    pub occluded: f64,
    pub alpha: f64,
    /// `(x1, y1, x2, y2)` in pixels.
    pub bbox: [f64; 4],
    pub dimensions: [f64; 3],
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: f64,
    /// Excluded from training losses; never serialized.
    pub ignore: bool,
}

impl Detection {
    /// A 2-D box with the 3-D columns at their "unknown" values.
    pub fn new_2d(frame: usize, track_id: Option<u64>, category: &str, bbox: [f64; 4], score: f64) -> Self {
        Self {
            frame,
            track_id,
            category: category.to_string(),
            truncated: -1.0,
            occluded: -1.0,
            alpha: -10.0,
            bbox,
            dimensions: [-1.0; 3],
            location: [-1000.0; 3],
            rotation_y: -10.0,
            score,
            ignore: false,
        }
    }

    pub fn width(&self) -> f64 {
        self.bbox[2] - self.bbox[0]
    }

    pub fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }

    /// Zero width and zero height.
    pub fn is_degenerate(&self) -> bool {
        self.width() == 0.0 && self.height() == 0.0
    }
}

/// Frames of one sequence. `frames[t]` holds tracking targets (or
/// hypotheses), `masks[t]` the DontCare and non-target rows used to mask
/// evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub frames: Vec<Vec<Detection>>,
    pub masks: Vec<Vec<Detection>>,
    pub image_width: Option<f64>,
    pub image_height: Option<f64>,
}

impl Sequence {
    pub fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn ensure_frames(&mut self, n: usize) {
        if self.frames.len() < n {
            self.frames.resize_with(n, Vec::new);
            self.masks.resize_with(n, Vec::new);
        }
    }

    pub fn detection_count(&self) -> usize {
        self.frames.iter().map(Vec::len).sum()
    }

    /// Distinct track ids among targets, ascending.
    pub fn track_ids(&self) -> Vec<u64> {
        let ids: std::collections::BTreeSet<u64> =
            self.frames.iter().flatten().filter_map(|d| d.track_id).collect();
        ids.into_iter().collect()
    }

    /// Frames `start..start + len` (clamped), renumbered from 0.
    pub fn slice(&self, start: usize, len: usize) -> Sequence {
        let end = (start + len).min(self.len());
        let start = start.min(end);
        let renumber = |frames: &[Vec<Detection>]| -> Vec<Vec<Detection>> {
            frames
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    f.iter()
                        .map(|d| Detection {
                            frame: i,
                            ..d.clone()
                        })
                        .collect()
                })
                .collect()
        };
        Sequence {
            name: self.name.clone(),
            frames: renumber(&self.frames[start..end]),
            masks: renumber(&self.masks[start..end]),
            image_width: self.image_width,
            image_height: self.image_height,
        }
    }
}

/// Intersection over union of two `(x1, y1, x2, y2)` boxes; 0 for two
/// empty boxes.
pub fn iou(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &[f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
