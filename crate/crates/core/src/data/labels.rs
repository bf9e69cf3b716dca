use super::{iou, Detection, Sequence};
use crate::decoder::{hungarian_solve, FORBIDDEN_COST};
use crate::error::Result;

/// Overlap needed for a detection to count as a true positive.
pub const LABEL_IOU: f64 = 0.5;

/// True when the box overlaps any mask row by more than `threshold`.
pub fn mask_overlaps(bbox: &[f64; 4], masks: &[Detection], threshold: f64) -> bool {
    masks.iter().any(|m| iou(bbox, &m.bbox) > threshold)
}

/// Copy of `dets` where every detection carries the track id of the
/// ground-truth box it is matched to (same category, IoU ≥ `threshold`,
/// one-to-one per frame by minimum total `1 − IoU`). Unmatched detections
/// get `None`; those overlapping a mask region are flagged `ignore`.
pub fn label_detections(dets: &Sequence, gt: &Sequence, threshold: f64) -> Result<Sequence> {
    let mut out = dets.clone();
    for (f, frame) in out.frames.iter_mut().enumerate() {
        let empty = Vec::new();
        let truth = gt.frames.get(f).unwrap_or(&empty);
        let masks = gt.masks.get(f).unwrap_or(&empty);
        for d in frame.iter_mut() {
            d.track_id = None;
            d.ignore = false;
        }
        if !truth.is_empty() && !frame.is_empty() {
            let cost: Vec<Vec<f64>> = frame
                .iter()
                .map(|d| {
                    truth
                        .iter()
                        .map(|g| {
                            let o = iou(&d.bbox, &g.bbox);
                            if d.category == g.category && o >= threshold {
                                1.0 - o
                            } else {
                                FORBIDDEN_COST
                            }
                        })
                        .collect()
                })
                .collect();
            for (i, j) in hungarian_solve(&cost)?.into_iter().enumerate() {
                if let Some(j) = j.filter(|&j| cost[i][j] < FORBIDDEN_COST) {
                    frame[i].track_id = truth[j].track_id;
                }
            }
        }
        for d in frame.iter_mut() {
            if d.track_id.is_none() && mask_overlaps(&d.bbox, masks, threshold) {
                d.ignore = true;
            }
        }
    }
    Ok(out)
}
