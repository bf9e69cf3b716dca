//! CLEAR-MOT evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::data::{iou, mask_overlaps, Sequence};
use crate::decoder::{hungarian_solve, FORBIDDEN_COST};
use crate::error::{Error, Result};


pub const MOSTLY_TRACKED: f64 = 0.8;
pub const MOSTLY_LOST: f64 = 0.2;
pub const MATCH_IOU: f64 = 0.5;

/// Raw counts; reports are derived from them so sequences can be pooled.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MotCounts {
    pub gt: usize,
    pub matches: usize,
    pub fp: usize,
    pub fn_: usize,
    pub id_switches: usize,
    pub fragmentations: usize,
    pub iou_sum: f64,
    pub gt_tracks: usize,
    pub mostly_tracked: usize,
    pub mostly_lost: usize,
}

impl MotCounts {
    pub fn merge(&mut self, o: &MotCounts) {
        self.gt += o.gt;
        self.matches += o.matches;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.id_switches += o.id_switches;
        self.fragmentations += o.fragmentations;
        self.iou_sum += o.iou_sum;
        self.gt_tracks += o.gt_tracks;
        self.mostly_tracked += o.mostly_tracked;
        self.mostly_lost += o.mostly_lost;
    }

    pub fn report(&self) -> MotReport {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let motp_overlap = if self.matches == 0 {
            0.0
        } else {
            self.iou_sum / self.matches as f64
        };
        MotReport {
            mota: 1.0 - (self.fn_ + self.fp + self.id_switches) as f64 / self.gt.max(1) as f64,
            motp_distance: if self.matches == 0 { 0.0 } else { 1.0 - motp_overlap },
            motp_overlap,
            mostly_tracked: ratio(self.mostly_tracked, self.gt_tracks),
            mostly_lost: ratio(self.mostly_lost, self.gt_tracks),
            id_switches: self.id_switches,
            fragmentations: self.fragmentations,
            fp: self.fp,
            fn_: self.fn_,
            gt_count: self.gt,
            matches: self.matches,
            gt_tracks: self.gt_tracks,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotReport {
    pub mota: f64,
    /// Mean `1 − IoU` over matches.
    pub motp_distance: f64,
    /// Mean IoU over matches.
    pub motp_overlap: f64,
    pub mostly_tracked: f64,
    pub mostly_lost: f64,
    pub id_switches: usize,
    pub fragmentations: usize,
    pub fp: usize,
    pub fn_: usize,
    pub gt_count: usize,
    pub matches: usize,
    pub gt_tracks: usize,
}

impl MotReport {
    /// One `key=value` line per metric, keys prefixed with `prefix.` when
    /// non-empty.
    pub fn to_kv(&self, prefix: &str) -> String {
        let p = if prefix.is_empty() {
            String::new()
        } else {
            format!("{prefix}.")
        };
        let mut s = String::new();
        let _ = writeln!(s, "{p}mota={}", self.mota);
        let _ = writeln!(s, "{p}motp_distance={}", self.motp_distance);
        let _ = writeln!(s, "{p}motp_overlap={}", self.motp_overlap);
        let _ = writeln!(s, "{p}mt={}", self.mostly_tracked);
        let _ = writeln!(s, "{p}ml={}", self.mostly_lost);
        let _ = writeln!(s, "{p}ids={}", self.id_switches);
        let _ = writeln!(s, "{p}frag={}", self.fragmentations);
        let _ = writeln!(s, "{p}fp={}", self.fp);
        let _ = writeln!(s, "{p}fn={}", self.fn_);
        let _ = writeln!(s, "{p}gt={}", self.gt_count);
        s
    }
}

/// Aligned text table, one row per `(name, report)`.
pub fn format_table(rows: &[(String, MotReport)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(8);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6} {:>7} {:>7} {:>7}",
        "sequence", "MOTA", "MOTP", "MOTP-IoU", "MT", "ML", "IDS", "FRAG", "FP", "FN", "GT"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$} {:>8.4} {:>8.4} {:>8.4} {:>6.3} {:>6.3} {:>6} {:>6} {:>7} {:>7} {:>7}",
            name,
            r.mota,
            r.motp_distance,
            r.motp_overlap,
            r.mostly_tracked,
            r.mostly_lost,
            r.id_switches,
            r.fragmentations,
            r.fp,
            r.fn_,
            r.gt_count
        );
    }
    s
}

/// CLEAR-MOT counts of hypothesis tracks `hyp` against ground truth `gt`.
///
/// Per frame, correspondences from the previous frame are kept while their
/// IoU stays at or above `threshold`; the rest are matched by minimum total
/// `1 − IoU` among same-category pairs. Unmatched hypotheses overlapping a
/// mask region by more than `threshold` are not counted as false positives.
pub fn evaluate_counts(gt: &Sequence, hyp: &Sequence, threshold: f64) -> Result<MotCounts> {
    let n = gt.len().max(hyp.len());
    let empty = Vec::new();
    let mut c = MotCounts::default();
    // last hypothesis matched to each GT track
    let mut last: HashMap<u64, u64> = HashMap::new();
    // per GT track, the matched hypothesis (or None) in each frame it exists
    let mut history: BTreeMap<u64, Vec<Option<u64>>> = BTreeMap::new();

    for t in 0..n {
        let g = gt.frames.get(t).unwrap_or(&empty);
        let h = hyp.frames.get(t).unwrap_or(&empty);
        let masks = gt.masks.get(t).unwrap_or(&empty);
        let mut g_ids = Vec::with_capacity(g.len());
        for d in g {
            g_ids.push(d.track_id.ok_or_else(|| {
                Error::Contract(format!("ground truth row in frame {t} has no track id"))
            })?);
        }
        let mut h_ids = Vec::with_capacity(h.len());
        for d in h {
            h_ids.push(d.track_id.ok_or_else(|| {
                Error::Contract(format!("hypothesis row in frame {t} has no track id"))
            })?);
        }
        let overlap = |i: usize, j: usize| {
            if g[i].category == h[j].category {
                iou(&g[i].bbox, &h[j].bbox)
            } else {
                0.0
            }
        };
        let mut g_match: Vec<Option<usize>> = vec![None; g.len()];
        let mut h_used = vec![false; h.len()];

        // keep previous correspondences
        for i in 0..g.len() {
            if let Some(&prev) = last.get(&g_ids[i]) {
                if let Some(j) = (0..h.len()).find(|&j| !h_used[j] && h_ids[j] == prev) {
                    if overlap(i, j) >= threshold {
                        g_match[i] = Some(j);
                        h_used[j] = true;
                    }
                }
            }
        }
        // match the rest
        let rows: Vec<usize> = (0..g.len()).filter(|&i| g_match[i].is_none()).collect();
        let cols: Vec<usize> = (0..h.len()).filter(|&j| !h_used[j]).collect();
        if !rows.is_empty() && !cols.is_empty() {
            let cost: Vec<Vec<f64>> = rows
                .iter()
                .map(|&i| {
                    cols.iter()
                        .map(|&j| {
                            let o = overlap(i, j);
                            if o >= threshold {
                                1.0 - o
                            } else {
                                FORBIDDEN_COST
                            }
                        })
                        .collect()
                })
                .collect();
            for (r, sol) in hungarian_solve(&cost)?.into_iter().enumerate() {
                if let Some(k) = sol.filter(|&k| cost[r][k] < FORBIDDEN_COST) {
                    let (i, j) = (rows[r], cols[k]);
                    g_match[i] = Some(j);
                    h_used[j] = true;
                    if last.get(&g_ids[i]).is_some_and(|&p| p != h_ids[j]) {
                        c.id_switches += 1;
                    }
                }
            }
        }

        c.gt += g.len();
        for (i, m) in g_match.iter().enumerate() {
            let entry = history.entry(g_ids[i]).or_default();
            match m {
                Some(j) => {
                    c.matches += 1;
                    c.iou_sum += overlap(i, *j);
                    last.insert(g_ids[i], h_ids[*j]);
                    entry.push(Some(h_ids[*j]));
                }
                None => {
                    c.fn_ += 1;
                    entry.push(None);
                }
            }
        }
        for j in 0..h.len() {
            if !h_used[j] && !mask_overlaps(&h[j].bbox, masks, threshold) {
                c.fp += 1;
            }
        }
    }

    for states in history.values() {
        c.gt_tracks += 1;
        let tracked = states.iter().filter(|s| s.is_some()).count();
        let ratio = tracked as f64 / states.len() as f64;
        if ratio >= MOSTLY_TRACKED {
            c.mostly_tracked += 1;
        } else if ratio <= MOSTLY_LOST {
            c.mostly_lost += 1;
        }
        let mut last_id = None;
        for f in 0..states.len() {
            if f > 0 && states[f].is_some() && states[f] != states[f - 1] && last_id.is_some() {
                c.fragmentations += 1;
            }
            if states[f].is_some() {
                last_id = states[f];
            }
        }
    }
    Ok(c)
}

pub fn evaluate(gt: &Sequence, hyp: &Sequence, threshold: f64) -> Result<MotReport> {
    Ok(evaluate_counts(gt, hyp, threshold)?.report())
}
