use super::round::RoundOutput;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, Truth};
use crate::Scalar;

/// Loss terms as tape handles (all scalars).
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub bce_dn: Var,
    pub bce_an: Var,
    pub ce_an: Var,
    pub total: Var,
}

impl LossVars {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> LossBundle<T> {
        let v = |x: Var| tape.value(x).item().unwrap_or_else(T::zero);
        LossBundle {
            l_bce_dn: v(self.bce_dn),
            l_bce_an: v(self.bce_an),
            l_ce_an: v(self.ce_an),
            total: v(self.total),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBundle<T> {
    pub l_bce_dn: T,
    pub l_bce_an: T,
    pub l_ce_an: T,
    pub total: T,
}

impl<T: Scalar> std::ops::AddAssign for LossBundle<T> {
    fn add_assign(&mut self, o: Self) {
        self.l_bce_dn += o.l_bce_dn;
        self.l_bce_an += o.l_bce_an;
        self.l_ce_an += o.l_ce_an;
        self.total += o.total;
    }
}

/// Whether both endpoints are true positives of the same ground-truth track.
pub fn same_track(a: &Truth, b: &Truth) -> bool {
    matches!((a.track_id, b.track_id), (Some(x), Some(y)) if x == y)
}

fn truth_of<T: Scalar>(g: &DynamicGraph<T>, d: u64) -> Result<Truth> {
    g.detection(d)?
        .truth
        .ok_or_else(|| Error::Contract(format!("detection node {d} has no label")))
}

/// Detection BCE, association BCE and competing-association cross-entropy
/// of the latest round, plus their sum.
///
/// Detections flagged `ignore` are left out of every term, as are
/// associations touching them in the association BCE. In the
/// cross-entropy they still compete as negatives.
pub fn compute_losses<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &DynamicGraph<T>,
    out: &RoundOutput<T>,
    tp_classification: bool,
) -> Result<LossVars> {
    let zero = |tape: &mut Tape<T>| tape.constant(Tensor::scalar(T::zero()));

    let det_truth: Vec<Truth> = out
        .det_ids
        .iter()
        .map(|&d| truth_of(graph, d))
        .collect::<Result<_>>()?;
    let n_dn = det_truth.iter().filter(|t| !t.ignore).count();

    let bce_dn = match out.det_logits {
        Some(od) if tp_classification && n_dn > 0 => {
            let w = T::one() / T::lit(n_dn as f64);
            let targets = det_truth
                .iter()
                .map(|t| if t.track_id.is_some() { T::one() } else { T::zero() })
                .collect();
            let weights = det_truth
                .iter()
                .map(|t| if t.ignore { T::zero() } else { w })
                .collect();
            tape.bce_with_logits(od, targets, weights)?
        }
        _ => zero(tape),
    };

    let (bce_an, ce_an) = match out.assoc_logits {
        Some(oa) => {
            let mut labels = Vec::with_capacity(out.assoc_ids.len());
            let mut counted = Vec::with_capacity(out.assoc_ids.len());
            for &a in &out.assoc_ids {
                let node = graph.association(a)?;
                let (e, l) = (truth_of(graph, node.earlier)?, truth_of(graph, node.later)?);
                labels.push(if same_track(&e, &l) { T::one() } else { T::zero() });
                counted.push(!e.ignore && !l.ignore);
            }
            let n_an = counted.iter().filter(|&&c| c).count();
            let bce_an = if n_an > 0 {
                let w = T::one() / T::lit(n_an as f64);
                let weights = counted.iter().map(|&c| if c { w } else { T::zero() }).collect();
                tape.bce_with_logits(oa, labels.clone(), weights)?
            } else {
                zero(tape)
            };
            let ce_an = competing_ce(tape, graph, out, oa, &det_truth, &labels, n_dn)?;
            (bce_an, ce_an)
        }
        None => (zero(tape), zero(tape)),
    };

    let s = tape.add(bce_dn, bce_an)?;
    let total = tape.add(s, ce_an)?;
    Ok(LossVars {
        bce_dn,
        bce_an,
        ce_an,
        total,
    })
}

#[allow(clippy::too_many_arguments)]
fn competing_ce<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &DynamicGraph<T>,
    out: &RoundOutput<T>,
    oa: Var,
    det_truth: &[Truth],
    labels: &[T],
    n_dn: usize,
) -> Result<Var> {
    if n_dn == 0 {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let row: std::collections::HashMap<u64, usize> =
        out.assoc_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();
    let mut idx = Vec::new();
    let mut groups = Vec::new();
    let mut weights = Vec::new();
    let scale = T::one() / T::lit(n_dn as f64);
    let mut n_groups = 0;
    for (d, truth) in out.det_ids.iter().zip(det_truth) {
        if truth.ignore {
            continue;
        }
        let (past, future) = graph.split_neighbors(*d)?;
        for side in [past, future] {
            if side.is_empty() {
                continue;
            }
            let w = scale / T::lit(side.len() as f64);
            for a in side {
                let r = row[&a];
                idx.push(r);
                groups.push(n_groups);
                weights.push(-(labels[r] * w));
            }
            n_groups += 1;
        }
    }
    if idx.is_empty() {
        return Ok(tape.constant(Tensor::scalar(T::zero())));
    }
    let g = tape.gather_rows(oa, idx)?;
    let ls = tape.segment_log_softmax(g, groups)?;
    let n = weights.len();
    tape.weighted_sum(ls, Tensor::from_vec(n, 1, weights)?)
}
