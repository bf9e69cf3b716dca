//! Tape-level building blocks of one message-passing round.

use super::config::AssocUpdate;
use super::params::{AttentionSlots, Layout, ParamVars};
use crate::autodiff::{batch_norm, gru_cell, Mode, RunningStats, Tape, Tensor, Var};
use crate::error::{shape_err, Result};
use crate::Scalar;

/// LeakyReLU slope of the attention logits.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// One (detection, association) incidence, as row indices into the
/// detection matrix (`det`, `far`) and the association matrix (`assoc`).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Edges {
    pub det: Vec<usize>,
    pub assoc: Vec<usize>,
    pub far: Vec<usize>,
}

impl Edges {
    pub fn len(&self) -> usize {
        self.det.len()
    }

    pub fn is_empty(&self) -> bool {
        self.det.is_empty()
    }

    pub fn push(&mut self, det: usize, assoc: usize, far: usize) {
        self.det.push(det);
        self.assoc.push(assoc);
        self.far.push(far);
    }
}

/// `h⁰ = W²·BatchNorm(ReLU(W¹x + b¹)) + b²` for a batch of feature rows.
pub fn encode_detections<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    layout: &Layout,
    stats: &mut RunningStats<T>,
    x: Var,
    mode: Mode,
) -> Result<Var> {
    let h = tape.linear(x, vars.get(layout.enc_w1), vars.get(layout.enc_b1))?;
    let h = tape.relu(h)?;
    let h = batch_norm(
        tape,
        h,
        vars.get(layout.bn_gamma),
        vars.get(layout.bn_beta),
        stats,
        mode,
    )?;
    tape.linear(h, vars.get(layout.enc_w2), vars.get(layout.enc_b2))
}

/// Association message from the earlier / later endpoint hidden rows.
pub fn association_message<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    layout: &Layout,
    update: AssocUpdate,
    h_earlier: Var,
    h_later: Var,
) -> Result<Var> {
    let input = match update {
        AssocUpdate::Difference => tape.sub(h_later, h_earlier)?,
        AssocUpdate::Concat => tape.concat_cols(h_earlier, h_later)?,
    };
    tape.linear(input, vars.get(layout.assoc_msg_w), vars.get(layout.assoc_msg_b))
}

/// GRU step of every association node. `earlier[i]` / `later[i]` index the
/// endpoint rows of association `i` in `hd`.
#[allow(clippy::too_many_arguments)]
pub fn update_associations<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    layout: &Layout,
    update: AssocUpdate,
    hd: Var,
    earlier: Vec<usize>,
    later: Vec<usize>,
    ha: Var,
) -> Result<Var> {
    let e = tape.gather_rows(hd, earlier)?;
    let l = tape.gather_rows(hd, later)?;
    let m = association_message(tape, vars, layout, update, e, l)?;
    gru_cell(tape, ha, m, &layout.assoc_gru.vars(vars))
}

/// Attention coefficients of one head, one per edge, normalized over the
/// edges of each detection.
pub fn attention_head<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    head: AttentionSlots,
    hd: Var,
    edges: &Edges,
) -> Result<Var> {
    if edges.is_empty() {
        return shape_err("attention_head", "no edges");
    }
    let p = tape.matmul_t(hd, vars.get(head.w))?;
    let pd = tape.gather_rows(p, edges.det.clone())?;
    let pf = tape.gather_rows(p, edges.far.clone())?;
    let diff = tape.sub(pd, pf)?;
    let diff = tape.abs(diff)?;
    let logit = tape.matmul_t(diff, vars.get(head.a))?;
    let logit = tape.leaky_relu(logit, T::lit(ATTENTION_SLOPE))?;
    tape.segment_softmax(logit, edges.det.clone())
}

/// GRU step of every detection node with the attention-weighted sum of its
/// association hiddens as message. Returns the new hiddens and the per-head
/// coefficients (empty when there are no edges).
pub fn update_detections<T: Scalar>(
    tape: &mut Tape<T>,
    vars: &ParamVars,
    layout: &Layout,
    hd: Var,
    ha: Option<Var>,
    edges: &Edges,
) -> Result<(Var, Vec<Var>)> {
    let (n, width) = tape.shape(hd);
    let mut alphas = Vec::new();
    let message = match ha {
        Some(ha) if !edges.is_empty() => {
            let rows = tape.gather_rows(ha, edges.assoc.clone())?;
            let mut acc: Option<Var> = None;
            for &head in &layout.attention {
                let alpha = attention_head(tape, vars, head, hd, edges)?;
                alphas.push(alpha);
                let weighted = tape.mul_col(rows, alpha)?;
                let m = tape.segment_sum(weighted, edges.det.clone(), n)?;
                acc = Some(match acc {
                    None => m,
                    Some(a) => tape.add(a, m)?,
                });
            }
            let m = acc.expect("at least one head");
            if layout.attention.len() > 1 {
                tape.scale(m, T::one() / T::lit(layout.attention.len() as f64))?
            } else {
                m
            }
        }
        _ => tape.constant(Tensor::zeros(n, width)),
    };
    let h = gru_cell(tape, hd, message, &layout.det_gru.vars(vars))?;
    Ok((h, alphas))
}

/// `o = h·wᵀ + b`, one logit per row.
pub fn readout<T: Scalar>(tape: &mut Tape<T>, w: Var, b: Var, h: Var) -> Result<Var> {
    tape.linear(h, w, b)
}
