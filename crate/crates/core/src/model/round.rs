use std::collections::BTreeMap;

use super::layers::{encode_detections, readout, update_associations, update_detections, Edges};
use super::params::{ModelParams, ParamVars};
use crate::autodiff::{Mode, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, NodeId};
use crate::Scalar;

/// Hidden states of the previous round that still live on the current tape.
///
/// Training threads one carry through a whole mini-sequence so gradients
/// flow across frames. A carry whose tape is gone is ignored and the stored
/// node hiddens are used as constants instead.
#[derive(Clone, Debug, Default)]
pub struct Carry {
    det: Option<(Var, BTreeMap<NodeId, usize>)>,
    assoc: Option<(Var, BTreeMap<NodeId, usize>)>,
}

impl Carry {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Attention coefficients of one detection for one head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord<T> {
    pub detection: NodeId,
    pub timestep: usize,
    pub head: usize,
    /// `(association, far detection, weight)`, ascending by association id.
    pub weights: Vec<(NodeId, NodeId, T)>,
}

/// Handles produced by one round. Row `i` of `det_logits` belongs to
/// `det_ids[i]`, likewise for associations.
#[derive(Clone, Debug, Default)]
pub struct RoundOutput<T> {
    pub det_ids: Vec<NodeId>,
    pub assoc_ids: Vec<NodeId>,
    pub det_logits: Option<Var>,
    pub assoc_logits: Option<Var>,
    pub attention: Vec<AttentionRecord<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundOptions {
    pub mode: Mode,
    pub record_attention: bool,
}

impl RoundOptions {
    pub fn train() -> Self {
        Self {
            mode: Mode::Train,
            record_attention: false,
        }
    }

    pub fn infer() -> Self {
        Self {
            mode: Mode::Infer,
            record_attention: false,
        }
    }
}

enum Source<T> {
    Carried(Var, usize),
    Fresh(usize),
    Stored(Tensor<T>),
    Zero,
}

fn stack<T: Scalar>(tape: &mut Tape<T>, parts: Vec<(u8, Var)>, plan: Vec<(u8, usize)>) -> Result<Var> {
    let mut offsets = [0usize; 3];
    let mut stacked: Option<Var> = None;
    let mut rows = 0;
    for (kind, v) in parts {
        offsets[kind as usize] = rows;
        rows += tape.shape(v).0;
        stacked = Some(match stacked {
            None => v,
            Some(s) => tape.concat_rows(s, v)?,
        });
    }
    let stacked = stacked.ok_or_else(|| Error::Contract("assemble: no rows".into()))?;
    let idx: Vec<usize> = plan.iter().map(|&(k, r)| offsets[k as usize] + r).collect();
    if idx.len() == rows && idx.iter().enumerate().all(|(i, &r)| i == r) {
        return Ok(stacked);
    }
    tape.gather_rows(stacked, idx)
}

/// One message-passing round over the whole graph: encode new detection
/// nodes, update association nodes, update detection nodes with attention,
/// read out. Hiddens, iteration counters and logits are written back to the
/// graph.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &mut ModelParams<T>,
    vars: &ParamVars,
    graph: &mut DynamicGraph<T>,
    carry: &mut Carry,
    opts: RoundOptions,
) -> Result<RoundOutput<T>> {
    let h = params.config().hidden_size;
    let update = params.config().assoc_update;
    let det_ids: Vec<NodeId> = graph.detections().keys().copied().collect();
    let assoc_ids: Vec<NodeId> = graph.associations().keys().copied().collect();
    if det_ids.is_empty() {
        *carry = Carry::default();
        return Ok(RoundOutput::default());
    }
    let carried_det = carry.det.take().filter(|(v, _)| tape.owns(*v));
    let carried_assoc = carry.assoc.take().filter(|(v, _)| tape.owns(*v));

    // (1) encode detection nodes without a hidden state
    let mut fresh_rows: Vec<usize> = Vec::new();
    let mut fresh_features: Vec<T> = Vec::new();
    let mut det_sources: Vec<Option<Source<T>>> = Vec::with_capacity(det_ids.len());
    let width = params.config().feature_width();
    for &d in &det_ids {
        if let Some(&r) = carried_det.as_ref().and_then(|(_, m)| m.get(&d)) {
            det_sources.push(Some(Source::Carried(carried_det.as_ref().unwrap().0, r)));
            continue;
        }
        let node = graph.detection(d)?;
        match &node.hidden {
            Some(t) => det_sources.push(Some(Source::Stored(t.clone()))),
            None => {
                if node.features.len() != width {
                    return Err(Error::Shape {
                        op: "encode_detections",
                        detail: format!(
                            "node {d} has {} features, encoder expects {width}",
                            node.features.len()
                        ),
                    });
                }
                det_sources.push(None);
                fresh_rows.push(fresh_rows.len());
                fresh_features.extend_from_slice(&node.features);
            }
        }
    }
    let encoded = if fresh_rows.is_empty() {
        None
    } else {
        let x = tape.constant(Tensor::from_vec(fresh_rows.len(), width, fresh_features)?);
        let layout = params.layout().clone();
        Some(encode_detections(tape, vars, &layout, &mut params.bn_stats, x, opts.mode)?)
    };
    let hd = {
        let mut next_fresh = 0;
        let sources: Vec<Source<T>> = det_sources
            .into_iter()
            .map(|s| {
                s.unwrap_or_else(|| {
                    next_fresh += 1;
                    Source::Fresh(next_fresh - 1)
                })
            })
            .collect();
        assemble(tape, sources, encoded, h)?
    };
    let det_row: BTreeMap<NodeId, usize> =
        det_ids.iter().enumerate().map(|(i, &d)| (d, i)).collect();

    let layout = params.layout();

    // (2) association update
    let ha_new = if assoc_ids.is_empty() {
        None
    } else {
        let mut earlier = Vec::with_capacity(assoc_ids.len());
        let mut later = Vec::with_capacity(assoc_ids.len());
        let mut sources = Vec::with_capacity(assoc_ids.len());
        for &a in &assoc_ids {
            let node = graph.association(a)?;
            earlier.push(det_row[&node.earlier]);
            later.push(det_row[&node.later]);
            if let Some(&r) = carried_assoc.as_ref().and_then(|(_, m)| m.get(&a)) {
                sources.push(Source::Carried(carried_assoc.as_ref().unwrap().0, r));
            } else if let Some(t) = &node.hidden {
                sources.push(Source::Stored(t.clone()));
            } else {
                sources.push(Source::Zero);
            }
        }
        let ha = assemble(tape, sources, None, h)?;
        Some(update_associations(tape, vars, layout, update, hd, earlier, later, ha)?)
    };
    let assoc_row: BTreeMap<NodeId, usize> =
        assoc_ids.iter().enumerate().map(|(i, &a)| (a, i)).collect();

    // (3) detection update
    let mut edges = Edges::default();
    for (i, &d) in det_ids.iter().enumerate() {
        for &a in graph.neighbors(d)? {
            let far = graph.association(a)?.other(d);
            edges.push(i, assoc_row[&a], det_row[&far]);
        }
    }
    let (hd_new, alphas) = update_detections(tape, vars, layout, hd, ha_new, &edges)?;

    // (4) readout
    let od = readout(tape, vars.get(layout.det_out_w), vars.get(layout.det_out_b), hd_new)?;
    let oa = match ha_new {
        Some(ha) => Some(readout(
            tape,
            vars.get(layout.assoc_out_w),
            vars.get(layout.assoc_out_b),
            ha,
        )?),
        None => None,
    };

    let attention = if opts.record_attention {
        attention_records(tape, graph, &det_ids, &assoc_ids, &edges, &alphas)?
    } else {
        Vec::new()
    };

    // write back
    {
        let hv = tape.value(hd_new);
        let ov = tape.value(od);
        for (i, &d) in det_ids.iter().enumerate() {
            let node = graph.detection_mut(d)?;
            node.hidden = Some(Tensor::row_vector(hv.row(i)));
            node.iterations += 1;
            node.last_output = Some(ov.get(i, 0));
        }
    }
    if let (Some(ha), Some(oa)) = (ha_new, oa) {
        let hv = tape.value(ha);
        let ov = tape.value(oa);
        for (i, &a) in assoc_ids.iter().enumerate() {
            let node = graph.association_mut(a)?;
            node.hidden = Some(Tensor::row_vector(hv.row(i)));
            node.iterations += 1;
            node.last_output = Some(ov.get(i, 0));
        }
    }

    carry.det = Some((hd_new, det_row));
    carry.assoc = ha_new.map(|v| (v, assoc_row));
    Ok(RoundOutput {
        det_ids,
        assoc_ids,
        det_logits: Some(od),
        assoc_logits: oa,
        attention,
    })
}

/// Stacks one hidden row per id from the carried matrix, a freshly computed
/// matrix and constant rows, in id order.
fn assemble<T: Scalar>(

    tape: &mut Tape<T>,
    sources: Vec<Source<T>>,
    fresh: Option<Var>,
    width: usize,
) -> Result<Var> {
    let mut consts: Vec<T> = Vec::new();
    let mut n_const = 0;
    let mut carried = None;
    let mut plan = Vec::with_capacity(sources.len());
    for s in sources {
        match s {
            Source::Carried(v, r) => {
                carried = Some(v);
                plan.push((0u8, r));
            }
            Source::Fresh(r) => plan.push((1, r)),
            Source::Stored(t) => {
                consts.extend_from_slice(t.data());
                plan.push((2, n_const));
                n_const += 1;
            }
            Source::Zero => {
                consts.extend(std::iter::repeat_n(T::zero(), width));
                plan.push((2, n_const));
                n_const += 1;
            }
        }
    }
    let mut parts = Vec::new();
    if let Some(v) = carried {
        parts.push((0u8, v));
    }
    if let Some(v) = fresh {
        parts.push((1, v));
    }
    if n_const > 0 {
        parts.push((2, tape.constant(Tensor::from_vec(n_const, width, consts)?)));
    }
    stack(tape, parts, plan)
}

fn attention_records<T: Scalar>(
    tape: &Tape<T>,
    graph: &DynamicGraph<T>,
    det_ids: &[NodeId],
    assoc_ids: &[NodeId],
    edges: &Edges,
    alphas: &[Var],
) -> Result<Vec<AttentionRecord<T>>> {
    let mut out = Vec::new();
    for (head, &alpha) in alphas.iter().enumerate() {
        let w = tape.value(alpha);
        let mut by_det: BTreeMap<usize, Vec<(NodeId, NodeId, T)>> = BTreeMap::new();
        for e in 0..edges.len() {
            by_det.entry(edges.det[e]).or_default().push((
                assoc_ids[edges.assoc[e]],
                det_ids[edges.far[e]],
                w.get(e, 0),
            ));
        }
        for (i, weights) in by_det {
            out.push(AttentionRecord {
                detection: det_ids[i],
                timestep: graph.detection(det_ids[i])?.timestep,
                head,
                weights,
            });
        }
    }
    Ok(out)
}
