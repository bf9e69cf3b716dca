//! Track decoding: detections leaving the window join the track of their
//! most probable earlier partner or start a new one.

mod hungarian;

use std::collections::{BTreeMap, BTreeSet, HashMap};

pub use hungarian::hungarian_solve;

use crate::error::{Error, Result};
use crate::graph::{DynamicGraph, NodeId, NodeStatus};
use crate::Scalar;


pub type TrackId = u64;

/// Cost of a forbidden pairing in the exit-time assignment problem.
pub const FORBIDDEN_COST: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMethod {
    Greedy,
    Hungarian,
}

impl std::str::FromStr for DecodeMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Self::Greedy),
            "hungarian" => Ok(Self::Hungarian),
            other => Err(Error::Config(format!(
                "decode method must be `greedy` or `hungarian`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for DecodeMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Greedy => "greedy",
            Self::Hungarian => "hungarian",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeConfig {
    pub method: DecodeMethod,
    /// Minimum association probability for joining a track.
    pub assoc_threshold: f64,
    /// Minimum detection probability for starting a track.
    pub tp_threshold: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            method: DecodeMethod::Greedy,
            assoc_threshold: 0.5,
            tp_threshold: 0.5,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("decode.assoc_threshold", self.assoc_threshold),
            ("decode.tp_threshold", self.tp_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TrackMember {
    pub timestep: usize,
    pub node: NodeId,
    pub source_index: usize,
}

/// Decision for one exiting detection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub member: TrackMember,
    /// `None` when the detection was discarded.
    pub track: Option<TrackId>,
}

/// Decoded tracks. Track ids are monotone and never reused.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackSet {
    tracks: BTreeMap<TrackId, Vec<TrackMember>>,
    last: BTreeMap<TrackId, usize>,
    node_track: HashMap<NodeId, TrackId>,
    next_id: TrackId,
}

impl TrackSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tracks started so far, compacted ones included.
    pub fn len(&self) -> usize {
        self.next_id as usize
    }

    pub fn is_empty(&self) -> bool {
        self.next_id == 0
    }

    /// Bookkeeping entries currently held; bounded after [`Self::compact`].
    pub fn held(&self) -> usize {
        self.last.len() + self.node_track.len() + self.tracks.values().map(Vec::len).sum::<usize>()
    }

    /// Members still held per track (all of them unless compacted).
    pub fn tracks(&self) -> &BTreeMap<TrackId, Vec<TrackMember>> {
        &self.tracks
    }

    pub fn track_of(&self, node: NodeId) -> Option<TrackId> {
        self.node_track.get(&node).copied()
    }

    pub fn last_timestep(&self, track: TrackId) -> Option<usize> {
        self.last.get(&track).copied()
    }

    pub fn next_id(&self) -> TrackId {
        self.next_id
    }

    pub fn start(&mut self, member: TrackMember) -> Result<TrackId> {
        if self.node_track.contains_key(&member.node) {
            return Err(Error::Contract(format!("node {} already decoded", member.node)));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.tracks.insert(id, vec![member]);
        self.last.insert(id, member.timestep);
        self.node_track.insert(member.node, id);
        Ok(id)
    }

    pub fn extend(&mut self, track: TrackId, member: TrackMember) -> Result<()> {
        let Some(&last) = self.last.get(&track) else {
            return Err(Error::Contract(format!("unknown track {track}")));
        };
        if member.timestep <= last {
            return Err(Error::Contract(format!(
                "track {track} already has a member at or after frame {}",
                member.timestep
            )));
        }
        if self.node_track.contains_key(&member.node) {
            return Err(Error::Contract(format!("node {} already decoded", member.node)));
        }
        self.tracks.entry(track).or_default().push(member);
        self.last.insert(track, member.timestep);
        self.node_track.insert(member.node, track);
        Ok(())
    }

    /// Forgets members whose node no longer matters for decoding, and the
    /// tails of tracks no kept node belongs to. Such tracks can never be
    /// extended again.
    pub fn compact(&mut self, keep: impl Fn(NodeId) -> bool) {
        self.node_track.retain(|&n, _| keep(n));
        for members in self.tracks.values_mut() {
            members.retain(|m| keep(m.node));
        }
        self.tracks.retain(|_, m| !m.is_empty());
        let live: BTreeSet<TrackId> = self.node_track.values().copied().collect();
        self.last.retain(|t, _| live.contains(t));
    }

    pub fn check_invariants(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (id, members) in &self.tracks {
            for w in members.windows(2) {
                if w[0].timestep >= w[1].timestep {
                    return Err(Error::Contract(format!("track {id} is not strictly increasing")));
                }
            }
            for m in members {
                if !seen.insert(m.node) {
                    return Err(Error::Contract(format!("node {} in two tracks", m.node)));
                }
            }
        }
        Ok(())
    }
}

fn member<T>(node: &crate::graph::DetectionNode<T>) -> TrackMember {
    TrackMember {
        timestep: node.timestep,
        node: node.id,
        source_index: node.source_index,
    }
}

/// Eligible tracks for `d` with the best association probability to each.
fn candidates<T: Scalar>(
    graph: &DynamicGraph<T>,
    tracks: &TrackSet,
    d: NodeId,
    theta: f64,
) -> Result<Vec<(TrackId, f64)>> {
    let node = graph.detection(d)?;
    let mut links: Vec<(NodeId, f64)> = Vec::new();
    let (past, _) = graph.split_neighbors(d)?;
    for a in past {
        let a = graph.association(a)?;
        if let Some(p) = a.probability() {
            links.push((a.earlier, p.to_f64_lossy()));
        }
    }
    links.extend(node.exit_links.iter().map(|&(e, p)| (e, p.to_f64_lossy())));
    let mut best: BTreeMap<TrackId, f64> = BTreeMap::new();
    for (earlier, p) in links {
        if p < theta {
            continue;
        }
        let Some(t) = tracks.track_of(earlier) else {
            continue;
        };
        if tracks.last_timestep(t).is_some_and(|l| l >= node.timestep) {
            continue;
        }
        let e = best.entry(t).or_insert(p);
        if p > *e {
            *e = p;
        }
    }
    Ok(best.into_iter().collect())
}

fn is_true_positive<T: Scalar>(
    graph: &DynamicGraph<T>,
    d: NodeId,
    cfg: &DecodeConfig,
    tp_classification: bool,
) -> Result<bool> {
    if !tp_classification {
        return Ok(true);
    }
    Ok(graph
        .detection(d)?
        .probability()
        .is_some_and(|p| p.to_f64_lossy() >= cfg.tp_threshold))
}

/// Decides the exiting detections `exiting`, frame by frame in ascending
/// order. Within a frame, competing detections are resolved greedily by
/// descending probability then node id, or jointly by minimum-cost
/// assignment.
pub fn decode_on_exit<T: Scalar>(
    graph: &DynamicGraph<T>,
    exiting: &[NodeId],
    tracks: &mut TrackSet,
    cfg: &DecodeConfig,
    tp_classification: bool,
) -> Result<Vec<Assignment>> {
    let mut by_frame: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
    for &d in exiting {
        by_frame.entry(graph.detection(d)?.timestep).or_default().push(d);
    }
    let mut out = Vec::with_capacity(exiting.len());
    for (_, mut nodes) in by_frame {
        nodes.sort_unstable();
        let cands: Vec<Vec<(TrackId, f64)>> = nodes
            .iter()
            .map(|&d| candidates(graph, tracks, d, cfg.assoc_threshold))
            .collect::<Result<_>>()?;
        let chosen = match cfg.method {
            DecodeMethod::Greedy => greedy(&cands),
            DecodeMethod::Hungarian => joint(&cands)?,
        };
        for (i, &d) in nodes.iter().enumerate() {
            let m = member(graph.detection(d)?);
            let track = match chosen[i] {
                Some(t) => {
                    tracks.extend(t, m)?;
                    Some(t)
                }
                None if is_true_positive(graph, d, cfg, tp_classification)? => Some(tracks.start(m)?),
                None => None,
            };
            out.push(Assignment { member: m, track });
        }
    }
    Ok(out)
}

fn greedy(cands: &[Vec<(TrackId, f64)>]) -> Vec<Option<TrackId>> {
    let mut all: Vec<(f64, usize, TrackId)> = cands
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |&(t, p)| (p, i, t)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut chosen = vec![None; cands.len()];
    let mut taken = BTreeSet::new();
    for (_, i, t) in all {
        if chosen[i].is_none() && !taken.contains(&t) {
            chosen[i] = Some(t);
            taken.insert(t);
        }
    }
    chosen
}

fn joint(cands: &[Vec<(TrackId, f64)>]) -> Result<Vec<Option<TrackId>>> {
    let cols: Vec<TrackId> = cands
        .iter()
        .flatten()
        .map(|&(t, _)| t)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if cols.is_empty() {
        return Ok(vec![None; cands.len()]);
    }
    let n = cands.len();
    let m = cols.len();
    // each row owns one "no match" column of cost 1
    let cost: Vec<Vec<f64>> = cands
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut row = vec![FORBIDDEN_COST; m + n];
            for &(t, p) in c {
                let j = cols.binary_search(&t).expect("column of candidate");
                row[j] = 1.0 - p;
            }
            row[m + i] = 1.0;
            row
        })
        .collect();
    let sol = hungarian_solve(&cost)?;
    Ok(sol
        .into_iter()
        .enumerate()
        .map(|(i, j)| match j {
            Some(j) if j < m && cost[i][j] < FORBIDDEN_COST => Some(cols[j]),
            _ => None,
        })
        .collect())
}

/// Decodes every detection still active in the graph, oldest frame first.
/// Used when a sequence ends.
pub fn decode_graph<T: Scalar>(
    graph: &DynamicGraph<T>,
    tracks: &mut TrackSet,
    cfg: &DecodeConfig,
    tp_classification: bool,
) -> Result<Vec<Assignment>> {
    let active: Vec<NodeId> = graph
        .detections()
        .values()
        .filter(|d| d.status == NodeStatus::Active)
        .map(|d| d.id)
        .collect();
    decode_on_exit(graph, &active, tracks, cfg, tp_classification)
}
