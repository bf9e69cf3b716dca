//! Rolling-window bipartite graph of detection nodes and association nodes.
//!
//! Detection nodes carry one detection each. Association nodes represent a
//! candidate link between two detections from different frames and always
//! have exactly two neighbours. Both kinds draw ids from one monotone counter,
//! so the id spaces are disjoint and ids are never reused.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::autodiff::{sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::Scalar;


pub type NodeId = u64;

/// Window lifecycle parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowConfig {
    /// Current window size in frames.
    pub cws: usize,
    /// Frames an unpaired node survives after leaving the window.
    pub rws: usize,
    /// Association probability below which pruning removes a node.
    pub prune_threshold: f64,
    /// Active node count above which pruning is forced.
    pub prune_trigger: usize,
    /// A node counts as paired once one of its forward associations reaches
    /// this probability; paired nodes receive no new associations.
    pub pair_threshold: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            cws: 5,
            rws: 0,
            prune_threshold: 0.05,
            prune_trigger: 1000,
            pair_threshold: 0.5,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cws < 2 {
            return Err(Error::Config(format!("window.cws must be >= 2, got {}", self.cws)));
        }
        for (name, v) in [
            ("window.prune_threshold", self.prune_threshold),
            ("window.pair_threshold", self.pair_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeStatus {
    /// Inside the current window.
    Active,
    /// Left the window unpaired; kept for up to `rws` frames.
    Retained,
}

/// Training label of a detection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Truth {
    /// Ground-truth track of a true positive; `None` for a false positive.
    pub track_id: Option<u64>,
    /// Excluded from the loss (overlaps a DontCare region).
    pub ignore: bool,
}

/// A detection handed to the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionInput<T> {
    pub features: Vec<T>,
    /// Index of the detection within its frame.
    pub source_index: usize,
    pub truth: Option<Truth>,
}

#[derive(Clone, Debug)]
pub struct DetectionNode<T> {
    pub id: NodeId,
    pub timestep: usize,
    pub source_index: usize,
    pub features: Vec<T>,
    /// `None` until the encoder has produced `h⁰`.
    pub hidden: Option<Tensor<T>>,
    /// Message-passing rounds this node has received.
    pub iterations: usize,
    /// Readout logit from the latest round.
    pub last_output: Option<T>,
    pub status: NodeStatus,
    pub truth: Option<Truth>,
    /// Links to earlier detections that have already left the graph:
    /// `(earlier node, association probability at removal)`.
    pub exit_links: Vec<(NodeId, T)>,
}

impl<T: Scalar> DetectionNode<T> {
    pub fn probability(&self) -> Option<T> {
        self.last_output.map(sigmoid)
    }
}

#[derive(Clone, Debug)]
pub struct AssociationNode<T> {
    pub id: NodeId,
    /// Endpoint in the earlier frame.
    pub earlier: NodeId,
    /// Endpoint in the later frame.
    pub later: NodeId,
    /// `None` stands for the zero vector of a fresh node.
    pub hidden: Option<Tensor<T>>,
    pub iterations: usize,
    pub last_output: Option<T>,
}

impl<T: Scalar> AssociationNode<T> {
    pub fn probability(&self) -> Option<T> {
        self.last_output.map(sigmoid)
    }

    pub fn other(&self, d: NodeId) -> NodeId {
        if self.earlier == d {
            self.later
        } else {
            self.earlier
        }
    }
}

/// What one [`DynamicGraph::update_graph`] call changed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UpdateSummary {
    pub exited: Vec<NodeId>,
    pub retained: Vec<NodeId>,
    pub retired: Vec<NodeId>,
    pub added_detections: Vec<NodeId>,
    pub added_associations: Vec<NodeId>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PruneSummary {
    pub fired: bool,
    pub removed_associations: Vec<NodeId>,
    pub removed_detections: Vec<NodeId>,
}

#[derive(Clone, Debug)]
pub struct DynamicGraph<T> {
    config: WindowConfig,
    dets: BTreeMap<NodeId, DetectionNode<T>>,
    assocs: BTreeMap<NodeId, AssociationNode<T>>,
    incidence: BTreeMap<NodeId, BTreeSet<NodeId>>,
    t_start: usize,
    t_end: usize,
    next_id: NodeId,
}

impl<T: Scalar> DynamicGraph<T> {
    /// Graph over the first one or two frames, with an association node for
    /// every cross-frame detection pair.
    pub fn initialize_graph(
        config: WindowConfig,
        first: Vec<DetectionInput<T>>,
        second: Option<Vec<DetectionInput<T>>>,
    ) -> Result<Self> {
        config.validate()?;
        let mut g = Self {
            config,
            dets: BTreeMap::new(),
            assocs: BTreeMap::new(),
            incidence: BTreeMap::new(),
            t_start: 0,
            t_end: 0,
            next_id: 0,
        };
        let earlier: Vec<NodeId> = first.into_iter().map(|d| g.add_detection(0, d)).collect();
        if let Some(second) = second {
            g.t_end = 1;
            let later: Vec<NodeId> = second.into_iter().map(|d| g.add_detection(1, d)).collect();
            for &l in &later {
                for &e in &earlier {
                    g.add_association(e, l);
                }
            }
        }
        Ok(g)
    }

    pub fn config(&self) -> &WindowConfig {
        &self.config
    }

    pub fn window(&self) -> (usize, usize) {
        (self.t_start, self.t_end)
    }

    pub fn detections(&self) -> &BTreeMap<NodeId, DetectionNode<T>> {
        &self.dets
    }

    pub fn associations(&self) -> &BTreeMap<NodeId, AssociationNode<T>> {
        &self.assocs
    }

    pub fn detection(&self, id: NodeId) -> Result<&DetectionNode<T>> {
        self.dets.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn association(&self, id: NodeId) -> Result<&AssociationNode<T>> {
        self.assocs.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn detection_mut(&mut self, id: NodeId) -> Result<&mut DetectionNode<T>> {
        self.dets.get_mut(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn association_mut(&mut self, id: NodeId) -> Result<&mut AssociationNode<T>> {
        self.assocs.get_mut(&id).ok_or(Error::UnknownNode(id))
    }

    /// `|DN| + |AN|`.
    pub fn node_count(&self) -> usize {
        self.dets.len() + self.assocs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_count() == 0
    }

    /// Association nodes incident to detection `d`, ascending by id.
    pub fn neighbors(&self, d: NodeId) -> Result<&BTreeSet<NodeId>> {
        self.incidence.get(&d).ok_or(Error::UnknownNode(d))
    }

    /// Detection nodes reachable from `d` through exactly one association node.
    pub fn second_order_neighborhood(&self, d: NodeId) -> Result<BTreeSet<NodeId>> {
        Ok(self
            .neighbors(d)?
            .iter()
            .map(|a| self.assocs[a].other(d))
            .collect())
    }

    /// Association neighbours of `d` split by whether the far endpoint lies in
    /// an earlier (`.0`) or later (`.1`) frame.
    pub fn split_neighbors(&self, d: NodeId) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
        let mut past = Vec::new();
        let mut future = Vec::new();
        for &a in self.neighbors(d)? {
            if self.assocs[&a].later == d {
                past.push(a);
            } else {
                future.push(a);
            }
        }
        Ok((past, future))
    }

    /// True when no forward association of `d` has reached the pairing threshold.
    pub fn is_unpaired(&self, d: NodeId) -> bool {
        let Some(adj) = self.incidence.get(&d) else {
            return false;
        };
        let thr = T::lit(self.config.pair_threshold);
        !adj.iter().any(|a| {
            let a = &self.assocs[a];
            a.earlier == d && a.probability().is_some_and(|p| p >= thr)
        })
    }

    /// Active detection nodes grouped by frame, oldest first.
    pub fn active_by_timestep(&self) -> Vec<(usize, Vec<NodeId>)> {
        let mut groups: BTreeMap<usize, Vec<NodeId>> = BTreeMap::new();
        for d in self.dets.values().filter(|d| d.status == NodeStatus::Active) {
            groups.entry(d.timestep).or_default().push(d.id);
        }
        groups.into_iter().collect()
    }

    /// Advances the window to frame `t = t_end + 1`.
    ///
    /// Detection nodes leaving the window are passed to `on_exit` (ordered by
    /// frame, then id) before anything is removed. Unpaired leavers are kept
    /// as `Retained` for `rws` frames; everything else is retired. New nodes
    /// are then linked to every unpaired detection from earlier frames.
    pub fn update_graph<F>(
        &mut self,
        t: usize,
        detections: Vec<DetectionInput<T>>,
        mut on_exit: F,
    ) -> Result<UpdateSummary>
    where
        F: FnMut(&Self, &[NodeId]),
    {
        if t != self.t_end + 1 {
            return Err(Error::Contract(format!(
                "update_graph expects frame {}, got {t}",
                self.t_end + 1
            )));
        }
        let mut summary = UpdateSummary::default();
        let new_start = (t + 1).saturating_sub(self.config.cws);

        let mut exiting: Vec<&DetectionNode<T>> = self
            .dets
            .values()
            .filter(|d| d.status == NodeStatus::Active && d.timestep < new_start)
            .collect();
        exiting.sort_by_key(|d| (d.timestep, d.id));
        let exiting: Vec<NodeId> = exiting.into_iter().map(|d| d.id).collect();
        if !exiting.is_empty() {
            on_exit(self, &exiting);
        }

        for &d in &exiting {
            if self.config.rws > 0 && self.is_unpaired(d) {
                self.dets.get_mut(&d).expect("exiting node").status = NodeStatus::Retained;
                summary.retained.push(d);
            } else {
                self.retire(d);
                summary.retired.push(d);
            }
        }
        let expired: Vec<NodeId> = self
            .dets
            .values()
            .filter(|d| {
                d.status == NodeStatus::Retained && d.timestep + self.config.cws + self.config.rws <= t
            })
            .map(|d| d.id)
            .collect();
        for d in expired {
            self.retire(d);
            summary.retired.push(d);
        }
        summary.exited = exiting;

        self.t_start = new_start;
        self.t_end = t;

        let eligible: Vec<NodeId> = self
            .dets
            .keys()
            .copied()
            .filter(|&d| self.is_unpaired(d))
            .collect();
        for det in detections {
            let id = self.add_detection(t, det);
            summary.added_detections.push(id);
        }
        for i in 0..summary.added_detections.len() {
            let later = summary.added_detections[i];
            for &earlier in &eligible {
                summary.added_associations.push(self.add_association(earlier, later));
            }
        }
        Ok(summary)
    }

    /// Drops low-probability association nodes, then isolated detections
    /// classified as false positives, then (if still above the trigger) the
    /// least probable associations and detections until the count fits.
    ///
    /// Fires when the node count exceeds the trigger or the threshold is
    /// positive. Nodes without a readout yet are never threshold-pruned.
    pub fn prune_graph(&mut self, tp_classification: bool) -> PruneSummary {
        let mut summary = PruneSummary::default();
        let trigger = self.config.prune_trigger;
        if !(self.config.prune_threshold > 0.0 || self.node_count() > trigger) {
            return summary;
        }
        summary.fired = true;
        let tau = T::lit(self.config.prune_threshold);
        let weak: Vec<NodeId> = self
            .assocs
            .values()
            .filter(|a| a.probability().is_some_and(|p| p < tau))
            .map(|a| a.id)
            .collect();
        for a in weak {
            self.remove_association(a);
            summary.removed_associations.push(a);
        }
        if tp_classification {
            let half = T::lit(0.5);
            let dead: Vec<NodeId> = self
                .dets
                .values()
                .filter(|d| {
                    self.incidence[&d.id].is_empty() && d.probability().is_some_and(|p| p < half)
                })
                .map(|d| d.id)
                .collect();
            for d in dead {
                self.remove_detection(d);
                summary.removed_detections.push(d);
            }
        }
        if self.node_count() > trigger {
            let mut ranked: Vec<(T, NodeId)> = self
                .assocs
                .values()
                .map(|a| (a.probability().unwrap_or_else(T::zero), a.id))
                .collect();
            ranked.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite").then(x.1.cmp(&y.1)));
            for (_, a) in ranked {
                if self.node_count() <= trigger {
                    break;
                }
                self.remove_association(a);
                summary.removed_associations.push(a);
            }
            let mut ranked: Vec<(T, NodeId)> = self
                .dets
                .values()
                .map(|d| (d.probability().unwrap_or_else(T::zero), d.id))
                .collect();
            ranked.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite").then(x.1.cmp(&y.1)));
            for (_, d) in ranked {
                if self.node_count() <= trigger {
                    break;
                }
                self.remove_detection(d);
                summary.removed_detections.push(d);
            }
        }
        summary
    }

    /// Line-oriented export: one `det` or `assoc` record per line.
    ///
    /// ```text
    /// det <id> <frame> <probability|-> <active|retained>
    /// assoc <id> <earlier frame> <later frame> <probability|-> <earlier id> <later id>
    /// ```
    pub fn dump(&self) -> String {
        let fmt_p = |p: Option<T>| p.map_or_else(|| "-".to_string(), |p| format!("{:.6}", p.to_f64_lossy()));
        let mut out = String::new();
        for d in self.dets.values() {
            let status = match d.status {
                NodeStatus::Active => "active",
                NodeStatus::Retained => "retained",
            };
            let _ = writeln!(out, "det {} {} {} {}", d.id, d.timestep, fmt_p(d.probability()), status);
        }
        for a in self.assocs.values() {
            let _ = writeln!(
                out,
                "assoc {} {} {} {} {} {}",
                a.id,
                self.dets[&a.earlier].timestep,
                self.dets[&a.later].timestep,
                fmt_p(a.probability()),
                a.earlier,
                a.later
            );
        }
        out
    }

    /// Verifies the structural invariants; used by tests.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        for a in self.assocs.values() {
            let (Some(e), Some(l)) = (self.dets.get(&a.earlier), self.dets.get(&a.later)) else {
                return fail(format!("association {} has a dangling endpoint", a.id));
            };
            if e.timestep >= l.timestep {
                return fail(format!("association {} endpoints not in increasing frames", a.id));
            }
            if !self.incidence[&a.earlier].contains(&a.id) || !self.incidence[&a.later].contains(&a.id) {
                return fail(format!("association {} missing from incidence", a.id));
            }
            if self.dets.contains_key(&a.id) {
                return fail(format!("id {} used by both kinds", a.id));
            }
        }
        let mut pairs = BTreeSet::new();
        for a in self.assocs.values() {
            if !pairs.insert((a.earlier, a.later)) {
                return fail(format!("duplicate association between {} and {}", a.earlier, a.later));
            }
        }
        for (d, adj) in &self.incidence {
            if !self.dets.contains_key(d) {
                return fail(format!("incidence for missing detection {d}"));
            }
            for a in adj {
                match self.assocs.get(a) {
                    Some(assoc) if assoc.earlier == *d || assoc.later == *d => {}
                    _ => return fail(format!("detection {d} lists foreign association {a}")),
                }
            }
        }
        for d in self.dets.values() {
            let ok = match d.status {
                NodeStatus::Active => d.timestep >= self.t_start && d.timestep <= self.t_end,
                NodeStatus::Retained => {
                    d.timestep < self.t_start && d.timestep + self.config.rws >= self.t_start
                }
            };
            if !ok {
                return fail(format!(
                    "detection {} at frame {} violates window [{}, {}]",
                    d.id, d.timestep, self.t_start, self.t_end
                ));
            }
        }
        Ok(())
    }

    fn fresh_id(&mut self) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn add_detection(&mut self, timestep: usize, input: DetectionInput<T>) -> NodeId {
        let id = self.fresh_id();
        self.dets.insert(
            id,
            DetectionNode {
                id,
                timestep,
                source_index: input.source_index,
                features: input.features,
                hidden: None,
                iterations: 0,
                last_output: None,
                status: NodeStatus::Active,
                truth: input.truth,
                exit_links: Vec::new(),
            },
        );
        self.incidence.insert(id, BTreeSet::new());
        id
    }

    fn add_association(&mut self, earlier: NodeId, later: NodeId) -> NodeId {
        let id = self.fresh_id();
        self.assocs.insert(
            id,
            AssociationNode {
                id,
                earlier,
                later,
                hidden: None,
                iterations: 0,
                last_output: None,
            },
        );
        self.incidence.get_mut(&earlier).expect("endpoint").insert(id);
        self.incidence.get_mut(&later).expect("endpoint").insert(id);
        id
    }

    fn remove_association(&mut self, a: NodeId) {
        if let Some(assoc) = self.assocs.remove(&a) {
            for d in [assoc.earlier, assoc.later] {
                if let Some(adj) = self.incidence.get_mut(&d) {
                    adj.remove(&a);
                }
            }
        }
    }

    fn remove_detection(&mut self, d: NodeId) {
        if let Some(adj) = self.incidence.remove(&d) {
            for a in adj {
                self.remove_association(a);
            }
        }
        self.dets.remove(&d);
    }

    /// Removes `d`, remembering its forward link probabilities on the later
    /// endpoints so that they can still be decoded.
    fn retire(&mut self, d: NodeId) {
        let adj: Vec<NodeId> = self.incidence.get(&d).map(|s| s.iter().copied().collect()).unwrap_or_default();
        for a in adj {
            let assoc = &self.assocs[&a];
            if assoc.earlier == d {
                if let Some(p) = assoc.probability() {
                    let later = assoc.later;
                    self.dets.get_mut(&later).expect("endpoint").exit_links.push((d, p));
                }
            }
        }
        self.remove_detection(d);
    }
}
