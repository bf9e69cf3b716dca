//! Online inference: one graph update, forward pass and exit decoding per
//! frame, with memory bounded by the window contents.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use crate::autodiff::Tape;
use crate::data::{Detection, Sequence};
use crate::decoder::{decode_graph, decode_on_exit, Assignment, DecodeConfig, TrackSet};
use crate::error::Result;
use crate::graph::{DetectionInput, DynamicGraph, NodeId, WindowConfig};
use crate::model::{forward, frame_inputs, AttentionRecord, Carry, ModelParams, RoundOptions};
use crate::Scalar;


#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrackerOptions {
    pub record_attention: bool,
    pub dump_graph: bool,
}

/// What one call to [`OnlineTracker::step`] produced.
#[derive(Clone, Debug, Default)]
pub struct StepOutput<T> {
    pub frame: usize,
    /// Decoded rows of frames that left the window, frame-ordered, with
    /// track ids set.
    pub rows: Vec<Detection>,
    pub seconds: f64,
    pub detection_nodes: usize,
    pub association_nodes: usize,
    pub attention: Vec<AttentionRecord<T>>,
    pub graph_dump: Option<String>,
}

pub struct OnlineTracker<T> {
    params: ModelParams<T>,
    window: WindowConfig,
    decode: DecodeConfig,
    options: TrackerOptions,
    graph: Option<DynamicGraph<T>>,
    /// Frame 0, held until frame 1 arrives so the graph starts from a pair.
    first: Option<Vec<DetectionInput<T>>>,
    /// Source rows of detections not yet decoded, by `(frame, row index)`.
    rows: BTreeMap<(usize, usize), Detection>,
    tracks: TrackSet,
    next_frame: usize,
}

impl<T: Scalar> OnlineTracker<T> {
    pub fn new(params: ModelParams<T>, window: WindowConfig, decode: DecodeConfig, options: TrackerOptions) -> Result<Self> {
        window.validate()?;
        decode.validate()?;
        Ok(Self {
            params,
            window,
            decode,
            options,
            graph: None,
            first: None,
            rows: BTreeMap::new(),
            tracks: TrackSet::new(),
            next_frame: 0,
        })
    }

    pub fn tracks(&self) -> &TrackSet {
        &self.tracks
    }

    pub fn graph(&self) -> Option<&DynamicGraph<T>> {
        self.graph.as_ref()
    }

    /// Feeds the next frame's detections.
    pub fn step(&mut self, frame: &[Detection]) -> Result<StepOutput<T>> {
        let start = Instant::now();
        let t = self.next_frame;
        self.next_frame += 1;
        let inputs = frame_inputs::<T>(frame, self.params.config(), false);
        let mut out = StepOutput {
            frame: t,
            ..StepOutput::default()
        };
        for d in &inputs {
            self.rows.insert((t, d.source_index), frame[d.source_index].clone());
        }

        let assignments = match self.graph.as_mut() {
            None if t == 0 => {
                self.first = Some(inputs);
                out.seconds = start.elapsed().as_secs_f64();
                return Ok(out);
            }
            None => {
                let first = self.first.take().unwrap_or_default();
                let g = DynamicGraph::initialize_graph(self.window.clone(), first, Some(inputs))?;
                self.graph = Some(g);
                Vec::new()
            }
            Some(g) => {
                let mut decoded = Ok(Vec::new());
                let tracks = &mut self.tracks;
                let (decode, tp) = (&self.decode, self.params.config().tp_classification);
                g.update_graph(t, inputs, |g, exiting| {
                    decoded = decode_on_exit(g, exiting, tracks, decode, tp);
                })?;
                decoded?
            }
        };
        out.rows = self.emit(&assignments);
        self.round(&mut out)?;
        self.forget();
        out.seconds = start.elapsed().as_secs_f64();
        Ok(out)
    }

    /// Flushes the window at the end of the sequence.
    pub fn finish(mut self) -> Result<Vec<Detection>> {
        if self.graph.is_none() {
            let Some(first) = self.first.take() else {
                return Ok(Vec::new());
            };
            self.graph = Some(DynamicGraph::initialize_graph(self.window.clone(), first, None)?);
            let mut scratch = StepOutput::default();
            self.round(&mut scratch)?;
        }
        let g = self.graph.as_ref().expect("graph");
        let assignments = decode_graph(g, &mut self.tracks, &self.decode, self.params.config().tp_classification)?;
        Ok(self.emit(&assignments))
    }

    fn round(&mut self, out: &mut StepOutput<T>) -> Result<()> {
        let g = self.graph.as_mut().expect("graph");
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let opts = RoundOptions {
            record_attention: self.options.record_attention,
            ..RoundOptions::infer()
        };
        let r = forward(&mut tape, &mut self.params, &vars, g, &mut Carry::new(), opts)?;
        out.attention = r.attention;
        if self.options.dump_graph {
            out.graph_dump = Some(g.dump());
        }
        out.detection_nodes = g.detections().len();
        out.association_nodes = g.associations().len();
        g.prune_graph(self.params.config().tp_classification);
        Ok(())
    }

    fn emit(&mut self, assignments: &[Assignment]) -> Vec<Detection> {
        let mut rows: Vec<Detection> = assignments
            .iter()
            .filter_map(|a| {
                let row = self.rows.remove(&(a.member.timestep, a.member.source_index))?;
                a.track.map(|id| Detection {
                    track_id: Some(id),
                    ..row
                })
            })
            .collect();
        rows.sort_by_key(|r| (r.frame, r.track_id));
        rows
    }

    /// Drops state of nodes that left the graph.
    fn forget(&mut self) {
        let g = self.graph.as_ref().expect("graph");
        let live: BTreeSet<(usize, usize)> = g.detections().values().map(|d| (d.timestep, d.source_index)).collect();
        self.rows.retain(|k, _| live.contains(k));
        let mut keep: BTreeSet<NodeId> = g.detections().keys().copied().collect();
        for d in g.detections().values() {
            keep.extend(d.exit_links.iter().map(|&(e, _)| e));
        }
        self.tracks.compact(|n| keep.contains(&n));
    }
}

/// Tracks a whole sequence. The result holds one row per decoded detection.
pub fn track_sequence<T: Scalar>(
    params: &ModelParams<T>,
    window: &WindowConfig,
    decode: &DecodeConfig,
    detections: &Sequence,
) -> Result<Sequence> {
    let mut tracker = OnlineTracker::new(params.clone(), window.clone(), decode.clone(), TrackerOptions::default())?;
    let mut out = Sequence::new(&detections.name);
    out.ensure_frames(detections.len());
    out.image_width = detections.image_width;
    out.image_height = detections.image_height;
    let push = |rows: Vec<Detection>, out: &mut Sequence| {
        for r in rows {
            let f = r.frame;
            out.ensure_frames(f + 1);
            out.frames[f].push(r);
        }
    };
    for frame in &detections.frames {
        let s = tracker.step(frame)?;
        push(s.rows, &mut out);
    }
    push(tracker.finish()?, &mut out);
    Ok(out)
}
