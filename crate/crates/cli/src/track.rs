use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use log::{info, warn};
use rayon::prelude::*;
use trackmpnn::data::{Detection, FrameReader, FrameWriter, Vocabulary};
use trackmpnn::decoder::DecodeConfig;
use trackmpnn::model::ModelParams;
use trackmpnn::tracker::{OnlineTracker, StepOutput, TrackerOptions};
use trackmpnn::{DecodeMethod, WindowConfig};

use crate::util::{
    apply_sets, create_dir, create_file, list_sequences, load_checkpoint, peak_rss_kb, vocabulary, CliResult, Classify,
};

#[derive(Args)]
pub struct TrackArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// One KITTI detection file per sequence.
    #[arg(long)]
    detections: PathBuf,
    /// Result files are written here under the input names.
    #[arg(long)]
    out: PathBuf,
    /// `greedy` or `hungarian`.
    #[arg(long)]
    decode: Option<String>,
    #[arg(long)]
    cws: Option<usize>,
    #[arg(long)]
    rws: Option<usize>,
    /// `key=value` override of the checkpoint configuration, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Write the graph after every frame to `OUT/graph/<name>.txt`.
    #[arg(long)]
    dump_graph: bool,
    /// Write attention weights to `OUT/attention/<name>.txt`.
    #[arg(long)]
    dump_attention: bool,
}

struct Setup {
    vocab: Vocabulary,
    params: ModelParams<f64>,
    window: WindowConfig,
    decode: DecodeConfig,
    options: TrackerOptions,
}

struct Summary {
    frames: usize,
    rows: usize,
    mean_ms: f64,
    max_ms: f64,
    max_detection_nodes: usize,
}

struct Outputs {
    result: FrameWriter<BufWriter<File>>,
    timing: BufWriter<File>,
    graph: Option<BufWriter<File>>,
    attention: Option<BufWriter<File>>,
}

impl Outputs {
    fn write_rows(&mut self, rows: &[Detection]) -> trackmpnn::Result<()> {
        for chunk in rows.chunk_by(|a, b| a.frame == b.frame) {
            self.result.write_frame(chunk)?;
        }
        Ok(())
    }

    fn record(&mut self, out: &StepOutput<f64>) -> std::io::Result<()> {
        writeln!(
            self.timing,
            "{} {:.6} {} {}",
            out.frame, out.seconds, out.detection_nodes, out.association_nodes
        )?;
        if let (Some(w), Some(dump)) = (self.graph.as_mut(), out.graph_dump.as_ref()) {
            writeln!(w, "frame {}", out.frame)?;
            w.write_all(dump.as_bytes())?;
        }
        if let Some(w) = self.attention.as_mut() {
            for a in &out.attention {
                for (assoc, far, weight) in &a.weights {
                    writeln!(w, "{} {} {} {} {} {} {}", out.frame, a.detection, a.timestep, a.head, assoc, far, weight)?;
                }
            }
        }
        Ok(())
    }
}

fn track_file(setup: &Setup, name: &str, input: &Path, out_dir: &Path) -> CliResult<Summary> {
    let ctx = |what: &str| format!("sequence `{name}`: {what}");
    let f = File::open(input).runtime_err(|| ctx("cannot open detections"))?;
    let mut reader = FrameReader::new(BufReader::new(f), setup.vocab.clone());
    let extra = |dir: &str, on: bool| -> CliResult<Option<BufWriter<File>>> {
        if !on {
            return Ok(None);
        }
        create_file(&out_dir.join(dir).join(format!("{name}.txt"))).map(Some)
    };
    let mut outputs = Outputs {
        result: FrameWriter::new(create_file(&out_dir.join(format!("{name}.txt")))?),
        timing: create_file(&out_dir.join("timing").join(format!("{name}.txt")))?,
        graph: extra("graph", setup.options.dump_graph)?,
        attention: extra("attention", setup.options.record_attention)?,
    };
    writeln!(outputs.timing, "frame seconds detection_nodes association_nodes").runtime_err(|| ctx("cannot write timing"))?;

    let mut tracker = OnlineTracker::new(setup.params.clone(), setup.window.clone(), setup.decode.clone(), setup.options.clone())
        .usage_err(|| ctx("invalid tracker settings"))?;
    let mut summary = Summary {
        frames: 0,
        rows: 0,
        mean_ms: 0.0,
        max_ms: 0.0,
        max_detection_nodes: 0,
    };
    let mut step = |frame: &[Detection], outputs: &mut Outputs, summary: &mut Summary| -> CliResult<()> {
        let out = tracker.step(frame).runtime_err(|| ctx(&format!("tracking failed at frame {}", summary.frames)))?;
        outputs.write_rows(&out.rows).runtime_err(|| ctx("cannot write results"))?;
        outputs.record(&out).runtime_err(|| ctx("cannot write diagnostics"))?;
        let ms = out.seconds * 1e3;
        summary.frames += 1;
        summary.rows += out.rows.len();
        summary.mean_ms += ms;
        summary.max_ms = summary.max_ms.max(ms);
        summary.max_detection_nodes = summary.max_detection_nodes.max(out.detection_nodes);
        Ok(())
    };
    while let Some((t, targets, _)) = reader.next_frame().runtime_err(|| ctx("cannot read detections"))? {
        while summary.frames < t {
            step(&[], &mut outputs, &mut summary)?;
        }
        step(&targets, &mut outputs, &mut summary)?;
    }
    let rows = tracker.finish().runtime_err(|| ctx("tracking failed at the end"))?;
    summary.rows += rows.len();
    outputs.write_rows(&rows).runtime_err(|| ctx("cannot write results"))?;
    outputs.result.finish().runtime_err(|| ctx("cannot write results"))?;
    for w in [Some(outputs.timing), outputs.graph, outputs.attention].into_iter().flatten() {
        w.into_inner().map_err(|e| e.into_error()).runtime_err(|| ctx("cannot write diagnostics"))?;
    }
    if summary.frames > 0 {
        summary.mean_ms /= summary.frames as f64;
    }
    Ok(summary)
}

pub fn run(args: TrackArgs) -> CliResult<()> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let mut config = ck.config.clone();
    let mut sets = args.sets.clone();
    if let Some(d) = &args.decode {
        d.parse::<DecodeMethod>().usage_err(|| "invalid --decode".into())?;
        sets.push(format!("decode.method={d}"));
    }
    if let Some(c) = args.cws {
        sets.push(format!("window.cws={c}"));
    }
    if let Some(r) = args.rws {
        sets.push(format!("window.rws={r}"));
    }
    apply_sets(&mut config, &sets)?;
    if config.window != ck.config.window {
        info!("window {:?} differs from training window {:?}", config.window, ck.config.window);
    }
    let ck = if config.model != ck.config.model {
        ck.with_model_config(&config.model)
            .usage_err(|| "model overrides are incompatible with the checkpoint".into())?
    } else {
        ck
    };
    let setup = Setup {
        vocab: vocabulary(&config),
        params: ck.params,
        window: config.window.clone(),
        decode: config.decode.clone(),
        options: TrackerOptions {
            record_attention: args.dump_attention,
            dump_graph: args.dump_graph,
        },
    };

    let files = list_sequences(&args.detections)?;
    if files.is_empty() {
        warn!("no detection files in {}", args.detections.display());
    }
    create_dir(&args.out)?;
    create_dir(&args.out.join("timing"))?;
    if args.dump_graph {
        create_dir(&args.out.join("graph"))?;
    }
    if args.dump_attention {
        create_dir(&args.out.join("attention"))?;
    }

    let results: Vec<CliResult<Summary>> =
        files.par_iter().map(|(name, path)| track_file(&setup, name, path, &args.out)).collect();
    let peak = peak_rss_kb().map_or_else(|| "-".to_string(), |k| k.to_string());
    for ((name, _), r) in files.iter().zip(results) {
        let s = r?;
        println!(
            "sequence={name} frames={} rows={} mean_ms={:.3} max_ms={:.3} max_detection_nodes={}",
            s.frames, s.rows, s.mean_ms, s.max_ms, s.max_detection_nodes
        );
    }
    println!("peak_rss_kb={peak}");
    Ok(())
}
