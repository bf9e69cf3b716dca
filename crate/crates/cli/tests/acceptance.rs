//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::panic::AssertUnwindSafe;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackmpnn::autodiff::{sigmoid, Mode, Tape, Tensor};
use trackmpnn::data::{Detection, Sequence};
use trackmpnn::decoder::hungarian_solve;
use trackmpnn::graph::{DetectionInput, DynamicGraph, WindowConfig};
use trackmpnn::metrics::{evaluate, MATCH_IOU};
use trackmpnn::model::{compute_losses, forward, frame_inputs, AssocUpdate, Carry, ModelConfig, ModelParams, RoundOptions};

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const ATTENTION_TOL: f64 = 1e-9;
const DET_PROB: f64 = 0.990;
const ASSOC_PROB: f64 = 0.010;
const PROB_TOL: f64 = 0.001;
const MEMORY_GROWTH: f64 = 0.10;
const LATENCY_MS: f64 = 100.0;
const MAX_ACTIVE_NODES: usize = 50;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("gradient check", gradient_check),
        ("attention normalization", attention_normalization),
        ("hungarian vs brute force", hungarian_oracle),
        ("readout bias init", bias_init),
        ("overfit to perfection", overfit),
        ("noise robustness", noise_robustness),
        ("ablation parity", ablation_parity),
        ("online memory bound", memory_bound),
        ("metrics hand traces", metrics_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = std::panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        failed += usize::from(!o.pass);
        println!(
            "criterion {:>2} {name}: {} ({}; {:.1}s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- helpers

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_trackmpnn")
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Runs the CLI and returns stdout; panics with stderr on failure.
fn cli(args: &[&str]) -> String {
    let out = Command::new(bin()).args(args).output().expect("spawn trackmpnn");
    if !out.status.success() {
        panic!(
            "trackmpnn {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        );
    }
    String::from_utf8(out.stdout).expect("utf-8 output")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// `key=value` lines of a command's output.
fn kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .flat_map(|l| l.split_whitespace())
        .filter_map(|w| w.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

fn num(map: &BTreeMap<String, String>, key: &str) -> f64 {
    map.get(key).unwrap_or_else(|| panic!("missing `{key}`")).parse().expect("number")
}

fn random_tensor(r: &mut ChaCha8Rng, t: &Tensor<f64>) -> Tensor<f64> {
    let data = (0..t.len()).map(|_| r.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(t.rows(), t.cols(), data).unwrap()
}

/// Parameters drawn uniformly from [-1, 1], readouts included.
fn randomized(config: ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::new(config, seed).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xacce);
    for t in p.tensors_mut() {
        *t = random_tensor(&mut r, t);
    }
    p
}

fn random_frame(r: &mut ChaCha8Rng, frame: usize, n: usize, tracks: &[Option<u64>]) -> Vec<Detection> {
    (0..n)
        .map(|i| {
            let x = r.gen_range(0.0..1000.0);
            let y = r.gen_range(0.0..300.0);
            let (w, h) = (r.gen_range(20.0..100.0), r.gen_range(20.0..70.0));
            Detection::new_2d(frame, tracks.get(i).copied().flatten(), "Car", [x, y, x + w, y + h], r.gen_range(0.3..1.0))
        })
        .collect()
}

fn inputs(frame: &[Detection], config: &ModelConfig) -> Vec<DetectionInput<f64>> {
    frame_inputs(frame, config, true)
}

fn window(cws: usize) -> WindowConfig {
    WindowConfig {
        cws,
        rws: 0,
        prune_threshold: 0.0,
        ..WindowConfig::default()
    }
}

// ---------------------------------------------------------------- 1

/// Total loss of a three-frame sequence, accumulated over both rounds.
fn toy_loss(p: &ModelParams<f64>, frames: &[Vec<Detection>], grads: bool) -> (f64, Vec<Tensor<f64>>) {
    let mut p = p.clone();
    let cfg = p.config().clone();
    let mut g = DynamicGraph::initialize_graph(window(3), inputs(&frames[0], &cfg), Some(inputs(&frames[1], &cfg))).unwrap();
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let mut carry = Carry::new();
    let out = forward(&mut tape, &mut p, &vars, &mut g, &mut carry, RoundOptions::train()).unwrap();
    let mut total = compute_losses(&mut tape, &g, &out, cfg.tp_classification).unwrap().total;
    g.update_graph(2, inputs(&frames[2], &cfg), |_, _| {}).unwrap();
    let out = forward(&mut tape, &mut p, &vars, &mut g, &mut carry, RoundOptions::train()).unwrap();
    let l = compute_losses(&mut tape, &g, &out, cfg.tp_classification).unwrap().total;
    total = tape.add(total, l).unwrap();
    let value = tape.value(total).item().unwrap();
    if !grads {
        return (value, Vec::new());
    }
    let gr = tape.backward(total).unwrap();
    let g = vars
        .all()
        .iter()
        .zip(p.tensors())
        .map(|(&v, t)| gr.get_or_zeros(v, t.rows(), t.cols()))
        .collect();
    (value, g)
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    // four, three and four detections; one clutter row per frame
    let frames = vec![
        random_frame(&mut r, 0, 4, &[Some(1), Some(2), Some(3), None]),
        random_frame(&mut r, 1, 3, &[Some(2), Some(1), None]),
        random_frame(&mut r, 2, 4, &[Some(3), None, Some(1), Some(2)]),
    ];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (update, tp) in [(AssocUpdate::Difference, true), (AssocUpdate::Concat, false)] {
        let cfg = ModelConfig {
            hidden_size: 4,
            heads: 2,
            assoc_update: update,
            tp_classification: tp,
            categories: vec!["Car".into()],
        };
        let p = randomized(cfg, 7);
        let (_, analytic) = toy_loss(&p, &frames, true);
        for (k, grad) in analytic.iter().enumerate() {
            for i in 0..grad.len() {
                let mut plus = p.clone();
                plus.get_mut(k).data_mut()[i] += FD_STEP;
                let mut minus = p.clone();
                minus.get_mut(k).data_mut()[i] -= FD_STEP;
                let n = (toy_loss(&plus, &frames, false).0 - toy_loss(&minus, &frames, false).0) / (2.0 * FD_STEP);
                let a = grad.data()[i];
                worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < GRAD_TOL && secs < 10.0,
        format!("max_rel_err={worst:.2e} over {checked} parameters, {secs:.2}s"),
    )
}

// ---------------------------------------------------------------- 2

fn attention_normalization() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let (mut records, mut worst, mut min_w) = (0usize, 0.0f64, f64::INFINITY);
    for seed in 0..1000u64 {
        let heads = r.gen_range(1..=3);
        let cfg = ModelConfig {
            hidden_size: 4,
            heads,
            categories: vec!["Car".into()],
            ..ModelConfig::default()
        };
        let mut p = randomized(cfg.clone(), seed);
        let n_frames = r.gen_range(2..=5);
        let frames: Vec<Vec<Detection>> = (0..n_frames)
            .map(|t| {
                let n = r.gen_range(0..=4);
                random_frame(&mut r, t, n, &[])
            })
            .collect();
        let mut g = DynamicGraph::initialize_graph(window(3), inputs(&frames[0], &cfg), Some(inputs(&frames[1], &cfg))).unwrap();
        for (t, f) in frames.iter().enumerate().skip(2) {
            g.update_graph(t, inputs(f, &cfg), |_, _| {}).unwrap();
        }
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let opts = RoundOptions {
            mode: Mode::Train,
            record_attention: true,
        };
        let out = forward(&mut tape, &mut p, &vars, &mut g, &mut Carry::new(), opts).unwrap();
        let with_edges = g.detections().keys().filter(|&&d| !g.neighbors(d).unwrap().is_empty()).count();
        if out.attention.len() != with_edges * heads {
            return outcome(false, format!("graph {seed}: {} records for {with_edges} nodes x {heads} heads", out.attention.len()));
        }
        for rec in &out.attention {
            let sum: f64 = rec.weights.iter().map(|w| w.2).sum();
            worst = worst.max((sum - 1.0).abs());
            min_w = rec.weights.iter().map(|w| w.2).fold(min_w, f64::min);
            records += 1;
        }
    }
    outcome(
        worst <= ATTENTION_TOL && min_w > 0.0,
        format!("{records} node-head records, max |sum-1|={worst:.1e}, min weight={min_w:.1e}"),
    )
}

// ---------------------------------------------------------------- 3

/// Minimum total cost over all one-to-one assignments of the smaller side.
fn brute_force(cost: &[Vec<f64>]) -> f64 {
    let (n, m) = (cost.len(), cost[0].len());
    let at = |i: usize, j: usize| if n <= m { cost[i][j] } else { cost[j][i] };
    let (small, large) = (n.min(m), n.max(m));
    fn go(i: usize, small: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, at: &dyn Fn(usize, usize) -> f64) {
        if i == small {
            *best = best.min(acc);
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, small, used, acc + at(i, j), best, at);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, small, &mut vec![false; large], 0.0, &mut best, &at);
    best
}

fn hungarian_oracle() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for k in 0..1000 {
        let (n, m) = (r.gen_range(1..=6), r.gen_range(1..=6));
        // integer costs in half the cases so ties are common and sums exact
        let integer = k % 2 == 0;
        let cost: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| if integer { r.gen_range(0..10) as f64 } else { r.gen_range(0.0..1.0) })
                    .collect()
            })
            .collect();
        let sol = hungarian_solve(&cost).unwrap();
        let mut used = vec![false; m];
        let mut total = 0.0;
        let mut assigned = 0;
        for (i, c) in sol.iter().enumerate() {
            if let Some(j) = *c {
                if used[j] {
                    return outcome(false, format!("matrix {k}: column {j} used twice"));
                }
                used[j] = true;
                total += cost[i][j];
                assigned += 1;
            }
        }
        let best = brute_force(&cost);
        let exact = if integer { total == best } else { (total - best).abs() <= 1e-12 };
        if assigned != n.min(m) || !exact {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches in 1000 matrices"))
}

// ---------------------------------------------------------------- 4

fn bias_init() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let (mut det_dev, mut assoc_dev, mut n) = (0.0f64, 0.0f64, 0);
    for seed in 0..20 {
        let cfg = ModelConfig::default();
        let mut p = ModelParams::<f64>::new(cfg.clone(), seed).unwrap();
        let a = random_frame(&mut r, 0, 4, &[]);
        let b = random_frame(&mut r, 1, 3, &[]);
        for opts in [RoundOptions::train(), RoundOptions::infer()] {
            let mut g = DynamicGraph::initialize_graph(window(5), inputs(&a, &cfg), Some(inputs(&b, &cfg))).unwrap();
            let mut tape = Tape::new();
            let vars = p.register(&mut tape);
            let out = forward(&mut tape, &mut p, &vars, &mut g, &mut Carry::new(), opts).unwrap();
            for &o in tape.value(out.det_logits.unwrap()).data() {
                det_dev = det_dev.max((sigmoid(o) - DET_PROB).abs());
                n += 1;
            }
            for &o in tape.value(out.assoc_logits.unwrap()).data() {
                assoc_dev = assoc_dev.max((sigmoid(o) - ASSOC_PROB).abs());
                n += 1;
            }
        }
    }
    outcome(
        det_dev <= PROB_TOL && assoc_dev <= PROB_TOL,
        format!("{n} outputs, max |p_det-0.990|={det_dev:.1e}, max |p_assoc-0.010|={assoc_dev:.1e}"),
    )
}

// ---------------------------------------------------------------- 5, 10

struct Pipeline {
    checkpoint: PathBuf,
    results: PathBuf,
    report: BTreeMap<String, String>,
    log: String,
}

/// Two crossing objects, 20 noiseless frames, 200 single-chunk epochs.
fn overfit_pipeline(dir: &Path) -> Pipeline {
    let data = dir.join("data");
    cli(&["synth", "--out", s(&data), "--scenario", "crossing", "--objects", "2", "--frames", "20", "--seed", "0"]);
    let ckpt = dir.join("model.ckpt");
    let log = cli(&[
        "train",
        "--gt",
        s(&data.join("gt")),
        "--out",
        s(&ckpt),
        "--set",
        "window.cws=5",
        "--set",
        "window.rws=0",
        "--set",
        "train.epochs=200",
        "--set",
        "train.lr=0.01",
        "--set",
        "train.seed=0",
    ]);
    let results = dir.join("results");
    cli(&["track", "--checkpoint", s(&ckpt), "--detections", s(&data.join("det")), "--out", s(&results)]);
    let report = kv(&cli(&["eval", "--gt", s(&data.join("gt")), "--results", s(&results)]));
    Pipeline {
        checkpoint: ckpt,
        results,
        report,
        log,
    }
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let p = overfit_pipeline(dir.path());
    let secs = start.elapsed().as_secs_f64();
    let iterations = p.log.lines().filter(|l| l.starts_with("epoch=")).count();
    let (mota, ids) = (num(&p.report, "all.mota"), num(&p.report, "all.ids"));
    outcome(
        mota == 1.0 && ids == 0.0 && iterations <= 200 && secs < 120.0,
        format!("MOTA={mota} IDS={ids} after {iterations} iterations, {secs:.1}s"),
    )
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (pa, pb) = (overfit_pipeline(a.path()), overfit_pipeline(b.path()));
    let ckpt_same = std::fs::read(&pa.checkpoint).unwrap() == std::fs::read(&pb.checkpoint).unwrap();
    let read = |p: &Path| std::fs::read(p.join("0000.txt")).unwrap();
    let results_same = read(&pa.results) == read(&pb.results);
    let report_same = pa.report == pb.report;
    outcome(
        ckpt_same && results_same && report_same,
        format!("checkpoint identical={ckpt_same}, result file identical={results_same}, report identical={report_same}"),
    )
}

// ---------------------------------------------------------------- 6

fn noise_robustness() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let noisy = ["--objects", "4", "--frames", "40", "--miss-rate", "0.1", "--fp-rate", "0.1", "--set", "synth.velocity=2,10"];
    let synth = |out: &Path, seed: &str, n: &str| {
        let mut args = vec!["synth", "--out", s(out), "--seed", seed, "--sequences", n];
        args.extend(noisy);
        cli(&args);
    };
    synth(&d.join("train"), "100", "8");
    synth(&d.join("test"), "5000", "20");
    let ckpt = d.join("model.ckpt");
    cli(&[
        "train",
        "--gt",
        s(&d.join("train/gt")),
        "--detections",
        s(&d.join("train/det")),
        "--out",
        s(&ckpt),
        "--set",
        "model.hidden_size=32",
        "--set",
        "train.epochs=60",
        "--set",
        "train.lr=0.003",
    ]);
    let mut mean = BTreeMap::new();
    for method in ["greedy", "hungarian"] {
        let out = d.join(method);
        cli(&["track", "--checkpoint", s(&ckpt), "--detections", s(&d.join("test/det")), "--out", s(&out), "--decode", method]);
        let report = kv(&cli(&["eval", "--gt", s(&d.join("test/gt")), "--results", s(&out)]));
        let seqs = (0..20).map(|i| num(&report, &format!("{i:04}.ids"))).sum::<f64>();
        mean.insert(method, seqs / 20.0);
    }
    let (g, h) = (mean["greedy"], mean["hungarian"]);
    outcome(h <= g, format!("mean IDS over 20 seeds: hungarian={h:.2} greedy={g:.2} (directional)"))
}

// ---------------------------------------------------------------- 7

fn valid_report(r: &BTreeMap<String, String>) -> bool {
    let f = |k: &str| num(r, &format!("all.{k}"));
    let (mota, overlap, mt, ml) = (f("mota"), f("motp_overlap"), f("mt"), f("ml"));
    let (fp, fn_, ids, gt) = (f("fp"), f("fn"), f("ids"), f("gt"));
    mota.is_finite()
        && mota <= 1.0
        && (0.0..=1.0).contains(&overlap)
        && (0.0..=1.0).contains(&mt)
        && (0.0..=1.0).contains(&ml)
        && mt + ml <= 1.0
        && fn_ <= gt
        && (mota - (1.0 - (fn_ + fp + ids) / gt.max(1.0))).abs() < 1e-12
}

fn ablation_parity() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    cli(&["synth", "--out", s(&data), "--sequences", "3", "--objects", "3", "--frames", "30", "--seed", "40", "--miss-rate", "0.1", "--fp-rate", "0.1"]);
    let mut lines = Vec::new();
    let mut ok = true;
    let mut presets: Vec<PathBuf> = std::fs::read_dir(workspace().join("configs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "cfg"))
        .collect();
    presets.sort();
    for cfg in &presets {
        let name = cfg.file_stem().unwrap().to_string_lossy().into_owned();
        let ckpt = d.join(format!("{name}.ckpt"));
        let log = cli(&[
            "train",
            "--config",
            s(cfg),
            "--gt",
            s(&data.join("gt")),
            "--detections",
            s(&data.join("det")),
            "--out",
            s(&ckpt),
            "--set",
            "train.epochs=20",
            "--set",
            "train.lr=0.003",
        ]);
        let finite = log
            .lines()
            .filter(|l| l.starts_with("epoch="))
            .all(|l| kv(l).get("loss").and_then(|v| v.parse::<f64>().ok()).is_some_and(f64::is_finite));
        let out = d.join(&name);
        cli(&["track", "--checkpoint", s(&ckpt), "--detections", s(&data.join("det")), "--out", s(&out)]);
        let report = kv(&cli(&["eval", "--gt", s(&data.join("gt")), "--results", s(&out)]));
        let valid = finite && valid_report(&report);
        ok &= valid;
        lines.push(format!("{name}:{}", if valid { format!("MOTA={:.3}", num(&report, "all.mota")) } else { "invalid".into() }));
    }
    let wanted = ["B", "B-concat", "B-no-tp"];
    let covered = wanted.iter().all(|w| presets.iter().any(|p| p.file_stem().unwrap() == *w));
    outcome(ok && covered, lines.join(" "))
}

// ---------------------------------------------------------------- 8

struct TrackRun {
    peak_kb: f64,
    max_ms: f64,
    max_nodes: usize,
}

fn track_run(dir: &Path, ckpt: &Path, frames: usize, moving: bool) -> TrackRun {
    let data = dir.join(format!("{}{frames}", if moving { "moving" } else { "static" }));
    let mut args = vec!["synth", "--out", s(&data), "--objects", "8", "--seed", "3"];
    let n = frames.to_string();
    args.extend(["--frames", n.as_str()]);
    if moving {
        args.extend(["--set", "synth.velocity=0,0.5", "--fp-rate", "0.1"]);
    } else {
        args.extend(["--set", "synth.velocity=0,0", "--set", "synth.box_size=30,60"]);
    }
    cli(&args);
    let out = data.join("out");
    let report = kv(&cli(&["track", "--checkpoint", s(ckpt), "--detections", s(&data.join("det")), "--out", s(&out)]));
    TrackRun {
        peak_kb: num(&report, "peak_rss_kb"),
        max_ms: num(&report, "max_ms"),
        max_nodes: num(&report, "max_detection_nodes") as usize,
    }
}

fn memory_bound() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("train");
    cli(&["synth", "--out", s(&data), "--objects", "4", "--frames", "30", "--seed", "1"]);
    let ckpt = d.join("model.ckpt");
    cli(&["train", "--gt", s(&data.join("gt")), "--out", s(&ckpt), "--set", "train.epochs=2"]);

    // Constant window contents isolate the effect of sequence length; the
    // moving scene with clutter is reported alongside.
    let short = track_run(d, &ckpt, 100, false);
    let long = track_run(d, &ckpt, 1000, false);
    let growth = long.peak_kb / short.peak_kb - 1.0;
    let moving_short = track_run(d, &ckpt, 100, true);
    let moving_long = track_run(d, &ckpt, 1000, true);
    let moving_growth = moving_long.peak_kb / moving_short.peak_kb - 1.0;
    // latency is judged on runs within the node budget
    let runs: Vec<&TrackRun> = [&short, &long, &moving_short, &moving_long]
        .into_iter()
        .filter(|r| r.max_nodes <= MAX_ACTIVE_NODES)
        .collect();
    let max_ms = runs.iter().map(|r| r.max_ms).fold(0.0, f64::max);
    let max_nodes = runs.iter().map(|r| r.max_nodes).max().unwrap_or(0);
    outcome(
        growth < MEMORY_GROWTH && !runs.is_empty() && max_ms < LATENCY_MS,
        format!(
            "peak RSS 100f={}KB 1000f={}KB growth={:.1}%; moving scene growth={:.1}%; max latency={max_ms:.2}ms over {} runs with <= {max_nodes} detection nodes",
            short.peak_kb,
            long.peak_kb,
            100.0 * growth,
            100.0 * moving_growth,
            runs.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn row(frame: usize, id: u64, bbox: [f64; 4]) -> Detection {
    Detection::new_2d(frame, Some(id), "Car", bbox, 1.0)
}

fn seq(rows: Vec<Detection>) -> Sequence {
    let mut s = Sequence::new("hand");
    s.ensure_frames(4);
    for r in rows {
        let f = r.frame;
        s.frames[f].push(r);
    }
    s
}

const A: [f64; 4] = [0.0, 0.0, 10.0, 10.0];
const B: [f64; 4] = [100.0, 0.0, 110.0, 10.0];
const FAR: [f64; 4] = [500.0, 200.0, 520.0, 220.0];
/// Overlaps `A` with IoU 80/100.
const A_SHORT: [f64; 4] = [0.0, 0.0, 10.0, 8.0];

fn check(failures: &mut Vec<String>, name: &str, got: Vec<f64>, want: Vec<f64>) {
    if got != want {
        failures.push(format!("{name}: got {got:?}, want {want:?}"));
    }
}

fn metrics_oracle() -> Outcome {
    let two_tracks = || seq((0..4).flat_map(|t| [row(t, 0, A), row(t, 1, B)]).collect());
    let mut failures = Vec::new();

    // perfect: hypothesis ids differ from ground truth ids, boxes identical
    let hyp = seq((0..4).flat_map(|t| [row(t, 7, A), row(t, 9, B)]).collect());
    let r = evaluate(&two_tracks(), &hyp, MATCH_IOU).unwrap();
    check(
        &mut failures,
        "perfect",
        vec![r.mota, r.motp_overlap, r.mostly_tracked, r.mostly_lost, r.id_switches as f64, r.fragmentations as f64, r.fp as f64, r.fn_ as f64],
        vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    );

    // 1 FP + 1 FN: track 1 missed in frame 2, clutter in frame 3, one
    // shortened box in frame 0.
    // GT 8, matches 7, MOTA 1 - 2/8, overlap (6 + 0.8) / 7, track 1 covered
    // 3/4 (neither MT nor ML), one fragmentation.
    let mut rows = vec![row(0, 7, A_SHORT), row(0, 9, B)];
    rows.extend((1..4).map(|t| row(t, 7, A)));
    rows.extend([row(1, 9, B), row(3, 9, B), row(3, 11, FAR)]);
    let r = evaluate(&two_tracks(), &seq(rows), MATCH_IOU).unwrap();
    let overlap_ok = (r.motp_overlap - 6.8 / 7.0).abs() < 1e-12;
    if !overlap_ok {
        failures.push(format!("fp+fn overlap {}", r.motp_overlap));
    }
    check(
        &mut failures,
        "fp+fn",
        vec![r.mota, r.mostly_tracked, r.mostly_lost, r.id_switches as f64, r.fragmentations as f64, r.fp as f64, r.fn_ as f64, r.gt_count as f64],
        vec![0.75, 0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 8.0],
    );

    // one GT track, hypothesis id changes from 5 to 6 at frame 2:
    // IDS 1, FRAG 1, MOTA 1 - 1/4
    let gt = seq((0..4).map(|t| row(t, 0, A)).collect());
    let hyp = seq((0..4).map(|t| row(t, if t < 2 { 5 } else { 6 }, A)).collect());
    let r = evaluate(&gt, &hyp, MATCH_IOU).unwrap();
    check(
        &mut failures,
        "id switch",
        vec![r.mota, r.motp_overlap, r.id_switches as f64, r.fragmentations as f64, r.fp as f64, r.fn_ as f64, r.mostly_tracked],
        vec![0.75, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0],
    );

    let detail = if failures.is_empty() {
        "perfect MOTA=1; 1FP+1FN MOTA=0.75; ID switch IDS=1 MOTA=0.75".to_string()
    } else {
        failures.join("; ")
    };
    outcome(failures.is_empty(), detail)
}

