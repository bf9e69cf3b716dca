use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::autodiff::{sigmoid, Mode, Tape, Tensor};
use crate::graph::{DetectionInput, DynamicGraph, Truth, WindowConfig};
use crate::test_util::{random_tensor, rng, FD_STEP};

fn small_config(h: usize) -> ModelConfig {
    ModelConfig {
        hidden_size: h,
        categories: vec!["Car".into(), "Pedestrian".into()],
        ..ModelConfig::default()
    }
}

/// Every array, readouts included, drawn uniformly from [−1, 1].
fn randomized(config: ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::new(config, seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for t in p.tensors_mut() {
        *t = random_tensor(&mut r, t.rows(), t.cols());
    }
    p
}

fn det(features: Vec<f64>, source_index: usize, track: Option<u64>) -> DetectionInput<f64> {
    DetectionInput {
        features,
        source_index,
        truth: Some(Truth {
            track_id: track,
            ignore: false,
        }),
    }
}

fn random_frame(r: &mut rand_chacha::ChaCha8Rng, n: usize, tracks: &[u64]) -> Vec<DetectionInput<f64>> {
    (0..n)
        .map(|i| {
            let f = (0..7).map(|_| r.gen_range(-1.0..1.0)).collect();
            det(f, i, tracks.get(i).copied())
        })
        .collect()
}

fn window(cws: usize) -> WindowConfig {
    WindowConfig {
        cws,
        rws: 0,
        prune_threshold: 0.0,
        ..WindowConfig::default()
    }
}

#[test]
fn feature_layout() {
    let x: Vec<f64> = build_features([100.0, 50.0, 150.0, 90.0], 0.9, 0, 3);
    assert_eq!(x, vec![100.0, 50.0, 50.0, 40.0, 0.9, 1.0, 0.0, 0.0]);
    let x: Vec<f64> = build_features([0.0, 0.0, 1.0, 1.0], 0.0, 0, 3);
    assert_eq!(x[4], 0.0);
    let x: Vec<f64> = build_features([0.0, 0.0, 1.0, 1.0], 0.5, 0, 1);
    assert_eq!(&x[5..], &[1.0]);
}

#[test]
fn construction_sets_readout_biases_and_shapes() {
    let p = ModelParams::<f64>::new(ModelConfig::default(), 1).unwrap();
    let l = p.layout();
    assert_eq!(p.get(l.det_out_b).item(), Some(4.595));
    assert_eq!(p.get(l.assoc_out_b).item(), Some(-4.595));
    assert_eq!(p.get(l.enc_w1).shape(), (64, 8));
    assert_eq!(p.get(l.assoc_msg_w).shape(), (64, 64));
    let c = ModelConfig {
        assoc_update: AssocUpdate::Concat,
        heads: 3,
        ..ModelConfig::default()
    };
    let p = ModelParams::<f64>::new(c, 1).unwrap();
    assert_eq!(p.get(p.layout().assoc_msg_w).shape(), (64, 128));
    assert_eq!(p.layout().attention.len(), 3);
    let bound = 1.0 / 8f64.sqrt();
    assert!(p.get(p.layout().enc_w1).data().iter().all(|v| v.abs() <= bound));
    assert!(ModelParams::<f64>::new(small_config(0), 1).is_err());
}

#[test]
fn set_named_checks_shape() {
    let mut p = ModelParams::<f64>::new(small_config(2), 1).unwrap();
    assert!(p.set_named("det_out.b", Tensor::scalar(1.0)).is_ok());
    let err = p.set_named("det_out.w", Tensor::zeros(2, 2)).unwrap_err();
    assert!(err.to_string().contains("det_out.w"));
    assert!(p.set_named("nope", Tensor::scalar(1.0)).is_err());
}

#[test]
fn zero_encoder_outputs_second_bias() {
    let mut p = ModelParams::<f64>::new(small_config(3), 1).unwrap();
    let l = p.layout().clone();
    for s in [l.enc_w1, l.enc_b1, l.enc_w2, l.bn_beta] {
        *p.get_mut(s) = Tensor::zeros(p.get(s).rows(), p.get(s).cols());
    }
    *p.get_mut(l.enc_b2) = Tensor::row_vector(&[0.5, -1.0, 2.0]);
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let x = tape.constant(random_tensor(&mut rng(3), 4, 7));
    let mut stats = p.bn_stats.clone();
    let h = encode_detections(&mut tape, &vars, &l, &mut stats, x, Mode::Train).unwrap();
    for i in 0..4 {
        assert_eq!(tape.value(h).row(i), &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn encoder_is_deterministic_and_shaped() {
    for c in 1..4 {
        let mut cfg = small_config(5);
        cfg.categories = (0..c).map(|i| format!("c{i}")).collect();
        let p = randomized(cfg, 4);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let row = random_tensor(&mut rng(5), 1, 5 + c);
        let mut x = row.data().to_vec();
        x.extend_from_slice(row.data());
        let x = tape.constant(Tensor::from_vec(2, 5 + c, x).unwrap());
        let mut stats = p.bn_stats.clone();
        let l = p.layout().clone();
        let h = encode_detections(&mut tape, &vars, &l, &mut stats, x, Mode::Infer).unwrap();
        assert_eq!(tape.shape(h), (2, 5));
        assert_eq!(tape.value(h).row(0), tape.value(h).row(1));
    }
}

fn one_head(h: usize) -> (ModelParams<f64>, AttentionSlots) {
    let p = randomized(small_config(h), 9);
    let head = p.layout().attention[0];
    (p, head)
}

fn attention_values(p: &ModelParams<f64>, hd: Tensor<f64>, edges: &Edges) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let hd = tape.constant(hd);
    let a = attention_head(&mut tape, &vars, p.layout().attention[0], hd, edges).unwrap();
    tape.value(a).data().to_vec()
}

#[test]
fn attention_singleton_and_symmetric_cases() {
    let (p, _) = one_head(3);
    let mut e = Edges::default();
    e.push(0, 0, 1);
    assert_eq!(attention_values(&p, random_tensor(&mut rng(1), 2, 3), &e), vec![1.0]);

    let mut hd = random_tensor(&mut rng(2), 3, 3);
    let r1 = hd.row(1).to_vec();
    hd.row_mut(2).copy_from_slice(&r1);
    let mut e = Edges::default();
    e.push(0, 0, 1);
    e.push(0, 1, 2);
    for w in attention_values(&p, hd, &e) {
        assert!((w - 0.5).abs() < 1e-12);
    }
}

#[test]
fn attention_matches_scripted_evaluation() {
    let (mut p, head) = one_head(2);
    *p.get_mut(head.w) = Tensor::from_rows(&[[0.3, -0.2], [0.1, 0.4]]).unwrap();
    *p.get_mut(head.a) = Tensor::row_vector(&[0.7, -1.1]);
    let rows = [[0.5, -0.25], [1.0, 0.0], [-0.5, 0.75], [0.2, 0.2]];
    let hd = Tensor::from_rows(&rows).unwrap();
    let mut e = Edges::default();
    for j in 1..4 {
        e.push(0, j - 1, j);
    }
    let got = attention_values(&p, hd, &e);

    // independent evaluation
    let w = [[0.3, -0.2], [0.1, 0.4]];
    let a = [0.7, -1.1];
    let proj = |h: [f64; 2]| [w[0][0] * h[0] + w[0][1] * h[1], w[1][0] * h[0] + w[1][1] * h[1]];
    let pd = proj(rows[0]);
    let logits: Vec<f64> = (1..4)
        .map(|j| {
            let pj = proj(rows[j]);
            let s = a[0] * (pd[0] - pj[0]).abs() + a[1] * (pd[1] - pj[1]).abs();
            if s < 0.0 {
                0.2 * s
            } else {
                s
            }
        })
        .collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    for (g, l) in got.iter().zip(&logits) {
        assert!((g - l.exp() / z).abs() < 1e-10);
    }
}

fn gru_zero(p: &mut ModelParams<f64>, slots: GruSlots) {
    for s in [
        slots.w_z, slots.w_r, slots.w_n, slots.u_z, slots.u_r, slots.u_n, slots.b_z, slots.b_r,
        slots.b_n,
    ] {
        let (r, c) = p.get(s).shape();
        *p.get_mut(s) = Tensor::zeros(r, c);
    }
}

#[test]
fn detection_update_cases() {
    let mut p = randomized(small_config(3), 11);
    let l = p.layout().clone();
    let hd0 = random_tensor(&mut rng(12), 3, 3);
    let ha0 = random_tensor(&mut rng(13), 2, 3);

    // isolated detection gets GRU(h, 0)
    let run = |p: &ModelParams<f64>, edges: &Edges| {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let hd = tape.constant(hd0.clone());
        let ha = tape.constant(ha0.clone());
        let (h, _) = update_detections(&mut tape, &vars, &l, hd, Some(ha), edges).unwrap();
        tape.value(h).clone()
    };
    let mut e = Edges::default();
    e.push(0, 0, 1);
    e.push(0, 1, 2);
    e.push(1, 0, 0);
    e.push(2, 1, 0);
    let with_edges = run(&p, &e);
    let none = run(&p, &Edges::default());
    let mut e_iso = e.clone();
    // detection 2 loses its edge
    e_iso.det.pop();
    e_iso.assoc.pop();
    e_iso.far.pop();
    let iso = run(&p, &e_iso);
    assert_eq!(iso.row(2), none.row(2));
    assert_ne!(with_edges.row(2), none.row(2));

    // permuting edge enumeration leaves the result unchanged
    let mut perm = Edges::default();
    for i in [3, 1, 2, 0] {
        perm.push(e.det[i], e.assoc[i], e.far[i]);
    }
    let permuted = run(&p, &perm);
    for (a, b) in permuted.data().iter().zip(with_edges.data()) {
        assert!((a - b).abs() < 1e-14);
    }

    // zero GRU halves the state
    gru_zero(&mut p, l.det_gru);
    let halved = run(&p, &e);
    for (a, b) in halved.data().iter().zip(hd0.data()) {
        assert_eq!(*a, 0.5 * b);
    }
}

fn message(p: &ModelParams<f64>, update: AssocUpdate, e: &Tensor<f64>, l: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let (e, l) = (tape.constant(e.clone()), tape.constant(l.clone()));
    let m = association_message(&mut tape, &vars, p.layout(), update, e, l).unwrap();
    tape.value(m).clone()
}

#[test]
fn difference_message_cases() {
    let p = randomized(small_config(3), 21);
    let b = p.get(p.layout().assoc_msg_b).clone();
    let h = random_tensor(&mut rng(22), 1, 3);
    assert_eq!(message(&p, AssocUpdate::Difference, &h, &h), b);

    let other = random_tensor(&mut rng(23), 1, 3);
    let fwd = message(&p, AssocUpdate::Difference, &h, &other);
    let rev = message(&p, AssocUpdate::Difference, &other, &h);
    for i in 0..3 {
        let (f, r, bb) = (fwd.data()[i], rev.data()[i], b.data()[i]);
        assert!(((f - bb) + (r - bb)).abs() < 1e-14);
    }
}

#[test]
fn concat_with_identity_blocks_reproduces_difference() {
    let h = 3;
    let mut diff = randomized(small_config(h), 31);
    let mut eye = Tensor::zeros(h, h);
    for i in 0..h {
        eye.set(i, i, 1.0);
    }
    let l = diff.layout().clone();
    *diff.get_mut(l.assoc_msg_w) = eye;
    *diff.get_mut(l.assoc_msg_b) = Tensor::zeros(1, h);

    let mut cat = randomized(
        ModelConfig {
            assoc_update: AssocUpdate::Concat,
            ..small_config(h)
        },
        31,
    );
    let lc = cat.layout().clone();
    let mut w = Tensor::zeros(h, 2 * h);
    for i in 0..h {
        w.set(i, i, 1.0);
        w.set(i, h + i, -1.0);
    }
    *cat.get_mut(lc.assoc_msg_w) = w;
    *cat.get_mut(lc.assoc_msg_b) = Tensor::zeros(1, h);

    let e = random_tensor(&mut rng(32), 4, h);
    let later = random_tensor(&mut rng(33), 4, h);
    let md = message(&diff, AssocUpdate::Difference, &e, &later);
    let mc = message(&cat, AssocUpdate::Concat, &e, &later);
    // [I ‖ −I] gives h_earlier − h_later, the negated difference message
    for (a, b) in md.data().iter().zip(mc.data()) {
        assert!((a + b).abs() < 1e-15);
    }
}

#[test]
fn fresh_params_read_out_initial_probabilities() {
    let mut p = ModelParams::<f64>::new(small_config(4), 2).unwrap();
    let mut r = rng(40);
    let mut g = DynamicGraph::initialize_graph(
        window(5),
        random_frame(&mut r, 2, &[]),
        Some(random_frame(&mut r, 3, &[])),
    )
    .unwrap();
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let out = forward(&mut tape, &mut p, &vars, &mut g, &mut Carry::new(), RoundOptions::train()).unwrap();
    let od = tape.value(out.det_logits.unwrap());
    let oa = tape.value(out.assoc_logits.unwrap());
    assert_eq!(od.rows() + oa.rows(), 5 + 6);
    for &o in od.data() {
        assert!((o - 4.595).abs() < 0.05);
        assert!((sigmoid(o) - 0.990).abs() < 1e-3);
    }
    for &o in oa.data() {
        assert!((sigmoid(o) - 0.010).abs() < 1e-3);
    }
}

#[test]
fn forward_edge_cases_and_iteration_counters() {
    let mut p = randomized(small_config(4), 3);
    let mut r = rng(41);

    let mut empty = DynamicGraph::initialize_graph(window(3), vec![], Some(vec![])).unwrap();
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let out = forward(&mut tape, &mut p, &vars, &mut empty, &mut Carry::new(), RoundOptions::infer()).unwrap();
    assert!(out.det_logits.is_none() && out.assoc_logits.is_none());

    let mut single = DynamicGraph::initialize_graph(window(3), random_frame(&mut r, 1, &[]), None).unwrap();
    let out = forward(&mut tape, &mut p, &vars, &mut single, &mut Carry::new(), RoundOptions::infer()).unwrap();
    assert_eq!(tape.shape(out.det_logits.unwrap()), (1, 1));
    assert!(out.assoc_logits.is_none());

    let mut g = DynamicGraph::initialize_graph(
        window(3),
        random_frame(&mut r, 2, &[]),
        Some(random_frame(&mut r, 2, &[])),
    )
    .unwrap();
    let mut outs = Vec::new();
    for _ in 0..2 {
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        forward(&mut tape, &mut p, &vars, &mut g, &mut Carry::new(), RoundOptions::infer()).unwrap();
        outs.push(g.dump());
    }
    assert!(g.detections().values().all(|d| d.iterations == 2));
    assert!(g.associations().values().all(|a| a.iterations == 2));
    assert_ne!(outs[0], outs[1]);
}

#[test]
fn carried_and_stored_hiddens_agree() {
    // one tape across two rounds vs a fresh tape per round
    let run = |shared: bool| {
        let mut p = randomized(small_config(4), 5);
        let mut r = rng(42);
        let mut g = DynamicGraph::initialize_graph(
            window(3),
            random_frame(&mut r, 2, &[]),
            Some(random_frame(&mut r, 2, &[])),
        )
        .unwrap();
        let mut carry = Carry::new();
        let mut tape = Tape::new();
        let mut vars = p.register(&mut tape);
        let mut logits = Vec::new();
        for t in 2..4 {
            if !shared {
                tape = Tape::new();
                vars = p.register(&mut tape);
            }
            let out = forward(&mut tape, &mut p, &vars, &mut g, &mut carry, RoundOptions::infer()).unwrap();
            logits.push(tape.value(out.det_logits.unwrap()).clone());
            g.update_graph(t, random_frame(&mut r, 2, &[]), |_, _| {}).unwrap();
        }
        logits
    };
    assert_eq!(run(true), run(false));
}

#[test]
fn relabeling_permutes_outputs() {
    let mut r = rng(50);
    let frames: Vec<Vec<DetectionInput<f64>>> = (0..4).map(|_| random_frame(&mut r, 3, &[])).collect();
    let run = |order: &[usize]| {
        let mut p = randomized(small_config(4), 6);
        let permuted = |f: &Vec<DetectionInput<f64>>| order.iter().map(|&i| f[i].clone()).collect();
        let mut g = DynamicGraph::initialize_graph(window(3), permuted(&frames[0]), Some(permuted(&frames[1]))).unwrap();
        let mut results = Vec::new();
        for (t, f) in frames.iter().enumerate().skip(2) {
            let mut tape = Tape::new();
            let vars = p.register(&mut tape);
            forward(&mut tape, &mut p, &vars, &mut g, &mut Carry::new(), RoundOptions::train()).unwrap();
            g.update_graph(t, permuted(f), |_, _| {}).unwrap();
        }
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        forward(&mut tape, &mut p, &vars, &mut g, &mut Carry::new(), RoundOptions::train()).unwrap();
        for d in g.detections().values() {
            results.push(((d.timestep, d.source_index), d.last_output.unwrap()));
        }
        results.sort_by_key(|a| a.0);
        results
    };
    let a = run(&[0, 1, 2]);
    let b = run(&[2, 0, 1]);
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.0, y.0);
        assert!((x.1 - y.1).abs() < 1e-12);
    }
}

/// Logits as constants so loss terms can be checked in isolation.
fn loss_of(g: &DynamicGraph<f64>, od: &[f64], oa: &[f64], tp: bool) -> LossBundle<f64> {
    let mut tape = Tape::new();
    let out = RoundOutput {
        det_ids: g.detections().keys().copied().collect(),
        assoc_ids: g.associations().keys().copied().collect(),
        det_logits: Some(tape.constant(Tensor::column(od))),
        assoc_logits: (!oa.is_empty()).then(|| tape.constant(Tensor::column(oa))),
        attention: vec![],
    };
    let l = compute_losses(&mut tape, g, &out, tp).unwrap();
    l.values(&tape)
}

#[test]
fn loss_examples() {
    let g = DynamicGraph::initialize_graph(
        window(3),
        vec![det(vec![0.0; 7], 0, Some(1))],
        Some(vec![det(vec![0.0; 7], 0, Some(1))]),
    )
    .unwrap();
    let l = loss_of(&g, &[0.0, 0.0], &[0.0], true);
    let ln2 = std::f64::consts::LN_2;
    assert!((l.l_bce_dn - ln2).abs() < 1e-12);
    assert!((l.l_bce_an - ln2).abs() < 1e-12);
    // singleton competing sets with a positive member
    assert_eq!(l.l_ce_an, 0.0);
    assert!((l.total - (l.l_bce_dn + l.l_bce_an + l.l_ce_an)).abs() < 1e-15);

    let l = loss_of(&g, &[40.0, 40.0], &[40.0], true);
    assert!(l.total < 1e-12);

    // one FP among three detections, saturated correct outputs
    let g = DynamicGraph::initialize_graph(
        window(3),
        vec![det(vec![0.0; 7], 0, Some(1)), det(vec![0.0; 7], 1, None)],
        Some(vec![det(vec![0.0; 7], 0, Some(1))]),
    )
    .unwrap();
    let l = loss_of(&g, &[40.0, -40.0, 40.0], &[40.0, -40.0], true);
    assert!(l.total < 1e-12, "{l:?}");

    let unlabeled = DynamicGraph::initialize_graph(window(3), vec![DetectionInput { features: vec![0.0; 7], source_index: 0, truth: None }], None).unwrap();
    let mut tape = Tape::new();
    let out = RoundOutput {
        det_ids: vec![0],
        det_logits: Some(tape.constant(Tensor::column(&[0.0]))),
        ..RoundOutput::default()
    };
    assert!(compute_losses(&mut tape, &unlabeled, &out, true).is_err());
}

#[test]
fn competing_sets_without_positive_contribute_nothing() {
    let g = DynamicGraph::initialize_graph(
        window(3),
        vec![det(vec![0.0; 7], 0, Some(1)), det(vec![0.0; 7], 1, Some(2))],
        Some(vec![det(vec![0.0; 7], 0, Some(3))]),
    )
    .unwrap();
    let l = loss_of(&g, &[1.0, 2.0, 3.0], &[0.3, -1.7], true);
    assert_eq!(l.l_ce_an, 0.0);
    assert!(l.l_bce_an > 0.0);
}

#[test]
fn ignored_detections_leave_the_loss() {
    let mut ignored = det(vec![0.0; 7], 1, None);
    ignored.truth = Some(Truth { track_id: None, ignore: true });
    let g = DynamicGraph::initialize_graph(
        window(3),
        vec![det(vec![0.0; 7], 0, Some(1)), ignored],
        Some(vec![det(vec![0.0; 7], 0, Some(1))]),
    )
    .unwrap();
    let a = loss_of(&g, &[0.0, 5.0, 0.0], &[0.0, 3.0], true);
    let b = loss_of(&g, &[0.0, -5.0, 0.0], &[0.0, -2.0], true);
    assert_eq!(a.l_bce_dn, b.l_bce_dn);
    assert_eq!(a.l_bce_an, b.l_bce_an);
}

fn labelled_graph(tracks: [Option<u64>; 4]) -> DynamicGraph<f64> {
    let mut r = rng(60);
    let mut frame = |ids: &[Option<u64>]| -> Vec<DetectionInput<f64>> {
        ids.iter()
            .enumerate()
            .map(|(i, &t)| det((0..7).map(|_| r.gen_range(-1.0..1.0)).collect(), i, t))
            .collect()
    };
    DynamicGraph::initialize_graph(window(3), frame(&tracks[..2]), Some(frame(&tracks[2..]))).unwrap()
}

#[test]
fn tp_off_total_ignores_detection_labels() {
    let od = [0.3, -0.2, 1.1, 0.4];
    let oa = [0.5, -0.5, 0.25, -1.0];
    // detection 1 flips between FP and a track nobody else carries
    let a = labelled_graph([Some(1), None, Some(1), Some(4)]);
    let b = labelled_graph([Some(1), Some(9), Some(1), None]);
    let (la, lb) = (loss_of(&a, &od, &oa, false), loss_of(&b, &od, &oa, false));
    assert_eq!(la.l_bce_dn, 0.0);
    assert_eq!(la.total, lb.total);
    let (la, lb) = (loss_of(&a, &od, &oa, true), loss_of(&b, &od, &oa, true));
    assert_ne!(la.total, lb.total);
}

/// Mini-sequence loss over three frames, accumulated as in training.
fn sequence_loss(p: &ModelParams<f64>, grads: bool) -> (f64, Vec<Tensor<f64>>) {
    let mut p = p.clone();
    let mut r = rng(70);
    let f0 = random_frame(&mut r, 2, &[1, 2]);
    let f1 = random_frame(&mut r, 1, &[1]);
    let f2 = random_frame(&mut r, 1, &[2]);
    let mut g = DynamicGraph::initialize_graph(window(3), f0, Some(f1)).unwrap();
    let mut tape = Tape::new();
    let vars = p.register(&mut tape);
    let mut carry = Carry::new();
    let out = forward(&mut tape, &mut p, &vars, &mut g, &mut carry, RoundOptions::train()).unwrap();
    let mut total = compute_losses(&mut tape, &g, &out, true).unwrap().total;
    g.update_graph(2, f2, |_, _| {}).unwrap();
    let out = forward(&mut tape, &mut p, &vars, &mut g, &mut carry, RoundOptions::train()).unwrap();
    let l = compute_losses(&mut tape, &g, &out, true).unwrap().total;
    total = tape.add(total, l).unwrap();
    let value = tape.value(total).item().unwrap();
    if !grads {
        return (value, vec![]);
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

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    for update in [AssocUpdate::Difference, AssocUpdate::Concat] {
        let cfg = ModelConfig {
            assoc_update: update,
            heads: 2,
            ..small_config(3)
        };
        let p = randomized(cfg, 71);
        let (_, analytic) = sequence_loss(&p, true);
        let mut worst = 0.0f64;
        for (k, name) in p.names().iter().enumerate() {
            for i in 0..p.tensors()[k].len() {
                let mut plus = p.clone();
                plus.get_mut(k).data_mut()[i] += FD_STEP;
                let mut minus = p.clone();
                minus.get_mut(k).data_mut()[i] -= FD_STEP;
                let n = (sequence_loss(&plus, false).0 - sequence_loss(&minus, false).0) / (2.0 * FD_STEP);
                let a = analytic[k].data()[i];
                let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                assert!(err < 1e-4, "{update} {name}[{i}]: analytic {a}, numeric {n}");
                worst = worst.max(err);
            }
        }
        assert!(worst < 1e-4);
    }
}

fn random_graph(seed: u64, frames: &[usize]) -> DynamicGraph<f64> {
    let mut r = rng(seed);
    let mut g = DynamicGraph::initialize_graph(
        window(3),
        random_frame(&mut r, frames[0], &[]),
        frames.get(1).map(|&n| random_frame(&mut r, n, &[])),
    )
    .unwrap();
    for (t, &n) in frames.iter().enumerate().skip(2) {
        g.update_graph(t, random_frame(&mut r, n, &[]), |_, _| {}).unwrap();
    }
    g
}

proptest! {
    #[test]
    fn attention_weights_sum_to_one(
        seed in any::<u64>(),
        heads in 1usize..4,
        frames in prop::collection::vec(0usize..4, 2..5),
    ) {
        let mut p = randomized(ModelConfig { heads, ..small_config(3) }, seed);
        let mut g = random_graph(seed, &frames);
        let mut tape = Tape::new();
        let vars = p.register(&mut tape);
        let opts = RoundOptions { mode: Mode::Train, record_attention: true };
        let out = forward(&mut tape, &mut p, &vars, &mut g, &mut Carry::new(), opts).unwrap();
        let with_edges = g.detections().keys().filter(|&&d| !g.neighbors(d).unwrap().is_empty()).count();
        prop_assert_eq!(out.attention.len(), with_edges * heads);
        for rec in &out.attention {
            let s: f64 = rec.weights.iter().map(|w| w.2).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(rec.weights.iter().all(|w| w.2 > 0.0));
        }
    }
}
