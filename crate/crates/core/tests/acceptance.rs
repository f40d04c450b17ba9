//! Acceptance suite. Each test prints one PASS line; criterion 9
//! (manifest-level reproducibility) lives in the CLI crate's acceptance
//! tests next to the binary it exercises.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evflow_core::autodiff::gradcheck::{finite_diff, max_rel_err};
use evflow_core::autodiff::{Tape, Tensor, Var};
use evflow_core::encoding::{build_sequences, count_events_span, normalize_counts, CountFrame};
use evflow_core::eval::{
    active_mask, aee, count_mult_ops, evaluate_stream, kpe, EvalConfig, KPE_MAX,
};
use evflow_core::events::{emit_events, render_scene, ground_truth_flow, CameraModel};
use evflow_core::layers::{
    zero_state, CellKind, ConvLstmParams, ConvSpec, LayerState, SpikingParams,
};
use evflow_core::model::{Network, NetworkConfig};
use evflow_core::training::{
    forward_sequence, train, train_traditional, AugmentConfig, TrainConfig, TrainMode,
};
use evflow_core::{FlowField, Motion, Pattern, Scene, TrainingSequence};

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn fd_check(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var, what: &str) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = build(&mut tape, &vars);
    let loss = tape.sum(out);
    let grads = tape.backward(loss).unwrap();
    let mut f = |xs: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
        let out = build(&mut t, &vs);
        let s = t.sum(out);
        t.value(s).item()
    };
    let numeric = finite_diff(&mut f, inputs, FD_EPS);
    for (i, (var, num)) in vars.iter().zip(&numeric).enumerate() {
        let analytic = grads.get(*var).unwrap_or_else(|| panic!("{}: input {} missing grad", what, i));
        let err = max_rel_err(analytic, num, 1e-3);
        assert!(err < FD_TOL, "{}: input {} rel err {}", what, i, err);
    }
}

/// Criterion 1: finite-difference gradient checks for each layer type and a
/// full tiny network, 20 seeds, under a minute.
#[test]
fn acceptance_1_gradient_correctness() {
    let started = Instant::now();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        // Convolutional LSTM layer, one step, all parameters and the input.
        let spec = ConvSpec { in_ch: 2, out_ch: 2, kernel: 3, stride: 1, pad: 1, transpose: false };
        let lstm = ConvLstmParams::<f64>::init(spec, &mut rng);
        let x = Tensor::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng);
        let h0 = Tensor::uniform(&[1, 2, 4, 4], -0.5, 0.5, &mut rng);
        let c0 = Tensor::uniform(&[1, 2, 4, 4], -0.5, 0.5, &mut rng);
        let mut inputs = vec![x.clone()];
        inputs.extend(lstm.wx.iter().cloned());
        inputs.extend(lstm.wh.iter().cloned());
        inputs.extend(lstm.b.iter().cloned());
        let (h0c, c0c) = (h0.clone(), c0.clone());
        fd_check(&inputs, move |tape, v| {
            let bound = evflow_core::layers::BoundConvLstm {
                spec,
                wx: [v[1], v[2], v[3], v[4]],
                wh: [v[5], v[6], v[7], v[8]],
                b: [v[9], v[10], v[11], v[12]],
            };
            let state = LayerState::Lstm {
                h: tape.constant(h0c.clone()),
                c: tape.constant(c0c.clone()),
            };
            let (h, _) = bound.step(tape, v[0], &state).unwrap();
            h
        }, "conv-lstm layer");

        // Spiking layer: multi-step through the current path, one step
        // through the membrane path (quantizer excluded by construction).
        let spiking = SpikingParams::<f64>::init(spec, 3, &mut rng);
        let xs: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::uniform(&[1, 2, 4, 4], -1.0, 1.0, &mut rng)).collect();
        for (through_v, steps) in [(false, 3usize), (true, 1)] {
            let mut inputs: Vec<Tensor<f64>> = spiking.w.iter().cloned().collect();
            inputs.extend(spiking.b.iter().cloned());
            let xs = xs.clone();
            fd_check(&inputs, move |tape, v| {
                let bound = evflow_core::layers::BoundSpiking {
                    spec,
                    w: [v[0], v[1], v[2]],
                    b: [v[3], v[4], v[5]],
                    bits: 3,
                };
                let mut state =
                    zero_state::<f64>(CellKind::Spiking, 1, 2, (4, 4)).map(|t| tape.constant(t.clone()));
                let mut acc = tape.constant(Tensor::scalar(0.0));
                for x in xs.iter().take(steps) {
                    let xv = tape.constant(x.clone());
                    let (_, ns) = bound.step(tape, xv, &state).unwrap();
                    let LayerState::Spiking { c, v: memb, .. } = &ns else { unreachable!() };
                    let observed = if through_v { *memb } else { *c };
                    let s = tape.sum(observed);
                    acc = tape.add(acc, s).unwrap();
                    state = ns;
                }
                acc
            }, "spiking layer");
        }

        // Full tiny LSTM network end to end, two steps, every parameter.
        let config = NetworkConfig {
            cell: CellKind::Lstm,
            bits: 4,
            encoder: vec![2],
            kernel: 3,
            input_channels: 2,
            output_channels: 2,
            skip_connections: true,
            recurrent: None,
        };
        let net = Network::<f64>::build(config, seed).unwrap();
        let frames: Vec<Tensor<f64>> =
            (0..2).map(|_| Tensor::uniform(&[1, 2, 4, 4], 0.0, 1.0, &mut rng)).collect();
        let target: Tensor<f64> = Tensor::uniform(&[1, 2, 4, 4], 0.75, 2.0, &mut rng);
        let tensors: Vec<Tensor<f64>> = net.named_params().iter().map(|(_, t)| (*t).clone()).collect();
        let net_ref = net.clone();
        let frames_ref = frames.clone();
        fd_check(&tensors, move |tape, v| {
            let mut candidate = net_ref.clone();
            let mut i = 0;
            candidate.visit_params_mut(|_, t| {
                *t = tape.value(v[i]).clone();
                i += 1;
            });
            // Rebind through the tape leaves so gradients reach them: build
            // the bound net manually from the given vars.
            let bound = bind_with_vars(&candidate, tape, v);
            let mut states: Vec<LayerState<Var>> = candidate
                .zero_states(1, 4, 4)
                .unwrap()
                .iter()
                .map(|s| s.map(|t| tape.constant(t.clone())))
                .collect();
            let mut last = None;
            for f in &frames_ref {
                let x = tape.constant(f.clone());
                let (flow, ns, _) = bound.step_on_tape(tape, x, &states).unwrap();
                states = ns;
                last = Some(flow);
            }
            let tv = tape.constant(target.clone());
            let d = tape.sub(last.unwrap(), tv).unwrap();
            tape.mul(d, d).unwrap()
        }, "full tiny network");
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "gradient checks took {:?}", elapsed);
    println!("ACCEPTANCE 1 (gradient correctness, 20 seeds in {:?}): PASS", elapsed);
}

/// Rebuild a BoundNet whose parameter leaves are exactly `vars`, in the
/// canonical parameter order.
fn bind_with_vars(net: &Network<f64>, _tape: &mut Tape<f64>, vars: &[Var]) -> evflow_core::model::BoundNet {
    use evflow_core::model::LayerParams;
    let mut cursor = 0usize;
    let mut take = || {
        cursor += 1;
        vars[cursor - 1]
    };
    let mut layers = Vec::new();
    for layer in &net.layers {
        match layer {
            LayerParams::Lstm(p) => {
                let mut wx = [Var::default(); 4];
                let mut wh = [Var::default(); 4];
                let mut b = [Var::default(); 4];
                for g in 0..4 {
                    wx[g] = take();
                    wh[g] = take();
                    b[g] = take();
                }
                layers.push(evflow_core::model::BoundLayer::Lstm(evflow_core::layers::BoundConvLstm {
                    spec: p.spec,
                    wx,
                    wh,
                    b,
                }));
            }
            _ => unreachable!("tiny acceptance net is LSTM"),
        }
    }
    let head_w = take();
    let head_b = take();
    evflow_core::model::BoundNet::from_parts(layers, head_w, head_b, net.config.levels(), net.config.skip_connections)
}

/// Criterion 2: with l > 0 the truncation is exact across random configs.
#[test]
fn acceptance_2_windowed_truncation_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(2000);
    for trial in 0..10 {
        let cell = if trial % 2 == 0 { CellKind::Lstm } else { CellKind::Spiking };
        let m = rng.gen_range(1..=3usize);
        let n = rng.gen_range(1..=2usize);
        let l = rng.gen_range(1..=4usize);
        let config = NetworkConfig {
            cell,
            bits: rng.gen_range(2..=4),
            encoder: vec![rng.gen_range(1..=3)],
            kernel: 3,
            input_channels: 2,
            output_channels: 2,
            skip_connections: true,
            recurrent: None,
        };
        let net = Network::<f64>::build(config, 3000 + trial as u64).unwrap();
        let cfg = TrainConfig {
            m,
            n,
            l,
            lr: 1e-3,
            epochs: 1,
            batch: 1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            mode: TrainMode::Windowed,
            seed: 0,
            clip_norm: None,
            count_cap: 8,
            augment: AugmentConfig { flips: false, crop: None },
        };
        let size = 8usize;
        let mut frame = |rng: &mut ChaCha8Rng| {
            let mut f = CountFrame::zeros(size, size, 0);
            for _ in 0..40 {
                f.bump(rng.gen_range(0..2), rng.gen_range(0..size), rng.gen_range(0..size));
            }
            f
        };
        let mut target = FlowField::zero(size, size);
        for y in 0..size {
            for x in 0..size {
                target.set(x, y, rng.gen_range(1.0..2.0), rng.gen_range(-2.0..-1.0), true);
            }
        }
        let seq = TrainingSequence {
            prefix: (0..l).map(|_| frame(&mut rng)).collect(),
            window: (0..m * n).map(|_| frame(&mut rng)).collect(),
            targets: vec![target; n],
            augmentation: Default::default(),
            start_count: 0,
        };

        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let fwd = forward_sequence(&mut tape, &bound, &seq, &cfg, true).unwrap();
        let grads = tape.backward(fwd.loss).unwrap();
        for (i, v) in fwd.prefix_inputs.iter().enumerate() {
            assert!(
                grads.get(*v).is_none(),
                "trial {}: prefix input {} received gradient",
                trial,
                i
            );
        }
        let nonzero = fwd
            .window_inputs
            .iter()
            .filter_map(|v| grads.get(*v))
            .any(|g| g.data().iter().any(|&x| x != 0.0));
        assert!(nonzero, "trial {}: no window input gradient", trial);
    }
    println!("ACCEPTANCE 2 (windowed truncation exactness, 10 configs): PASS");
}

/// Criterion 3: spiking output level sets and the soma-subtraction identity.
#[test]
fn acceptance_3_spiking_semantics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3000);
    // 1e5 random membrane values through the quantizer per bit width.
    let v: Tensor<f64> = Tensor::uniform(&[100_000], -2.0, 3.0, &mut rng);
    for bits in 1..=4u32 {
        let mut tape = Tape::new();
        let xv = tape.constant(v.clone());
        let q = tape.ste_quantize(xv, bits).unwrap();
        let levels = (1u32 << bits) as f64;
        for &y in tape.value(q).data() {
            let k = y * levels;
            assert!(
                (k - k.round()).abs() < 1e-12 && k >= 0.0 && k < levels - 0.5,
                "bits {}: {} off the level set",
                bits,
                y
            );
        }
    }

    // Soma subtraction through the cell equation on random tensors.
    let spec = ConvSpec { in_ch: 3, out_ch: 4, kernel: 3, stride: 1, pad: 1, transpose: false };
    let params = SpikingParams::<f64>::init(spec, 4, &mut rng);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.constant(Tensor::uniform(&[1, 3, 6, 6], -1.0, 1.0, &mut rng));
    let state = LayerState::Spiking {
        c: tape.constant(Tensor::uniform(&[1, 4, 6, 6], -1.0, 1.0, &mut rng)),
        v: tape.constant(Tensor::uniform(&[1, 4, 6, 6], -1.0, 2.0, &mut rng)),
        y: tape.constant(Tensor::uniform(&[1, 4, 6, 6], 0.0, 1.0, &mut rng)),
    };
    let (y_out, ns) = bound.step(&mut tape, x, &state).unwrap();
    let LayerState::Spiking { c, v: v_new, .. } = ns else { unreachable!() };
    let LayerState::Spiking { v: v_prev, y: y_prev, .. } = state else { unreachable!() };
    let (cv, vv) = (tape.value(c), tape.value(v_new));
    let (pv, py) = (tape.value(v_prev), tape.value(y_prev));
    for i in 0..cv.numel() {
        let lhs = vv.data()[i] - (pv.data()[i] - py.data()[i]);
        assert!(
            (lhs - cv.data()[i].tanh()).abs() < 1e-12,
            "soma subtraction violated at {}",
            i
        );
        assert!(lhs.abs() < 1.0, "|tanh| bound violated");
    }
    // The emitted output sits on the 4-bit level set.
    for &y in tape.value(y_out).data() {
        let k = y * 16.0;
        assert!((k - k.round()).abs() < 1e-12 && (0.0..16.0).contains(&k));
    }
    println!("ACCEPTANCE 3 (spiking level sets + soma subtraction): PASS");
}

fn reconstruction_scenes() -> Vec<(Scene, CameraModel)> {
    let cam = |tp: f64, tn: f64| CameraModel { theta_pos: tp, theta_neg: tn, refractory: 0, noise_rate: 0.0 };
    vec![
        (
            Scene {
                width: 24,
                height: 24,
                pattern: Pattern::SineGrating { fx: 0.125, fy: 0.0, phase: 0.3, mean: 1.0, contrast: 0.5 },
                motion: Motion::Translation { u: 0.5, v: 0.0 },
                duration: 20,
                steps_per_count_interval: 1,
                count_interval_us: 1000,
            },
            cam(0.2, 0.2),
        ),
        (
            Scene {
                width: 24,
                height: 24,
                pattern: Pattern::SineGrating { fx: 0.0, fy: 0.2, phase: 1.0, mean: 2.0, contrast: 1.2 },
                motion: Motion::Translation { u: 0.0, v: -0.7 },
                duration: 15,
                steps_per_count_interval: 2,
                count_interval_us: 1000,
            },
            cam(0.15, 0.25),
        ),
        (
            Scene {
                width: 32,
                height: 32,
                pattern: Pattern::Checkerboard { cell: 6.0, low: 0.6, high: 1.8 },
                motion: Motion::Rotation { omega: 0.02, center: None },
                duration: 18,
                steps_per_count_interval: 1,
                count_interval_us: 500,
            },
            cam(0.2, 0.2),
        ),
        (
            Scene {
                width: 16,
                height: 16,
                pattern: Pattern::SineGrating { fx: 0.1, fy: 0.1, phase: 0.0, mean: 1.5, contrast: 0.9 },
                motion: Motion::Rotation { omega: -0.03, center: Some((5.0, 5.0)) },
                duration: 25,
                steps_per_count_interval: 1,
                count_interval_us: 2000,
            },
            cam(0.3, 0.1),
        ),
        (
            Scene {
                width: 24,
                height: 20,
                pattern: Pattern::Checkerboard { cell: 4.0, low: 0.4, high: 2.4 },
                motion: Motion::Translation { u: 0.4, v: 0.3 },
                duration: 22,
                steps_per_count_interval: 1,
                count_interval_us: 1000,
            },
            cam(0.25, 0.25),
        ),
    ]
}

/// Criterion 4: per-pixel log-intensity reconstruction bound on 5 scenes.
#[test]
fn acceptance_4_event_reconstruction_bound() {
    for (idx, (scene, cam)) in reconstruction_scenes().into_iter().enumerate() {
        let (frames, _) = render_scene(&scene).unwrap();
        let stream = emit_events(&frames, &cam, 100 + idx as u64).unwrap();
        assert!(!stream.events.is_empty(), "scene {} produced no events", idx);

        let bound = cam.theta_pos.max(cam.theta_neg);
        let n = scene.width * scene.height;
        let mut recon = vec![0.0f64; n];
        let mut cursor = 0usize;
        for frame in &frames[1..] {
            while cursor < stream.events.len() && stream.events[cursor].t <= frame.t_us {
                let e = &stream.events[cursor];
                recon[e.y as usize * scene.width + e.x as usize] +=
                    if e.p > 0 { cam.theta_pos } else { -cam.theta_neg };
                cursor += 1;
            }
            for i in 0..n {
                let truth = frame.data[i].ln() - frames[0].data[i].ln();
                assert!(
                    (recon[i] - truth).abs() < bound,
                    "scene {} pixel {} t {}: |{} - {}| >= {}",
                    idx,
                    i,
                    frame.t_us,
                    recon[i],
                    truth,
                    bound
                );
            }
        }
    }
    println!("ACCEPTANCE 4 (reconstruction bound, 5 scenes): PASS");
}

struct DeskStream {
    counts: Vec<CountFrame>,
    gts: Vec<FlowField>,
}

/// Render, emit, and encode one desk-scale stream with ground truth every
/// `m` counts (displacement over the preceding m counts).
fn desk_stream(scene: &Scene, cam: &CameraModel, m: usize, seed: u64) -> DeskStream {
    let (frames, _) = render_scene(scene).unwrap();
    let stream = emit_events(&frames, cam, seed).unwrap();
    let span = (scene.duration - 1) as u32 * scene.step_us();
    let counts = count_events_span(
        &stream.events,
        scene.count_interval_us,
        (scene.width, scene.height),
        span,
    )
    .unwrap();
    let n_counts = counts.len();
    let spc = scene.steps_per_count_interval as f64;
    let gts = (1..=n_counts / m)
        .map(|j| {
            let end = (j * m) as f64 * spc;
            ground_truth_flow(scene, end - m as f64 * spc, end)
        })
        .collect();
    DeskStream { counts, gts }
}

fn desk_scenes() -> Vec<(Scene, CameraModel)> {
    let cam = CameraModel { theta_pos: 0.2, theta_neg: 0.2, refractory: 0, noise_rate: 0.01 };
    let base = |pattern, motion| Scene {
        width: 32,
        height: 32,
        pattern,
        motion,
        duration: 301,
        steps_per_count_interval: 1,
        count_interval_us: 1000,
    };
    vec![
        (
            base(
                Pattern::SineGrating { fx: 0.125, fy: 0.0, phase: 0.3, mean: 1.0, contrast: 0.5 },
                Motion::Translation { u: 0.3, v: 0.0 },
            ),
            cam.clone(),
        ),
        (
            base(
                Pattern::SineGrating { fx: 0.125, fy: 0.0, phase: 1.1, mean: 1.0, contrast: 0.5 },
                Motion::Translation { u: -0.3, v: 0.0 },
            ),
            cam.clone(),
        ),
        (
            base(
                Pattern::SineGrating { fx: 0.0, fy: 0.125, phase: 0.5, mean: 1.0, contrast: 0.5 },
                Motion::Translation { u: 0.0, v: 0.3 },
            ),
            cam.clone(),
        ),
        (
            base(
                Pattern::Checkerboard { cell: 8.0, low: 0.5, high: 1.5 },
                Motion::Rotation { omega: 0.02, center: None },
            ),
            cam,
        ),
    ]
}

struct Desk {
    train_seqs: Vec<TrainingSequence>,
    traditional_seqs: Vec<TrainingSequence>,
    test: Vec<DeskStream>,
}

fn build_desk(m: usize, n: usize, l: usize) -> Desk {
    let mut train_seqs = Vec::new();
    let mut traditional_seqs = Vec::new();
    let mut test = Vec::new();
    for (i, (scene, cam)) in desk_scenes().into_iter().enumerate() {
        let stream = desk_stream(&scene, &cam, m, 10 + i as u64);
        // Temporal-prefix 80/20 split in whole ground-truth periods.
        let split_gt = stream.gts.len() * 8 / 10;
        let split_count = split_gt * m;
        let train_counts = &stream.counts[..split_count];
        let train_gts = &stream.gts[..split_gt];
        train_seqs.extend(build_sequences(train_counts, train_gts, m, n, l, n).unwrap());
        traditional_seqs.extend(build_sequences(train_counts, train_gts, m, 1, 0, 1).unwrap());
        test.push(DeskStream {
            counts: stream.counts[split_count..].to_vec(),
            gts: stream.gts[split_gt..].to_vec(),
        });
    }
    Desk { train_seqs, traditional_seqs, test }
}

fn test_aee<EFn>(net: &Network<f32>, test: &[DeskStream], m: usize, note: &str, mut extra: EFn) -> f64
where
    EFn: FnMut(&evflow_core::eval::EvalReport),
{
    let mut err = 0.0;
    let mut px = 0usize;
    for stream in test {
        let (report, _) =
            evaluate_stream(net, &stream.counts, &stream.gts, EvalConfig { m, count_cap: 8 }).unwrap();
        err += report.aee * report.evaluated_pixels as f64;
        px += report.evaluated_pixels;
        extra(&report);
    }
    let aee = err / px as f64;
    println!("  {note}: test AEE {aee:.3} over {px} pixels");
    aee
}

fn desk_train_config(m: usize, n: usize, l: usize, mode: TrainMode, epochs: usize) -> TrainConfig {
    TrainConfig {
        m,
        n,
        l,
        lr: 4e-3,
        epochs,
        batch: 8,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        mode,
        seed: 7,
        clip_norm: Some(10.0),
        count_cap: 8,
        augment: AugmentConfig { flips: true, crop: None },
    }
}

fn desk_net_config(cell: CellKind) -> NetworkConfig {
    NetworkConfig {
        cell,
        bits: 4,
        encoder: vec![4, 8],
        kernel: 3,
        input_channels: 2,
        output_channels: 2,
        skip_connections: true,
        recurrent: None,
    }
}

/// Criterion 5: desk-scale learning. (a) windowed LSTM halves the
/// zero-predictor AEE; (b) windowed beats traditional training on
/// continuous evaluation; (c) the 4-bit spiking net lands within 2x of the
/// LSTM with fewer parameters.
#[test]
fn acceptance_5_desk_scale_learning() {
    let started = Instant::now();
    let (m, n, l) = (10usize, 2usize, 10usize);
    let desk = build_desk(m, n, l);
    println!(
        "  dataset: {} windowed sequences, {} traditional sequences",
        desk.train_seqs.len(),
        desk.traditional_seqs.len()
    );

    // Zero-predictor baseline: a zero-headed network.
    let mut zero_net = Network::<f32>::build(desk_net_config(CellKind::Lstm), 1).unwrap();
    zero_net.head.w = Tensor::zeros(zero_net.head.w.shape());
    zero_net.head.b = Tensor::zeros(zero_net.head.b.shape());
    let baseline = test_aee(&zero_net, &desk.test, m, "zero predictor", |_| {});

    // (a) Windowed LSTM training.
    let cfg = desk_train_config(m, n, l, TrainMode::Windowed, 20);
    let mut lstm = Network::<f32>::build(desk_net_config(CellKind::Lstm), 42).unwrap();
    train(&mut lstm, &desk.train_seqs, &cfg).unwrap();
    let lstm_aee = test_aee(&lstm, &desk.test, m, "windowed LSTM", |_| {});
    assert!(
        lstm_aee < 0.5 * baseline,
        "(a) windowed LSTM AEE {} must be below half the zero-predictor baseline {}",
        lstm_aee,
        baseline
    );

    // (b) Traditional training of the same architecture, evaluated
    // continuously with no reset.
    let trad_cfg = desk_train_config(m, 1, 0, TrainMode::Traditional, 20);
    let mut traditional = Network::<f32>::build(desk_net_config(CellKind::Lstm), 42).unwrap();
    train_traditional(&mut traditional, &desk.traditional_seqs, &trad_cfg).unwrap();
    let trad_aee = test_aee(&traditional, &desk.test, m, "traditional LSTM", |_| {});
    assert!(
        lstm_aee < trad_aee,
        "(b) windowed AEE {} must be strictly below traditional AEE {}",
        lstm_aee,
        trad_aee
    );

    // (c) Spiking network with 4-bit outputs.
    let mut snn = Network::<f32>::build(desk_net_config(CellKind::Spiking), 42).unwrap();
    assert!(snn.param_count() < lstm.param_count());
    train(&mut snn, &desk.train_seqs, &cfg).unwrap();
    let snn_aee = test_aee(&snn, &desk.test, m, "windowed spiking 4-bit", |_| {});
    assert!(
        snn_aee < 2.0 * lstm_aee,
        "(c) spiking AEE {} must be within 2x of LSTM AEE {}",
        snn_aee,
        lstm_aee
    );

    println!(
        "ACCEPTANCE 5 (desk-scale learning: baseline {:.3}, windowed {:.3}, traditional {:.3}, spiking {:.3}, params {} vs {}, {:?}): PASS",
        baseline,
        lstm_aee,
        trad_aee,
        snn_aee,
        lstm.param_count(),
        snn.param_count(),
        started.elapsed()
    );
}

/// Criterion 6: chunked and unchunked stream processing are bit-identical.
#[test]
fn acceptance_6_continuity() {
    let net = Network::<f32>::build(desk_net_config(CellKind::Lstm), 600).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(601);
    let frames: Vec<Tensor<f32>> = (0..100)
        .map(|_| {
            Tensor::from_fn(&[1, 2, 32, 32], |_| if rng.gen_bool(0.3) { rng.gen_range(0.0..1.0) } else { 0.0 })
        })
        .collect();
    let mut full_states = net.zero_states(1, 32, 32).unwrap();
    let full = net.run_stream(&frames, &mut full_states).unwrap();

    let mut chunk_states = net.zero_states(1, 32, 32).unwrap();
    let mut chunked = Vec::new();
    for chunk in frames.chunks(10) {
        chunked.extend(net.run_stream(chunk, &mut chunk_states).unwrap());
    }
    assert_eq!(full.len(), chunked.len());
    for (i, (a, b)) in full.iter().zip(&chunked).enumerate() {
        assert_eq!(a.data(), b.data(), "prediction {} differs between chunkings", i);
    }
    for (a, b) in full_states.iter().zip(&chunk_states) {
        for (ta, tb) in a.tensors().iter().zip(b.tensors()) {
            assert_eq!(ta.data(), tb.data());
        }
    }
    println!("ACCEPTANCE 6 (continuity, 100 frames vs 10x10): PASS");
}

/// Criterion 7: exact effective multiply counts and the monotone bit sweep.
#[test]
fn acceptance_7_op_count_oracle() {
    // Exactness against an instrumented pass is asserted by the eval module
    // tests; at acceptance level, verify the invariants end to end: the
    // effective count never exceeds dense, zero input means zero effective
    // input-path multiplies, and the bit sweep is monotone.
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let mut counts = Vec::new();
    for _ in 0..6 {
        let mut f = CountFrame::zeros(16, 16, 0);
        for y in 0..16 {
            for x in 0..16 {
                if rng.gen_bool(0.4) {
                    f.bump(rng.gen_range(0..2), x, y);
                }
            }
        }
        counts.push(f);
    }

    let lstm_ref = Network::<f32>::build(
        NetworkConfig { encoder: vec![3, 4], ..desk_net_config(CellKind::Lstm) },
        701,
    )
    .unwrap();
    let reference = count_mult_ops(&lstm_ref, &counts, 8).unwrap();
    assert!(reference.effective_total <= reference.dense_total);

    let mut ratios = Vec::new();
    for bits in [2u32, 3, 4] {
        let cfg = NetworkConfig { bits, encoder: vec![3, 4], ..desk_net_config(CellKind::Spiking) };
        let net = Network::<f32>::build(cfg, 702).unwrap();
        let mut report = count_mult_ops(&net, &counts, 8).unwrap();
        assert!(report.effective_total <= report.dense_total);
        report.normalize_against(&reference);
        ratios.push(report.ratio_vs_reference.unwrap());
    }
    assert!(
        ratios[0] <= ratios[1] && ratios[1] <= ratios[2],
        "bit sweep ratios must be non-decreasing in bits: {:?}",
        ratios
    );

    let zero = vec![CountFrame::zeros(16, 16, 0); 3];
    let snn = Network::<f32>::build(
        NetworkConfig { encoder: vec![3, 4], ..desk_net_config(CellKind::Spiking) },
        703,
    )
    .unwrap();
    let zr = count_mult_ops(&snn, &zero, 8).unwrap();
    for layer in &zr.layers {
        assert_eq!(layer.input_nonzero_fraction, 0.0);
    }
    println!(
        "ACCEPTANCE 7 (op-count oracle; bit-sweep ratios {:.3}/{:.3}/{:.3} for 2/3/4 bits): PASS",
        ratios[0], ratios[1], ratios[2]
    );
}

/// Criterion 8: AEE/kPE/mask equal brute-force loops on 100 random fields.
#[test]
fn acceptance_8_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(800);
    for trial in 0..100 {
        let (w, h) = (rng.gen_range(4..12usize), rng.gen_range(4..12usize));
        let mut gt = FlowField::zero(w, h);
        let mut pred = FlowField::zero(w, h);
        for y in 0..h {
            for x in 0..w {
                gt.set(x, y, rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_bool(0.8));
                pred.set(x, y, rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), true);
            }
        }
        let recent: Vec<CountFrame> = (0..rng.gen_range(1..=10usize))
            .map(|_| {
                let mut f = CountFrame::zeros(w, h, 0);
                for _ in 0..w * h / 2 {
                    f.bump(rng.gen_range(0..2), rng.gen_range(0..w), rng.gen_range(0..h));
                }
                f
            })
            .collect();
        let mask = active_mask(&recent, &gt);

        // Brute-force mask, AEE, kPE.
        let mut sum = 0.0;
        let mut count = 0usize;
        let mut over = [0usize; KPE_MAX];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let active = recent.iter().any(|f| f.get(0, x, y) + f.get(1, x, y) > 0);
                assert_eq!(mask[i], active && gt.valid()[i], "mask mismatch at trial {}", trial);
                if mask[i] {
                    let du = pred.u()[i] as f64 - gt.u()[i] as f64;
                    let dv = pred.v()[i] as f64 - gt.v()[i] as f64;
                    let e = (du * du + dv * dv).sqrt();
                    sum += e;
                    count += 1;
                    for k in 1..=KPE_MAX {
                        if e > k as f64 {
                            over[k - 1] += 1;
                        }
                    }
                }
            }
        }
        if count == 0 {
            assert!(aee(&pred, &gt, &mask).is_err());
            continue;
        }
        assert_eq!(aee(&pred, &gt, &mask).unwrap(), sum / count as f64);
        let mut prev = f64::INFINITY;
        for k in 1..=KPE_MAX {
            let got = kpe(&pred, &gt, &mask, k).unwrap();
            assert_eq!(got, 100.0 * over[k - 1] as f64 / count as f64);
            assert!(got <= prev);
            prev = got;
        }
    }
    println!("ACCEPTANCE 8 (metric oracles, 100 random fields): PASS");
}

// Keep the unused normalize_counts import honest: op counting and the desk
// streams both feed through the same normalization path.
#[test]
fn normalization_feeds_acceptance_paths() {
    let mut f = CountFrame::zeros(2, 2, 0);
    f.bump(0, 0, 0);
    let t: Tensor<f32> = normalize_counts(&f, 8);
    assert_eq!(t.data()[0], 0.125);
}
