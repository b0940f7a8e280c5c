//! Acceptance suite: one test per criterion, each asserting its stated
//! tolerance and runtime budget. Run with
//! `cargo test --release --test acceptance -- --nocapture` to see the
//! per-criterion summary lines.

use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use yoho::datagen::{read_manifest, synth_dataset, SynthConfig};
use yoho::labels::{decode, encode, read_tsv, Event, EventList, YohoGrid};
use yoho::loss::{yoho_loss, yoho_loss_grad};
use yoho::metrics::{error_rate, segment_f1, SegmentCounts};
use yoho::net::checkpoint::save_checkpoint;
use yoho::net::layers::{
    BatchNorm, Conv1d, Conv2d, DepthwiseConv2d, Layer, MaxPool2d, Mode, Relu, ReshapeMerge,
    Sigmoid,
};
use yoho::net::tensor::Tensor;
use yoho::net::train::{train, TrainConfig};
use yoho::net::{build_frame_cnn, build_yoho, BuildConfig};
use yoho::pipeline::{bench_models, load_audio_for, load_samples, predict_events};
use yoho::profiles::PipelineProfile;
use yoho::smooth::{smooth, ClassSmoothing, SmoothingConfig};

// Serializes the two compute-heavy criteria so benchmark timings are not
// polluted by concurrent training.
static HEAVY: Mutex<()> = Mutex::new(());

// ---------------------------------------------------------------------
// Criterion 1: published label-grid example reproduced exactly.
// ---------------------------------------------------------------------
#[test]
fn criterion_1_label_grid_reproduction() {
    let started = Instant::now();
    let classes = vec!["speech".to_string(), "music".to_string()];
    let events = vec![
        Event::new("music", 0.2, 4.3),
        Event::new("speech", 3.6, 6.0),
    ];
    let grid = encode(&events, 8.0, 26, &classes).unwrap();
    let music = grid.class_index("music").unwrap();
    let speech = grid.class_index("speech").unwrap();

    // Presence columns across all 26 rows.
    for k in 0..26 {
        assert_eq!(grid.cell(k, music).0 == 1.0, k <= 13, "music presence @{k}");
        assert_eq!(
            grid.cell(k, speech).0 == 1.0,
            (11..=19).contains(&k),
            "speech presence @{k}"
        );
    }
    // Fractional regression values, tolerance 5e-3 (table rounds).
    let tol = 5e-3;
    assert!((grid.cell(0, music).1 - 0.65).abs() < tol);
    assert!((grid.cell(13, music).2 - 0.975).abs() < tol);
    assert!((grid.cell(11, speech).1 - 0.7).abs() < tol);
    assert!((grid.cell(19, speech).2 - 0.5).abs() < tol);

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "{elapsed:?}");
    println!("criterion 1 PASS: grid example reproduced in {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 2: output-shape law for the three published configurations.
// ---------------------------------------------------------------------
#[test]
fn criterion_2_output_shape_law() {
    let started = Instant::now();
    let cases = [
        ((801, 64, 2), (26, 6)),
        ((257, 40, 6), (9, 18)),
        ((1001, 40, 10), (32, 30)),
    ];
    for ((t, m, c), expected) in cases {
        let net = build_yoho(t, m, c, BuildConfig::default()).unwrap();
        assert_eq!(net.output_shape(), expected, "input {t}x{m}, {c} classes");
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(1), "{elapsed:?}");
    println!("criterion 2 PASS: shapes (26,6) (9,18) (32,30) in {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 3: exact parameter parity, absolute count within 5% of 3.9M.
// ---------------------------------------------------------------------
#[test]
fn criterion_3_parameter_parity_and_count() {
    for (t, m, c) in [(801, 64, 2), (257, 40, 6), (1001, 40, 10)] {
        let yoho = build_yoho(t, m, c, BuildConfig::default()).unwrap();
        let frame = build_frame_cnn(t, m, c, BuildConfig::default()).unwrap();
        assert_eq!(yoho.param_count(), frame.param_count(), "{t}x{m} {c}cls");
    }
    let count = build_yoho(801, 64, 2, BuildConfig::default())
        .unwrap()
        .param_count();
    let published = 3.9e6;
    let deviation = (count as f64 - published).abs() / published;
    assert!(
        deviation < 0.05,
        "parameter count {count} deviates {:.2}% from 3.9M",
        deviation * 100.0
    );
    println!(
        "criterion 3 PASS: exact parity; {count} parameters ({:+.2}% of 3.9M)",
        (count as f64 / published - 1.0) * 100.0
    );
}

// ---------------------------------------------------------------------
// Criterion 4: analytic gradients against central finite differences.
// ---------------------------------------------------------------------

struct MiniNet {
    layers: Vec<Layer>,
}

impl MiniNet {
    fn forward(&mut self, x: &Tensor) -> (Vec<Tensor>, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut acts = vec![x.clone()];
        for layer in &mut self.layers {
            let next = layer.forward(acts.last().unwrap(), Mode::Train, &mut rng);
            acts.push(next);
        }
        let out = acts.last().unwrap().clone();
        (acts, out)
    }

    fn backward(&mut self, acts: &[Tensor], gout: &Tensor) {
        let mut g = gout.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&acts[i], &acts[i + 1], &g);
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut().into_iter().map(|(_, p)| p))
            .collect()
    }

    fn grads(&self) -> Vec<Vec<f64>> {
        self.layers
            .iter()
            .flat_map(|l| l.params().into_iter().map(|(_, p)| p.grad_ref().to_vec()))
            .collect()
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

fn he(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    Tensor::param(
        shape,
        (0..len).map(|_| rng.random_range(-limit..limit)).collect(),
    )
}

// Miniature two-conv stack on an 8x8 input, ending in the usual
// reshape/conv1d/sigmoid head. `pooled` swaps the stride-2 depthwise conv
// for stride 1 plus frequency max-pooling, covering the comparison head's
// layers too.
fn mini_net(pooled: bool) -> MiniNet {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut layers = vec![
        Layer::Conv2d(Conv2d {
            kernel: he(&mut rng, &[3, 3, 1, 4], 9),
            stride: (2, 2),
        }),
        Layer::BatchNorm(BatchNorm::new(4)),
        Layer::Relu(Relu),
    ];
    if pooled {
        layers.push(Layer::DepthwiseConv2d(DepthwiseConv2d {
            kernel: he(&mut rng, &[3, 3, 4], 9),
            stride: (1, 1),
        }));
        layers.push(Layer::BatchNorm(BatchNorm::new(4)));
        layers.push(Layer::Relu(Relu));
        layers.push(Layer::MaxPool2d(MaxPool2d { pool_w: 2 }));
    } else {
        layers.push(Layer::DepthwiseConv2d(DepthwiseConv2d {
            kernel: he(&mut rng, &[3, 3, 4], 9),
            stride: (2, 2),
        }));
        layers.push(Layer::BatchNorm(BatchNorm::new(4)));
        layers.push(Layer::Relu(Relu));
    }
    // Both stacks end with two frequency bins on an 8-bin input.
    let freq = 2;
    layers.push(Layer::ReshapeMerge(ReshapeMerge));
    layers.push(Layer::Conv1d(Conv1d {
        kernel: he(&mut rng, &[freq * 4, 3], freq * 4),
        bias: Tensor::param(&[3], vec![0.05; 3]),
    }));
    layers.push(Layer::Sigmoid(Sigmoid));
    MiniNet { layers }
}

fn masked_loss(pred: &[f64], target: &[f64]) -> f64 {
    let mut loss = 0.0;
    for i in (0..pred.len()).step_by(3) {
        loss += (pred[i] - target[i]).powi(2);
        if target[i] == 1.0 {
            loss += (pred[i + 1] - target[i + 1]).powi(2)
                + (pred[i + 2] - target[i + 2]).powi(2);
        }
    }
    loss
}

fn gradcheck_miniature(pooled: bool, probes: &mut usize, worst: &mut f64) {
    let mut net = mini_net(pooled);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut x = Tensor::zeros(&[3, 8, 8, 1]);
    for v in x.data.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let (acts, out) = net.forward(&x);
    let mut target = vec![0.0; out.len()];
    for i in (0..target.len()).step_by(3) {
        if rng.random::<bool>() {
            target[i] = 1.0;
            target[i + 1] = rng.random();
            target[i + 2] = rng.random();
        }
    }
    let mut gout = Tensor::zeros(&out.shape);
    for i in (0..out.data.len()).step_by(3) {
        gout.data[i] = 2.0 * (out.data[i] - target[i]);
        if target[i] == 1.0 {
            gout.data[i + 1] = 2.0 * (out.data[i + 1] - target[i + 1]);
            gout.data[i + 2] = 2.0 * (out.data[i + 2] - target[i + 2]);
        }
    }
    net.zero_grads();
    net.backward(&acts, &gout);
    let analytic = net.grads();

    let eps = 1e-5;
    let n_tensors = analytic.len();
    for pi in 0..n_tensors {
        for ei in 0..analytic[pi].len() {
            let orig = net.params_mut()[pi].data[ei];
            net.params_mut()[pi].data[ei] = orig + eps;
            let plus = {
                let (_, o) = net.forward(&x);
                masked_loss(&o.data, &target)
            };
            net.params_mut()[pi].data[ei] = orig - eps;
            let minus = {
                let (_, o) = net.forward(&x);
                masked_loss(&o.data, &target)
            };
            net.params_mut()[pi].data[ei] = orig;
            let fd = (plus - minus) / (2.0 * eps);
            let an = analytic[pi][ei];
            let denom = an.abs().max(fd.abs()).max(1e-7);
            let rel = (an - fd).abs() / denom;
            *probes += 1;
            if rel > *worst {
                *worst = rel;
            }
        }
    }
}

#[test]
fn criterion_4_gradient_correctness() {
    let started = Instant::now();
    let mut probes = 0usize;
    let mut worst = 0.0f64;

    gradcheck_miniature(false, &mut probes, &mut worst);
    gradcheck_miniature(true, &mut probes, &mut worst);

    // Loss gradient directly, random grids.
    let mut rng = StdRng::seed_from_u64(5);
    let classes = vec!["a".to_string(), "b".to_string()];
    for _ in 0..120 {
        let n_steps = 4;
        let mut pred = YohoGrid::zeros(classes.clone(), n_steps, 0.5);
        let mut target = YohoGrid::zeros(classes.clone(), n_steps, 0.5);
        for k in 0..n_steps {
            for ci in 0..2 {
                pred.set_cell(k, ci, (rng.random(), rng.random(), rng.random()));
                if rng.random::<bool>() {
                    target.set_cell(k, ci, (1.0, rng.random(), rng.random()));
                }
            }
        }
        let analytic = yoho_loss_grad(&pred, &target).unwrap();
        let k = rng.random_range(0..n_steps);
        let ci = rng.random_range(0..2);
        let coord = rng.random_range(0..3);
        let eps = 1e-5;
        let bump = |g: &YohoGrid, delta: f64| {
            let mut b = g.clone();
            let cell = b.cell(k, ci);
            let cell = match coord {
                0 => (cell.0 + delta, cell.1, cell.2),
                1 => (cell.0, cell.1 + delta, cell.2),
                _ => (cell.0, cell.1, cell.2 + delta),
            };
            b.set_cell(k, ci, cell);
            b
        };
        let plus = yoho_loss(&bump(&pred, eps), &target).unwrap().total;
        let minus = yoho_loss(&bump(&pred, -eps), &target).unwrap().total;
        let fd = (plus - minus) / (2.0 * eps);
        let an = match coord {
            0 => analytic.cell(k, ci).0,
            1 => analytic.cell(k, ci).1,
            _ => analytic.cell(k, ci).2,
        };
        let denom = an.abs().max(fd.abs()).max(1e-7);
        let rel = (an - fd).abs() / denom;
        probes += 1;
        worst = worst.max(rel);
    }

    let elapsed = started.elapsed();
    assert!(probes >= 200, "{probes} probes");
    assert!(worst < 1e-4, "worst relative error {worst:.3e}");
    assert!(elapsed < Duration::from_secs(120), "{elapsed:?}");
    println!(
        "criterion 4 PASS: {probes} probes, worst rel err {worst:.2e}, {elapsed:?}"
    );
}

// ---------------------------------------------------------------------
// Criterion 5: codec round trip on 1000 random well-formed event lists.
// ---------------------------------------------------------------------
#[test]
fn criterion_5_codec_round_trip() {
    let started = Instant::now();
    let classes = vec!["a".to_string(), "b".to_string(), "c".to_string()];
    let clip = 8.0;
    let n_steps = 26;
    let d = clip / n_steps as f64;
    let mut rng = StdRng::seed_from_u64(1234);

    for case in 0..1000 {
        let mut events: EventList = Vec::new();
        for class in &classes {
            let mut t = 0.0;
            for _ in 0..rng.random_range(0..4) {
                let onset = t + d * 1.05 + rng.random_range(0.0..1.2);
                let offset = onset + rng.random_range(0.05..1.8);
                if offset > clip {
                    break;
                }
                events.push(Event::new(class.clone(), onset, offset));
                t = offset;
            }
        }
        let grid = encode(&events, clip, n_steps, &classes).unwrap();
        let decoded = decode(&grid, 0.5);
        assert_eq!(decoded.len(), events.len(), "case {case}");
        let mut expected = events.clone();
        expected.sort_by(|a, b| {
            a.onset
                .partial_cmp(&b.onset)
                .unwrap()
                .then_with(|| a.class_name.cmp(&b.class_name))
        });
        for (e, got) in expected.iter().zip(decoded.iter()) {
            assert_eq!(e.class_name, got.class_name, "case {case}");
            assert!(
                (e.onset - got.onset).abs() < 1e-6,
                "case {case}: onset {} vs {}",
                e.onset,
                got.onset
            );
            assert!(
                (e.offset - got.offset).abs() < 1e-6,
                "case {case}: offset {} vs {}",
                e.offset,
                got.offset
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "{elapsed:?}");
    println!("criterion 5 PASS: 1000 round trips within 1e-6 s, {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 6: metrics against an independent rasterize-and-count oracle.
// ---------------------------------------------------------------------

// Direct per-cell recount straight from the event lists, written without
// reference to the library's rasterizer.
#[allow(clippy::type_complexity)]
fn oracle_counts(
    reference: &[Event],
    estimate: &[Event],
    seg: f64,
    duration: f64,
) -> (u64, u64, u64, u64, u64, u64, u64) {
    let mut classes: Vec<String> = reference
        .iter()
        .chain(estimate.iter())
        .map(|e| e.class_name.clone())
        .collect();
    classes.sort();
    classes.dedup();
    let n_segments = (duration / seg).ceil() as usize;
    let (mut tp, mut fp, mut fn_, mut s, mut d, mut ins, mut n) = (0, 0, 0, 0, 0, 0, 0);
    for k in 0..n_segments {
        let lo = k as f64 * seg;
        let hi = lo + seg;
        let mut seg_fn = 0u64;
        let mut seg_fp = 0u64;
        for class in &classes {
            let active = |evs: &[Event]| {
                evs.iter()
                    .any(|e| e.class_name == *class && e.offset.min(hi) - e.onset.max(lo) > 0.0)
            };
            let (r, e) = (active(reference), active(estimate));
            if r && e {
                tp += 1;
            }
            if !r && e {
                fp += 1;
                seg_fp += 1;
            }
            if r && !e {
                fn_ += 1;
                seg_fn += 1;
            }
            if r {
                n += 1;
            }
        }
        s += seg_fn.min(seg_fp);
        d += seg_fn.saturating_sub(seg_fp);
        ins += seg_fp.saturating_sub(seg_fn);
    }
    (tp, fp, fn_, s, d, ins, n)
}

#[test]
fn criterion_6_metrics_oracle() {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(777);
    let classes = ["a", "b", "c"];
    let random_list = |rng: &mut StdRng| -> EventList {
        (0..rng.random_range(0..10))
            .map(|_| {
                let onset = rng.random_range(0.0..9.5);
                let dur = rng.random_range(0.02..4.0);
                Event::new(
                    classes[rng.random_range(0..3)],
                    onset,
                    (onset + dur).min(10.0),
                )
            })
            .collect()
    };

    for case in 0..1000 {
        let reference = random_list(&mut rng);
        let estimate = random_list(&mut rng);
        let seg = if case % 2 == 0 { 1.0 } else { 0.1 };
        let counts = SegmentCounts::from_lists(&reference, &estimate, seg, Some(10.0));
        let (tp, fp, fn_, s, d, ins, n) = oracle_counts(&reference, &estimate, seg, 10.0);
        assert_eq!(
            (counts.tp, counts.fp, counts.false_neg),
            (tp, fp, fn_),
            "case {case} seg {seg}"
        );
        assert_eq!(
            (
                counts.substitutions,
                counts.deletions,
                counts.insertions,
                counts.n_ref
            ),
            (s, d, ins, n),
            "case {case} seg {seg}"
        );
    }

    // Fixed-point cases.
    let reference = vec![Event::new("a", 0.2, 4.0), Event::new("b", 1.0, 2.0)];
    let (_, _, f) = segment_f1(&reference, &reference, 0.01, Some(8.0));
    assert_eq!(f, 1.0);
    let (er, ..) = error_rate(&reference, &reference, 0.01, Some(8.0));
    assert_eq!(er, 0.0);
    let (er, ..) = error_rate(&reference, &[], 1.0, Some(8.0));
    assert_eq!(er, 1.0, "empty prediction is pure deletions");

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(30), "{elapsed:?}");
    println!("criterion 6 PASS: 1000 oracle cases + fixed points, {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 7: smoothing thresholds and idempotence.
// ---------------------------------------------------------------------
#[test]
fn criterion_7_smoothing_suite() {
    let started = Instant::now();
    let broadcast = SmoothingConfig::music_speech();

    // Merge: gap 0.5 below the 0.8 s threshold.
    let merged = smooth(
        &[Event::new("music", 0.0, 2.0), Event::new("music", 2.5, 6.0)],
        &broadcast,
    );
    assert_eq!(merged.len(), 1);
    assert_eq!((merged[0].onset, merged[0].offset), (0.0, 6.0));

    // Drop: 3.0 s below the 3.4 s music minimum.
    assert!(smooth(&[Event::new("music", 0.0, 3.0)], &broadcast).is_empty());

    // Environmental: no minimum duration, 1.0 s merge gap.
    let environmental = SmoothingConfig::environmental();
    assert_eq!(
        smooth(&[Event::new("car", 0.0, 0.2)], &environmental).len(),
        1
    );
    let merged = smooth(
        &[Event::new("car", 0.0, 1.0), Event::new("car", 1.9, 3.0)],
        &environmental,
    );
    assert_eq!(merged.len(), 1);

    // Idempotence over 1000 random lists.
    let mut rng = StdRng::seed_from_u64(4242);
    let configs = [
        broadcast,
        environmental,
        SmoothingConfig::uniform(ClassSmoothing::new(0.5, Some(1.0))),
    ];
    for case in 0..1000 {
        let events: EventList = (0..rng.random_range(0..12))
            .map(|_| {
                let onset = rng.random_range(0.0..30.0);
                let dur = rng.random_range(0.05..5.0);
                let class = ["music", "speech", "car"][rng.random_range(0..3)];
                Event::new(class, onset, onset + dur)
            })
            .collect();
        let config = &configs[case % configs.len()];
        let once = smooth(&events, config);
        let twice = smooth(&once, config);
        assert_eq!(once, twice, "case {case}");
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(10), "{elapsed:?}");
    println!("criterion 7 PASS: threshold examples + 1000 idempotence cases, {elapsed:?}");
}

// ---------------------------------------------------------------------
// Criterion 8: desk-scale end-to-end training.
// ---------------------------------------------------------------------

struct DeskRun {
    _dir: tempfile::TempDir,
    model_path: PathBuf,
    f_measure: f64,
    error_rate: f64,
    total_secs: f64,
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let _guard = HEAVY.lock().unwrap();
        let started = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let profile = PipelineProfile::desk();

        synth_dataset(&SynthConfig::desk_default(11), 200, dir.path().join("train")).unwrap();
        synth_dataset(&SynthConfig::desk_default(12), 50, dir.path().join("val")).unwrap();
        synth_dataset(&SynthConfig::desk_default(13), 50, dir.path().join("test")).unwrap();

        let mut net = build_yoho(
            profile.input_time(),
            profile.features.n_mels,
            profile.classes.len(),
            BuildConfig {
                width_divisor: 8,
                seed: 7,
            },
        )
        .unwrap();
        let (n_steps, _) = net.output_shape();
        let train_set =
            load_samples(dir.path().join("train/manifest.tsv"), &profile, n_steps).unwrap();
        let val_set =
            load_samples(dir.path().join("val/manifest.tsv"), &profile, n_steps).unwrap();

        let config = TrainConfig {
            learning_rate: 0.002,
            batch_size: 32,
            early_stop_patience: 8,
            max_epochs: 60,
            seed: 7,
            time_limit: Some(Duration::from_secs(20 * 60)),
            ..TrainConfig::default()
        };
        let history = train(&mut net, &train_set, &val_set, &config).unwrap();
        eprintln!(
            "desk training: {} epochs, best val {:.4} at {}, {:?}",
            history.epochs.len(),
            history.best_val_loss,
            history.best_epoch,
            started.elapsed()
        );

        let model_path = dir.path().join("model.yoho");
        save_checkpoint(&model_path, &net, &profile.classes).unwrap();

        // Evaluate on the held-out split at 10 ms segments.
        let test_entries = read_manifest(dir.path().join("test/manifest.tsv")).unwrap();
        let mut totals = SegmentCounts::default();
        for entry in &test_entries {
            let audio = load_audio_for(&profile, &entry.wav).unwrap();
            let predicted =
                predict_events(&mut net, &profile.classes, &audio, &profile, 0.5).unwrap();
            let reference = read_tsv(&entry.tsv).unwrap();
            totals.merge(&SegmentCounts::from_lists(
                &reference,
                &predicted,
                profile.eval_segment_secs,
                Some(8.0),
            ));
        }

        DeskRun {
            _dir: dir,
            model_path,
            f_measure: totals.f_measure(),
            error_rate: totals.error_rate(),
            total_secs: started.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_8_desk_scale_end_to_end() {
    let run = desk_run();
    assert!(
        run.f_measure >= 0.85,
        "segment F1 {:.4} below the 0.85 bar",
        run.f_measure
    );
    assert!(
        run.total_secs < 30.0 * 60.0,
        "end-to-end run took {:.1} min",
        run.total_secs / 60.0
    );
    println!(
        "criterion 8 PASS: test segment-F1 {:.4} (ER {:.3}) in {:.1} min",
        run.f_measure,
        run.error_rate,
        run.total_secs / 60.0
    );
}

// Long-file prediction: an event crossing the 8 s window seam must come
// out as one merged event.
#[test]
fn criterion_8b_window_seam_merging() {
    let run = desk_run();
    let profile = PipelineProfile::desk();
    let (mut net, classes) = yoho::net::checkpoint::load_checkpoint(&run.model_path).unwrap();

    // 16 s of audio with one harmonic tone from 6.5 s to 9.5 s, rendered
    // the way the generator renders the "tone" class.
    let rate = 16_000u32;
    let mut samples = vec![0.0f32; 16 * rate as usize];
    let f0 = 320.0;
    for (i, sample) in samples.iter_mut().enumerate() {
        let t = i as f64 / rate as f64;
        if (6.5..9.5).contains(&t) {
            let mut v = 0.0;
            for h in 1..=4 {
                v += 0.2 / h as f64
                    * (std::f64::consts::TAU * f0 * h as f64 * t).sin();
            }
            *sample = v as f32;
        }
    }
    let audio = yoho::audio::AudioBuffer::new(samples, rate);
    let events = predict_events(&mut net, &classes, &audio, &profile, 0.5).unwrap();

    let tone_events: Vec<&Event> = events.iter().filter(|e| e.class_name == "tone").collect();
    assert_eq!(
        tone_events.len(),
        1,
        "expected one merged event across the seam, got {events:?}"
    );
    let ev = tone_events[0];
    assert!(
        ev.onset < 7.0 && ev.offset > 9.0,
        "merged event [{:.2}, {:.2}] does not span the seam",
        ev.onset,
        ev.offset
    );
    println!(
        "criterion 8b PASS: seam event decoded as [{:.2}, {:.2}]",
        ev.onset, ev.offset
    );
}

// ---------------------------------------------------------------------
// Criterion 9: prediction + smoothing speed direction on 1 h of audio.
// ---------------------------------------------------------------------
#[test]
fn criterion_9_speed_direction() {
    let _guard = HEAVY.lock().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let profile = PipelineProfile::desk();

    // One hour of synthetic audio: 450 clips of 8 s.
    let corpus_dir = dir.path().join("corpus");
    let entries = synth_dataset(&SynthConfig::desk_default(99), 450, &corpus_dir).unwrap();
    let wavs: Vec<PathBuf> = entries.iter().map(|e| e.wav.clone()).collect();

    let build_cfg = BuildConfig {
        width_divisor: 8,
        seed: 21,
    };
    let yoho_net = build_yoho(
        profile.input_time(),
        profile.features.n_mels,
        2,
        build_cfg,
    )
    .unwrap();
    let frame_net = build_frame_cnn(
        profile.input_time(),
        profile.features.n_mels,
        2,
        build_cfg,
    )
    .unwrap();
    let yoho_path = dir.path().join("yoho.ckpt");
    let frame_path = dir.path().join("frame.ckpt");
    save_checkpoint(&yoho_path, &yoho_net, &profile.classes).unwrap();
    save_checkpoint(&frame_path, &frame_net, &profile.classes).unwrap();

    let report = bench_models(&yoho_path, &frame_path, &wavs, &profile, 0.5).unwrap();

    assert!((report.audio_hours - 1.0).abs() < 0.01, "{}", report.audio_hours);
    assert_eq!(report.yoho.output_neurons_per_window, 156);
    assert_eq!(report.frame.output_neurons_per_window, 1602);

    let yoho_total = report.yoho.predict_secs_per_hour + report.yoho.smooth_secs_per_hour;
    let frame_total = report.frame.predict_secs_per_hour + report.frame.smooth_secs_per_hour;
    assert!(
        yoho_total < frame_total,
        "regression head not faster: {yoho_total:.2}s vs {frame_total:.2}s per hour"
    );
    println!(
        "criterion 9 PASS: predict {:.2}s vs {:.2}s, smooth {:.3}s vs {:.3}s per hour \
         (total speedup {:.1}x); neurons 156 vs 1602",
        report.yoho.predict_secs_per_hour,
        report.frame.predict_secs_per_hour,
        report.yoho.smooth_secs_per_hour,
        report.frame.smooth_secs_per_hour,
        frame_total / yoho_total
    );
}
