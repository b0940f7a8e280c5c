//! End-to-end operations behind the CLI: long-file prediction over tiled
//! windows, dataset preparation, directory evaluation, and the
//! prediction-speed benchmark.

use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::audio::{downmix_to_mono, load_wav, resample, AudioBuffer};
use crate::error::{Error, Result};
use crate::features::log_mel;
use crate::labels::{self, EventList};
use crate::metrics::{MetricsReport, SegmentCounts};
use crate::net::checkpoint::load_checkpoint;
use crate::net::tensor::Tensor;
use crate::net::train::Sample;
use crate::net::{ArchKind, Network};
use crate::profiles::PipelineProfile;
use crate::smooth::smooth;

/// Decode a WAV into mono audio at the profile's sample rate.
pub fn load_audio_for(profile: &PipelineProfile, path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let raw = load_wav(path)?;
    let mono = downmix_to_mono(&raw);
    resample(&mono, profile.features.sample_rate)
}

/// Confirm a checkpointed network fits a profile's feature geometry.
pub fn check_compat(net: &Network, profile: &PipelineProfile) -> Result<()> {
    if net.n_mels != profile.features.n_mels || net.input_time != profile.input_time() {
        return Err(Error::ProfileMismatch(format!(
            "checkpoint expects {}x{} input, profile {} produces {}x{}",
            net.input_time,
            net.n_mels,
            profile.name,
            profile.input_time(),
            profile.features.n_mels
        )));
    }
    Ok(())
}

// Consecutive non-overlapping windows; the final partial window is
// zero-padded to full length. Empty audio yields no windows.
fn window_slices(audio: &AudioBuffer, window_samples: usize) -> Vec<Vec<f32>> {
    let n = audio.samples.len();
    let n_windows = n.div_ceil(window_samples);
    (0..n_windows)
        .map(|w| {
            let lo = w * window_samples;
            let hi = ((w + 1) * window_samples).min(n);
            let mut slice = audio.samples[lo..hi].to_vec();
            slice.resize(window_samples, 0.0);
            slice
        })
        .collect()
}

/// Shift per-window event lists onto the global timeline, smooth across
/// the seams, and clamp to the actual audio duration.
pub fn merge_window_events(
    per_window: Vec<EventList>,
    window_secs: f64,
    profile: &PipelineProfile,
    total_duration: f64,
) -> EventList {
    let mut all: EventList = Vec::new();
    for (w, events) in per_window.into_iter().enumerate() {
        let offset = w as f64 * window_secs;
        for mut ev in events {
            ev.onset += offset;
            ev.offset += offset;
            if ev.onset >= total_duration {
                continue;
            }
            ev.offset = ev.offset.min(total_duration);
            if ev.offset > ev.onset {
                all.push(ev);
            }
        }
    }
    smooth(&all, &profile.smoothing)
}

/// Run the network over a long file: consecutive windows, per-window grid
/// decode, then global smoothing across window seams.
pub fn predict_events(
    net: &mut Network,
    classes: &[String],
    audio: &AudioBuffer,
    profile: &PipelineProfile,
    threshold: f64,
) -> Result<EventList> {
    if audio.sample_rate != profile.features.sample_rate {
        return Err(Error::RateMismatch {
            expected: profile.features.sample_rate,
            actual: audio.sample_rate,
        });
    }
    check_compat(net, profile)?;
    let windows = window_slices(audio, profile.window_samples());
    let (t_out, _) = net.output_shape();
    let step_duration = profile.window_secs / t_out as f64;

    let mut per_window: Vec<EventList> = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(8) {
        let mut batch = Tensor::zeros(&[chunk.len(), net.input_time, net.n_mels, 1]);
        let per = net.input_time * net.n_mels;
        for (b, slice) in chunk.iter().enumerate() {
            let mel = log_mel(
                &AudioBuffer::new(slice.clone(), audio.sample_rate),
                &profile.features,
            )?;
            if mel.time_steps() != net.input_time {
                return Err(Error::ShapeMismatch(format!(
                    "window produced {} frames, network expects {}",
                    mel.time_steps(),
                    net.input_time
                )));
            }
            batch.data[b * per..(b + 1) * per].copy_from_slice(&mel.values.data);
        }
        let out = net.forward_infer(&batch)?;
        let cols = out.shape[2];
        for b in 0..chunk.len() {
            let flat = out.data[b * t_out * cols..(b + 1) * t_out * cols].to_vec();
            let grid = labels::YohoGrid::from_flat(flat, classes.to_vec(), step_duration)?;
            per_window.push(labels::decode(&grid, threshold));
        }
    }

    Ok(merge_window_events(
        per_window,
        profile.window_secs,
        profile,
        audio.duration_secs(),
    ))
}

/// Checkpoint-to-TSV prediction for one file.
pub fn predict_file(
    model: impl AsRef<Path>,
    wav: impl AsRef<Path>,
    profile: &PipelineProfile,
    threshold: f64,
    out_tsv: impl AsRef<Path>,
) -> Result<EventList> {
    let (mut net, classes) = load_checkpoint(model)?;
    if net.arch != ArchKind::Yoho {
        return Err(Error::ProfileMismatch(
            "prediction needs a regression-head checkpoint".into(),
        ));
    }
    check_compat(&net, profile)?;
    let audio = load_audio_for(profile, wav)?;
    let events = predict_events(&mut net, &classes, &audio, profile, threshold)?;
    labels::write_tsv(out_tsv, &events)?;
    Ok(events)
}

/// Load a manifest into training samples: window-length clips only.
pub fn load_samples(
    manifest: impl AsRef<Path>,
    profile: &PipelineProfile,
    n_steps: usize,
) -> Result<Vec<Sample>> {
    let entries = crate::datagen::read_manifest(manifest)?;
    let expected_frames = profile.input_time();
    entries
        .iter()
        .map(|entry| {
            let audio = load_audio_for(profile, &entry.wav)?;
            let mel = log_mel(&audio, &profile.features)?;
            if mel.time_steps() != expected_frames {
                return Err(Error::ShapeMismatch(format!(
                    "{}: {} frames, expected {} (clip must be one window long)",
                    entry.wav.display(),
                    mel.time_steps(),
                    expected_frames
                )));
            }
            let events = labels::read_tsv(&entry.tsv)?;
            let target = labels::encode(
                &labels::merge_same_class(&events, 0.0),
                profile.window_secs,
                n_steps,
                &profile.classes,
            )?;
            Ok(Sample {
                features: mel.values,
                target,
            })
        })
        .collect()
}

/// Match `*.tsv` files between two directories by file name and reduce
/// their segment counts once. Unmatched names on either side are an error.
pub fn evaluate_dirs(
    ref_dir: impl AsRef<Path>,
    est_dir: impl AsRef<Path>,
    segment_size: f64,
    fixed_duration: Option<f64>,
) -> Result<MetricsReport> {
    let list = |dir: &Path| -> Result<Vec<String>> {
        let mut names = Vec::new();
        let entries = std::fs::read_dir(dir)
            .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io("reading directory entry", e))?;
            let name = entry.file_name().to_string_lossy().to_string();
            if name.ends_with(".tsv") && name != "manifest.tsv" {
                names.push(name);
            }
        }
        names.sort();
        Ok(names)
    };
    let ref_dir = ref_dir.as_ref();
    let est_dir = est_dir.as_ref();
    let ref_names = list(ref_dir)?;
    let est_names = list(est_dir)?;

    let unmatched: Vec<String> = ref_names
        .iter()
        .filter(|n| !est_names.contains(n))
        .map(|n| format!("missing estimate for {n}"))
        .chain(
            est_names
                .iter()
                .filter(|n| !ref_names.contains(n))
                .map(|n| format!("missing reference for {n}")),
        )
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::UnmatchedFiles(unmatched));
    }
    if ref_names.is_empty() {
        return Err(Error::InvalidConfig("no annotation files to compare".into()));
    }

    let mut totals = SegmentCounts::default();
    for name in &ref_names {
        let reference = labels::read_tsv(ref_dir.join(name))?;
        let estimate = labels::read_tsv(est_dir.join(name))?;
        totals.merge(&SegmentCounts::from_lists(
            &reference,
            &estimate,
            segment_size,
            fixed_duration,
        ));
    }
    Ok(totals.report(segment_size))
}

/// Per-model timing split, normalized to one hour of audio.
#[derive(Debug, Clone)]
pub struct ModelBench {
    pub label: String,
    pub predict_secs_per_hour: f64,
    pub smooth_secs_per_hour: f64,
    pub output_neurons_per_window: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub audio_hours: f64,
    pub yoho: ModelBench,
    pub frame: ModelBench,
}

impl BenchReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("audio_hours={:.3}\n", self.audio_hours));
        for m in [&self.yoho, &self.frame] {
            out.push_str(&format!(
                "{}.predict_secs_per_hour={:.3}\n{}.smooth_secs_per_hour={:.3}\n{}.output_neurons_per_window={}\n",
                m.label, m.predict_secs_per_hour, m.label, m.smooth_secs_per_hour,
                m.label, m.output_neurons_per_window
            ));
        }
        out.push_str(&format!(
            "predict_speedup={:.2}\nsmooth_speedup={:.2}\n",
            self.frame.predict_secs_per_hour / self.yoho.predict_secs_per_hour,
            self.frame.smooth_secs_per_hour / self.yoho.smooth_secs_per_hour
        ));
        out
    }
}

// Frame-classification decode: threshold each per-frame probability, turn
// runs of active frames into events. This is the serial per-frame parse
// the coarse-step head avoids.
fn frame_decode(
    out: &[f64],
    t: usize,
    classes: &[String],
    hop_secs: f64,
    threshold: f64,
    window_secs: f64,
) -> EventList {
    let c = classes.len();
    let mut events = EventList::new();
    for (ci, class) in classes.iter().enumerate() {
        let mut run_start: Option<usize> = None;
        for k in 0..=t {
            let active = k < t && out[k * c + ci] >= threshold;
            match (active, run_start) {
                (true, None) => run_start = Some(k),
                (false, Some(start)) => {
                    let onset = start as f64 * hop_secs;
                    let offset = (k as f64 * hop_secs).min(window_secs);
                    if offset > onset {
                        events.push(labels::Event::new(class.clone(), onset, offset));
                    }
                    run_start = None;
                }
                _ => {}
            }
        }
    }
    events
}

/// Time prediction and smoothing for both heads over a WAV corpus.
///
/// Feature extraction is shared work and excluded from the timings. The
/// whole benchmark runs on a single-thread pool for stable numbers.
pub fn bench_models(
    yoho_model: impl AsRef<Path>,
    frame_model: impl AsRef<Path>,
    corpus: &[PathBuf],
    profile: &PipelineProfile,
    threshold: f64,
) -> Result<BenchReport> {
    let (mut yoho_net, yoho_classes) = load_checkpoint(yoho_model)?;
    let (mut frame_net, frame_classes) = load_checkpoint(frame_model)?;
    if yoho_net.arch != ArchKind::Yoho || frame_net.arch != ArchKind::FrameCnn {
        return Err(Error::ProfileMismatch(
            "bench needs one regression-head and one frame-head checkpoint".into(),
        ));
    }
    if yoho_net.param_count() != frame_net.param_count() {
        return Err(Error::ProfileMismatch(format!(
            "parameter counts differ: {} vs {}",
            yoho_net.param_count(),
            frame_net.param_count()
        )));
    }
    check_compat(&yoho_net, profile)?;
    check_compat(&frame_net, profile)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot build bench pool: {e}")))?;

    let mut total_secs = 0.0f64;
    let mut windows_features: Vec<Tensor> = Vec::new();
    for path in corpus {
        let audio = load_audio_for(profile, path)?;
        total_secs += audio.duration_secs();
        for slice in window_slices(&audio, profile.window_samples()) {
            let mel = log_mel(
                &AudioBuffer::new(slice, profile.features.sample_rate),
                &profile.features,
            )?;
            let mut tensor = Tensor::zeros(&[1, mel.time_steps(), mel.n_mels(), 1]);
            tensor.data.copy_from_slice(&mel.values.data);
            windows_features.push(tensor);
        }
    }
    if windows_features.is_empty() {
        return Err(Error::InvalidConfig("bench corpus is empty".into()));
    }
    let hours = total_secs / 3600.0;

    let (yoho_t, yoho_cols) = yoho_net.output_shape();
    let step_duration = profile.window_secs / yoho_t as f64;
    let (frame_t, frame_cols) = frame_net.output_shape();

    let mut report = BenchReport {
        audio_hours: hours,
        yoho: ModelBench {
            label: "yoho".into(),
            predict_secs_per_hour: 0.0,
            smooth_secs_per_hour: 0.0,
            output_neurons_per_window: yoho_t * yoho_cols,
        },
        frame: ModelBench {
            label: "frame_cnn".into(),
            predict_secs_per_hour: 0.0,
            smooth_secs_per_hour: 0.0,
            output_neurons_per_window: frame_t * frame_cols,
        },
    };

    pool.install(|| -> Result<()> {
        // Regression head: forward, then grid decode + merge + smooth.
        let started = Instant::now();
        let mut outputs = Vec::with_capacity(windows_features.len());
        for features in &windows_features {
            outputs.push(yoho_net.forward_infer(features)?);
        }
        let predict = started.elapsed().as_secs_f64();

        let started = Instant::now();
        let mut per_window = Vec::with_capacity(outputs.len());
        for out in &outputs {
            let grid = labels::YohoGrid::from_flat(
                out.data.clone(),
                yoho_classes.clone(),
                step_duration,
            )?;
            per_window.push(labels::decode(&grid, threshold));
        }
        let _ = merge_window_events(per_window, profile.window_secs, profile, total_secs);
        let smooth_time = started.elapsed().as_secs_f64();
        report.yoho.predict_secs_per_hour = predict / hours;
        report.yoho.smooth_secs_per_hour = smooth_time / hours;

        // Frame head: forward, then per-frame parse + smooth.
        let started = Instant::now();
        let mut outputs = Vec::with_capacity(windows_features.len());
        for features in &windows_features {
            outputs.push(frame_net.forward_infer(features)?);
        }
        let predict = started.elapsed().as_secs_f64();

        let started = Instant::now();
        let mut per_window = Vec::with_capacity(outputs.len());
        for out in &outputs {
            per_window.push(frame_decode(
                &out.data,
                frame_t,
                &frame_classes,
                profile.features.hop_secs,
                threshold,
                profile.window_secs,
            ));
        }
        let _ = merge_window_events(per_window, profile.window_secs, profile, total_secs);
        let smooth_time = started.elapsed().as_secs_f64();
        report.frame.predict_secs_per_hour = predict / hours;
        report.frame.smooth_secs_per_hour = smooth_time / hours;
        Ok(())
    })?;

    Ok(report)
}
