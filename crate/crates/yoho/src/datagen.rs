//! Deterministic synthetic dataset generator.
//!
//! Clips mix parameterized events onto a timeline: harmonic tones stand in
//! for pitched material and band-limited noise bursts for unpitched
//! material, with disjoint spectral bands so tests can verify the rendered
//! audio against the returned ground truth by band energy. Every clip is a
//! pure function of `(seed, index)`.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::labels::{Event, EventList};

/// How one class sounds.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// Fundamental drawn from `f0_range`, plus `harmonics` overtones at
    /// 1/h amplitude.
    HarmonicTone { f0_range: (f64, f64), harmonics: usize },
    /// Sum of random-phase sinusoids spread uniformly over `band`.
    BandNoise { band: (f64, f64) },
}

impl Generator {
    /// Frequency band this generator's energy stays inside.
    pub fn band(&self) -> (f64, f64) {
        match self {
            Generator::HarmonicTone {
                f0_range,
                harmonics,
            } => (f0_range.0 * 0.9, f0_range.1 * (*harmonics).max(1) as f64 * 1.1),
            Generator::BandNoise { band } => *band,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    pub name: String,
    pub generator: Generator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub clip_duration: f64,
    pub sample_rate: u32,
    pub classes: Vec<ClassSpec>,
    /// Inclusive range of event counts per clip.
    pub events_per_clip: (usize, usize),
    pub duration_range: (f64, f64),
    /// Allow different-class events to overlap in time. Same-class events
    /// never overlap regardless.
    pub overlap_allowed: bool,
    /// Linear fade length; ramps sit inside the annotated span, so all
    /// event energy stays within the ground-truth boundaries.
    pub fade: f64,
    /// Broadband noise floor level relative to event level, in dB.
    /// Only mixed in when the clip contains at least one event, so an
    /// event-free clip is exactly silent.
    pub snr_range: (f64, f64),
    pub seed: u64,
}

impl SynthConfig {
    /// Two-class desk configuration: 8 s clips at 16 kHz, tone events in
    /// the low band, noise bursts in the 3-6 kHz band.
    pub fn desk_default(seed: u64) -> Self {
        SynthConfig {
            clip_duration: 8.0,
            sample_rate: 16_000,
            classes: vec![
                ClassSpec {
                    name: "tone".to_string(),
                    generator: Generator::HarmonicTone {
                        f0_range: (220.0, 440.0),
                        harmonics: 4,
                    },
                },
                ClassSpec {
                    name: "noise".to_string(),
                    generator: Generator::BandNoise {
                        band: (3_000.0, 6_000.0),
                    },
                },
            ],
            events_per_clip: (1, 3),
            duration_range: (1.5, 4.0),
            overlap_allowed: true,
            fade: 0.02,
            snr_range: (28.0, 40.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_duration <= 0.0 || self.sample_rate == 0 {
            return Err(Error::InvalidConfig("bad clip duration or rate".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidConfig("need at least one class".into()));
        }
        let (lo, hi) = self.duration_range;
        if !(0.0 < lo && lo <= hi && hi <= self.clip_duration) {
            return Err(Error::InvalidConfig(
                "duration range must sit within (0, clip_duration]".into(),
            ));
        }
        if self.events_per_clip.0 > self.events_per_clip.1 {
            return Err(Error::InvalidConfig("bad events_per_clip range".into()));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        for class in &self.classes {
            let (_, band_hi) = class.generator.band();
            if band_hi >= nyquist {
                return Err(Error::InvalidConfig(format!(
                    "class {} band reaches past Nyquist",
                    class.name
                )));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

// Minimum silence between same-class events, so decoded fragments of
// distinct events never merge at training-data scale.
const SAME_CLASS_GAP: f64 = 0.6;

/// Render clip `index`: audio plus exact ground truth.
pub fn synth_clip(config: &SynthConfig, index: usize) -> Result<(AudioBuffer, EventList)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64 + 1);

    let n_samples = (config.clip_duration * config.sample_rate as f64).round() as usize;
    let mut mix = vec![0.0f64; n_samples];

    // Place events class by class with rejection sampling.
    let count = rng.random_range(config.events_per_clip.0..=config.events_per_clip.1);
    let mut events: Vec<(usize, Event)> = Vec::new();
    for _ in 0..count {
        let ci = rng.random_range(0..config.classes.len());
        let dur = rng.random_range(config.duration_range.0..=config.duration_range.1);
        let max_onset = config.clip_duration - dur;
        if max_onset <= 0.0 {
            continue;
        }
        for _attempt in 0..40 {
            let onset = rng.random_range(0.0..max_onset);
            let offset = onset + dur;
            let clash = events.iter().any(|(other_ci, ev)| {
                let same_class = *other_ci == ci;
                let must_separate = same_class || !config.overlap_allowed;
                let gap = if same_class { SAME_CLASS_GAP } else { 0.0 };
                must_separate && onset < ev.offset + gap && offset > ev.onset - gap
            });
            if !clash {
                events.push((
                    ci,
                    Event::new(config.classes[ci].name.clone(), onset, offset),
                ));
                break;
            }
        }
        // Crowded clips simply get fewer events.
    }
    events.sort_by(|a, b| a.1.onset.partial_cmp(&b.1.onset).unwrap());

    for (ci, ev) in &events {
        render_event(
            &mut mix,
            config.sample_rate,
            &config.classes[*ci].generator,
            ev,
            config.fade,
            &mut rng,
        );
    }

    // Broadband floor, present only when something else is.
    if !events.is_empty() {
        let snr_db = rng.random_range(config.snr_range.0..=config.snr_range.1);
        let floor = 0.25 * 10f64.powf(-snr_db / 20.0);
        for v in mix.iter_mut() {
            *v += floor * (rng.random::<f64>() * 2.0 - 1.0);
        }
    }

    let samples: Vec<f32> = mix.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect();
    let list: EventList = events.into_iter().map(|(_, e)| e).collect();
    Ok((AudioBuffer::new(samples, config.sample_rate), list))
}

fn render_event(
    mix: &mut [f64],
    sample_rate: u32,
    generator: &Generator,
    event: &Event,
    fade: f64,
    rng: &mut ChaCha8Rng,
) {
    let rate = sample_rate as f64;
    let start = (event.onset * rate).round() as usize;
    let end = ((event.offset * rate).round() as usize).min(mix.len());
    if start >= end {
        return;
    }
    let n = end - start;
    let fade_samples = ((fade * rate).round() as usize).min(n / 2);
    let amplitude = rng.random_range(0.15..0.3);

    // (frequency, amplitude, phase) partials.
    let partials: Vec<(f64, f64, f64)> = match generator {
        Generator::HarmonicTone {
            f0_range,
            harmonics,
        } => {
            let f0 = rng.random_range(f0_range.0..=f0_range.1);
            (1..=(*harmonics).max(1))
                .map(|h| {
                    (
                        f0 * h as f64,
                        amplitude / h as f64,
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect()
        }
        Generator::BandNoise { band } => {
            let k = 48;
            let scale = amplitude * (2.0 / k as f64).sqrt();
            (0..k)
                .map(|_| {
                    (
                        rng.random_range(band.0..=band.1),
                        scale,
                        rng.random_range(0.0..std::f64::consts::TAU),
                    )
                })
                .collect()
        }
    };

    for i in 0..n {
        let t = (start + i) as f64 / rate;
        let envelope = if i < fade_samples {
            i as f64 / fade_samples.max(1) as f64
        } else if i >= n - fade_samples {
            (n - 1 - i) as f64 / fade_samples.max(1) as f64
        } else {
            1.0
        };
        let mut v = 0.0;
        for &(freq, amp, phase) in &partials {
            v += amp * (std::f64::consts::TAU * freq * t + phase).sin();
        }
        mix[start + i] += envelope * v;
    }
}

/// Write mono 16-bit PCM.
pub fn write_wav(path: impl AsRef<Path>, buffer: &AudioBuffer) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(format!("creating {}", path.display()), io),
        other => Error::InvalidConfig(other.to_string()),
    })?;
    for &s in &buffer.samples {
        let v = (s.clamp(-1.0, 1.0) as f64 * 32767.0).round() as i16;
        writer
            .write_sample(v)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub wav: PathBuf,
    pub tsv: PathBuf,
}

/// Render `n_clips` clips into `out_dir`: WAV + TSV per clip plus a
/// `manifest.tsv` of `wav_path<TAB>tsv_path` lines.
pub fn synth_dataset(
    config: &SynthConfig,
    n_clips: usize,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<ManifestEntry>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let manifest_path = out_dir.join("manifest.tsv");
    let mut manifest = std::fs::File::create(&manifest_path)
        .map_err(|e| Error::io(format!("creating {}", manifest_path.display()), e))?;

    let mut entries = Vec::with_capacity(n_clips);
    for index in 0..n_clips {
        let (audio, events) = synth_clip(config, index)?;
        let wav = out_dir.join(format!("clip_{index:05}.wav"));
        let tsv = out_dir.join(format!("clip_{index:05}.tsv"));
        write_wav(&wav, &audio)?;
        crate::labels::write_tsv(&tsv, &events)?;
        writeln!(manifest, "clip_{index:05}.wav\tclip_{index:05}.tsv")
            .map_err(|e| Error::io("writing manifest", e))?;
        entries.push(ManifestEntry { wav, tsv });
    }
    Ok(entries)
}

/// Read a manifest; relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (wav, tsv) = line.split_once('\t').ok_or_else(|| Error::BadAnnotation {
            path: path.to_path_buf(),
            line: i + 1,
            detail: "expected wav<TAB>tsv".into(),
        })?;
        let resolve = |p: &str| {
            let p = Path::new(p);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            }
        };
        entries.push(ManifestEntry {
            wav: resolve(wav),
            tsv: resolve(tsv),
        });
    }
    Ok(entries)
}
