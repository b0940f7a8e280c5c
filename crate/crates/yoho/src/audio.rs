//! WAV decoding, channel downmix, and sample-rate conversion.
//!
//! The pipeline consumes mono audio at a profile-defined rate; this module
//! turns arbitrary PCM WAV files into that shape. Decoding is backed by
//! `hound`; the resampler is a windowed-sinc interpolator implemented here.

use std::f64::consts::PI;
use std::path::Path;

use crate::error::{Error, Result};

/// Mono PCM audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    /// Amplitudes in [-1, 1].
    pub samples: Vec<f32>,
    /// Hz, always > 0.
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        AudioBuffer {
            samples,
            sample_rate,
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decoded WAV before downmixing: one sample vector per channel.
#[derive(Debug, Clone)]
pub struct MultiChannelBuffer {
    /// Per-channel samples, all vectors the same length.
    pub channels: Vec<Vec<f32>>,
    pub sample_rate: u32,
}

impl MultiChannelBuffer {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Decode a PCM WAV file (8/16/24-bit integer or 32-bit float).
///
/// Integer samples are normalized by the full scale of their bit width
/// (e.g. 32768 for 16-bit), so digital silence decodes to exactly 0.0.
pub fn load_wav(path: impl AsRef<Path>) -> Result<MultiChannelBuffer> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| map_open_error(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(Error::MalformedWav {
            path: path.to_path_buf(),
            detail: "zero channels".into(),
        });
    }

    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::NonPcm {
                    path: path.to_path_buf(),
                    detail: format!("{}-bit float not supported", spec.bits_per_sample),
                });
            }
            collect_samples::<f32>(reader.samples::<f32>(), path)?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !(8..=32).contains(&bits) {
                return Err(Error::NonPcm {
                    path: path.to_path_buf(),
                    detail: format!("{bits}-bit integer not supported"),
                });
            }
            let full_scale = (1i64 << (bits - 1)) as f32;
            let raw = collect_samples::<i32>(reader.samples::<i32>(), path)?;
            raw.into_iter().map(|s| s as f32 / full_scale).collect()
        }
    };

    let n_channels = spec.channels as usize;
    let frames = interleaved.len() / n_channels;
    let mut channels = vec![Vec::with_capacity(frames); n_channels];
    for (i, s) in interleaved.into_iter().enumerate() {
        channels[i % n_channels].push(s);
    }
    Ok(MultiChannelBuffer {
        channels,
        sample_rate: spec.sample_rate,
    })
}

fn collect_samples<S: hound::Sample>(
    iter: hound::WavSamples<'_, std::io::BufReader<std::fs::File>, S>,
    path: &Path,
) -> Result<Vec<S>> {
    iter.collect::<std::result::Result<Vec<S>, hound::Error>>()
        .map_err(|e| match e {
            hound::Error::IoError(ref io) if is_short_read(io) => Error::TruncatedData {
                path: path.to_path_buf(),
            },
            hound::Error::IoError(io) => Error::Unreadable {
                path: path.to_path_buf(),
                source: io,
            },
            other => Error::MalformedWav {
                path: path.to_path_buf(),
                detail: other.to_string(),
            },
        })
}

// Hound reports samples running out before the declared data-chunk end as a
// custom "Failed to read enough bytes" IO error.
fn is_short_read(io: &std::io::Error) -> bool {
    io.kind() == std::io::ErrorKind::UnexpectedEof
        || io.to_string().contains("enough bytes")
}

fn map_open_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(ref io) if is_short_read(io) => Error::TruncatedData {
            path: path.to_path_buf(),
        },
        hound::Error::IoError(io) => Error::Unreadable {
            path: path.to_path_buf(),
            source: io,
        },
        hound::Error::Unsupported => Error::NonPcm {
            path: path.to_path_buf(),
            detail: "unsupported encoding".into(),
        },
        hound::Error::FormatError(msg) => Error::MalformedWav {
            path: path.to_path_buf(),
            detail: msg.to_string(),
        },
        other => Error::MalformedWav {
            path: path.to_path_buf(),
            detail: other.to_string(),
        },
    }
}

/// Average all channels into one. Mono input comes back unchanged.
pub fn downmix_to_mono(buffer: &MultiChannelBuffer) -> AudioBuffer {
    assert!(
        !buffer.channels.is_empty(),
        "downmix requires at least one channel"
    );
    if buffer.channels.len() == 1 {
        return AudioBuffer::new(buffer.channels[0].clone(), buffer.sample_rate);
    }
    let n = buffer.len();
    let scale = 1.0 / buffer.channels.len() as f64;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let sum: f64 = buffer.channels.iter().map(|ch| ch[i] as f64).sum();
        samples.push((sum * scale) as f32);
    }
    AudioBuffer::new(samples, buffer.sample_rate)
}

// Windowed-sinc kernel half-width in input samples at unity ratio. 32 zero
// crossings with a Blackman window gives > 70 dB stopband attenuation.
const SINC_HALF_TAPS: usize = 32;
// Pull the cutoff slightly below Nyquist so the transition band stays inside it.
const ROLLOFF: f64 = 0.945;

/// Band-limited resampling to `target_rate`.
///
/// Output length is `round(len * target_rate / input_rate)`. Equal rates
/// return a bit-identical copy. Tap sums are renormalized per output sample,
/// so constant signals are preserved exactly, including at the edges.
pub fn resample(buffer: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidConfig("target sample rate is 0".into()));
    }
    if target_rate == buffer.sample_rate {
        return Ok(buffer.clone());
    }

    let in_rate = buffer.sample_rate as u64;
    let out_rate = target_rate as u64;
    let n_in = buffer.samples.len() as u64;
    let n_out = ((n_in * out_rate + in_rate / 2) / in_rate) as usize;

    let ratio = out_rate as f64 / in_rate as f64;
    let (cutoff, half_width) = if ratio >= 1.0 {
        (0.5 * ROLLOFF, SINC_HALF_TAPS as f64)
    } else {
        (0.5 * ratio * ROLLOFF, (SINC_HALF_TAPS as f64 / ratio).ceil())
    };
    let hw = half_width as i64;

    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out as u64 {
        // Center of output sample j in input-sample units, kept rational
        // so long signals do not drift.
        let num = j * in_rate;
        let n0 = (num / out_rate) as i64;
        let frac = (num % out_rate) as f64 / out_rate as f64;

        let mut acc = 0.0f64;
        let mut norm = 0.0f64;
        for k in (n0 - hw + 1)..=(n0 + hw) {
            if k < 0 || k as u64 >= n_in {
                continue;
            }
            let t = (n0 - k) as f64 + frac;
            let w = windowed_sinc(t, cutoff, half_width);
            norm += w;
            acc += w * buffer.samples[k as usize] as f64;
        }
        out.push(if norm != 0.0 { (acc / norm) as f32 } else { 0.0 });
    }

    Ok(AudioBuffer::new(out, target_rate))
}

fn windowed_sinc(t: f64, cutoff: f64, half_width: f64) -> f64 {
    let x = t / half_width;
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let sinc = if t == 0.0 {
        2.0 * cutoff
    } else {
        (2.0 * PI * cutoff * t).sin() / (PI * t)
    };
    let window = 0.42 + 0.5 * (PI * x).cos() + 0.08 * (2.0 * PI * x).cos();
    sinc * window
}
