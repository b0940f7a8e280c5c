//! Log-mel spectrogram extraction.
//!
//! Front end: Hann-windowed STFT with reflective center padding, power
//! spectrum into a triangular mel filterbank (HTK mel scale, unnormalized
//! triangles), then a natural log with a small floor. Center padding makes
//! the frame count `floor(n_samples / hop) + 1`, which is what the network
//! input shapes assume.

use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Parameters of the log-mel front end.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_secs: f64,
    pub hop_secs: f64,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl FeatureConfig {
    /// 16 kHz broadcast configuration: 25 ms window, 10 ms hop, 64 mel bins
    /// spanning 125 Hz to 7.5 kHz.
    pub fn music_speech() -> Self {
        FeatureConfig {
            sample_rate: 16_000,
            window_secs: 0.025,
            hop_secs: 0.010,
            n_mels: 64,
            fmin: 125.0,
            fmax: 7_500.0,
            log_floor: 1e-10,
        }
    }

    /// 44.1 kHz environmental configuration: 40 ms window, 10 ms hop,
    /// 40 mel bands over the full 0 to 22,050 Hz range.
    pub fn environmental() -> Self {
        FeatureConfig {
            sample_rate: 44_100,
            window_secs: 0.040,
            hop_secs: 0.010,
            n_mels: 40,
            fmin: 0.0,
            fmax: 22_050.0,
            log_floor: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = self.sample_rate as f64 / 2.0;
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be > 0".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={} fmax={}",
                self.fmin, self.fmax
            )));
        }
        if self.hop_secs <= 0.0 || self.hop_secs > self.window_secs {
            return Err(Error::InvalidConfig(
                "need 0 < hop <= window".into(),
            ));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be >= 1".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::InvalidConfig("log_floor must be > 0".into()));
        }
        Ok(())
    }

    pub fn window_samples(&self) -> usize {
        (self.window_secs * self.sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_secs * self.sample_rate as f64).round() as usize
    }

    /// FFT size: next power of two at or above the window length.
    pub fn fft_size(&self) -> usize {
        self.window_samples().next_power_of_two()
    }

    pub fn n_fft_bins(&self) -> usize {
        self.fft_size() / 2 + 1
    }

    /// Frame count produced for `n_samples` of audio under center padding.
    pub fn frames_for(&self, n_samples: usize) -> usize {
        n_samples / self.hop_samples() + 1
    }
}

/// Row-major real matrix used for spectra and filterbanks.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub data: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Log-mel feature matrix, `time_steps x n_mels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Matrix,
    pub config: FeatureConfig,
}

impl MelSpectrogram {
    pub fn time_steps(&self) -> usize {
        self.values.rows
    }

    pub fn n_mels(&self) -> usize {
        self.values.cols
    }
}

// Index into `samples` with reflective (edge-excluding) boundary handling.
fn reflect_sample(samples: &[f32], idx: i64) -> f64 {
    let n = samples.len() as i64;
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return samples[0] as f64;
    }
    let period = 2 * (n - 1);
    let mut i = idx.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    samples[i as usize] as f64
}

/// Hann-windowed magnitude STFT with reflective center padding.
///
/// Frame `k` is centered on sample `k * hop`; the window is zero-padded to
/// the FFT size (next power of two at or above `window_samples`). Empty
/// input still yields one all-zero frame, matching the `floor(n/hop) + 1`
/// frame count law at `n = 0`.
pub fn stft_magnitude(
    samples: &[f32],
    window_samples: usize,
    hop_samples: usize,
) -> Result<Matrix> {
    if hop_samples == 0 || window_samples < hop_samples {
        return Err(Error::InvalidConfig(
            "need window_samples >= hop_samples >= 1".into(),
        ));
    }
    let fft_size = window_samples.next_power_of_two();
    let n_bins = fft_size / 2 + 1;
    let n_frames = samples.len() / hop_samples + 1;

    // Periodic Hann, zero-padded symmetrically to the FFT size.
    let window: Vec<f64> = (0..window_samples)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / window_samples as f64).cos())
        .collect();
    let pad_off = (fft_size - window_samples) / 2;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_size);

    let mut out = Matrix::zeros(n_frames, n_bins);
    let mut frame = vec![Complex::new(0.0, 0.0); fft_size];
    for k in 0..n_frames {
        let center = (k * hop_samples) as i64;
        let start = center - (fft_size as i64) / 2;
        frame.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, &w) in window.iter().enumerate() {
            let idx = start + (pad_off + i) as i64;
            frame[pad_off + i] = Complex::new(reflect_sample(samples, idx) * w, 0.0);
        }
        fft.process(&mut frame);
        for (b, c) in frame.iter().take(n_bins).enumerate() {
            *out.at_mut(k, b) = c.norm();
        }
    }
    Ok(out)
}

const MEL_BREAK_HZ: f64 = 700.0;
const MEL_SCALE: f64 = 2595.0;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    MEL_SCALE * (1.0 + hz / MEL_BREAK_HZ).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    MEL_BREAK_HZ * (10.0f64.powf(mel / MEL_SCALE) - 1.0)
}

/// Triangular mel filterbank, `n_mels x n_fft_bins`, unnormalized.
///
/// Filter centers are equally spaced on the mel scale between `fmin` and
/// `fmax`. A filter whose support covers no FFT bin (resolution too coarse
/// for the requested `n_mels`) is an error.
pub fn mel_filterbank(config: &FeatureConfig, n_fft_bins: usize) -> Result<Matrix> {
    config.validate()?;
    if n_fft_bins < 2 {
        return Err(Error::InvalidConfig("need at least 2 FFT bins".into()));
    }

    let n_mels = config.n_mels;
    let mel_lo = hz_to_mel(config.fmin);
    let mel_hi = hz_to_mel(config.fmax);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_mels + 1) as f64))
        .collect();

    // Bin k sits at k * sample_rate / fft_size Hz.
    let bin_hz = config.sample_rate as f64 / 2.0 / (n_fft_bins - 1) as f64;

    let mut fb = Matrix::zeros(n_mels, n_fft_bins);
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut support = 0.0;
        for b in 0..n_fft_bins {
            let f = b as f64 * bin_hz;
            let w = if f > lo && f < center {
                (f - lo) / (center - lo)
            } else if (f - center).abs() < f64::EPSILON * center.max(1.0) {
                1.0
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            *fb.at_mut(m, b) = w;
            support += w;
        }
        if support <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "mel filter {m} has empty support; reduce n_mels or widen the band"
            )));
        }
    }
    Ok(fb)
}

/// Full front end: STFT power spectrum through the mel filterbank, floored
/// natural log.
pub fn log_mel(buffer: &AudioBuffer, config: &FeatureConfig) -> Result<MelSpectrogram> {
    config.validate()?;
    if buffer.sample_rate != config.sample_rate {
        return Err(Error::RateMismatch {
            expected: config.sample_rate,
            actual: buffer.sample_rate,
        });
    }

    let spectra = stft_magnitude(
        &buffer.samples,
        config.window_samples(),
        config.hop_samples(),
    )?;
    let fb = mel_filterbank(config, spectra.cols)?;

    let mut values = Matrix::zeros(spectra.rows, config.n_mels);
    for t in 0..spectra.rows {
        let spec_row = spectra.row(t);
        for m in 0..config.n_mels {
            let fb_row = fb.row(m);
            let mut acc = 0.0f64;
            for (w, s) in fb_row.iter().zip(spec_row.iter()) {
                if *w != 0.0 {
                    acc += w * s * s;
                }
            }
            *values.at_mut(t, m) = (acc + config.log_floor).ln();
        }
    }
    Ok(MelSpectrogram {
        values,
        config: config.clone(),
    })
}

const CACHE_MAGIC: &[u8; 4] = b"YMEL";
const CACHE_VERSION: u32 = 1;

/// Write a feature matrix to the binary cache format: magic, version, rows,
/// cols, a length-prefixed `key=value` config block, then row-major f32
/// little-endian values.
pub fn write_cache(path: impl AsRef<Path>, mel: &MelSpectrogram) -> Result<()> {
    let path = path.as_ref();
    let cfg = &mel.config;
    let config_block = format!(
        "sample_rate={}\nwindow_secs={}\nhop_secs={}\nn_mels={}\nfmin={}\nfmax={}\nlog_floor={}\n",
        cfg.sample_rate,
        cfg.window_secs,
        cfg.hop_secs,
        cfg.n_mels,
        cfg.fmin,
        cfg.fmax,
        cfg.log_floor
    );

    let mut bytes = Vec::with_capacity(24 + config_block.len() + mel.values.data.len() * 4);
    bytes.extend_from_slice(CACHE_MAGIC);
    bytes.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(mel.values.rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(mel.values.cols as u32).to_le_bytes());
    bytes.extend_from_slice(&(config_block.len() as u32).to_le_bytes());
    bytes.extend_from_slice(config_block.as_bytes());
    for &v in &mel.values.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    let bad = |detail: &str| Error::BadFileFormat {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut file = std::fs::File::open(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;

    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(bad("unexpected end of file"));
        }
        let s = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(s)
    };

    if take(4)? != CACHE_MAGIC {
        return Err(bad("bad magic"));
    }
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
    let version = u32_at(take(4)?);
    if version != CACHE_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rows = u32_at(take(4)?) as usize;
    let cols = u32_at(take(4)?) as usize;
    let cfg_len = u32_at(take(4)?) as usize;
    let cfg_str = std::str::from_utf8(take(cfg_len)?)
        .map_err(|_| bad("config block is not UTF-8"))?
        .to_string();

    let mut cfg = FeatureConfig {
        sample_rate: 0,
        window_secs: 0.0,
        hop_secs: 0.0,
        n_mels: 0,
        fmin: 0.0,
        fmax: 0.0,
        log_floor: 0.0,
    };
    for line in cfg_str.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(&format!("bad config line {line:?}")))?;
        let parse_err = || bad(&format!("bad value for {key}"));
        match key {
            "sample_rate" => cfg.sample_rate = value.parse().map_err(|_| parse_err())?,
            "window_secs" => cfg.window_secs = value.parse().map_err(|_| parse_err())?,
            "hop_secs" => cfg.hop_secs = value.parse().map_err(|_| parse_err())?,
            "n_mels" => cfg.n_mels = value.parse().map_err(|_| parse_err())?,
            "fmin" => cfg.fmin = value.parse().map_err(|_| parse_err())?,
            "fmax" => cfg.fmax = value.parse().map_err(|_| parse_err())?,
            "log_floor" => cfg.log_floor = value.parse().map_err(|_| parse_err())?,
            _ => {}
        }
    }
    if cfg.n_mels != cols {
        return Err(bad("n_mels does not match column count"));
    }

    let mut values = Matrix::zeros(rows, cols);
    for v in values.data.iter_mut() {
        *v = f32::from_le_bytes(take(4)?.try_into().unwrap()) as f64;
    }
    Ok(MelSpectrogram {
        values,
        config: cfg,
    })
}
