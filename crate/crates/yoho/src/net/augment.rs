//! Batch-level time/frequency masking augmentation.
//!
//! Masks are drawn once per batch and applied to every example in it,
//! with masked cells set to the batch mean. Only the input spectrogram is
//! touched: regression targets keep their exact boundaries, which is what
//! makes masking safe for this label format. Time warping is deliberately
//! not implemented.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub time_masks: usize,
    pub freq_masks: usize,
    /// Maximum mask width along the time axis, in frames.
    pub max_time_width: usize,
    /// Maximum mask width along the frequency axis, in bins.
    pub max_freq_width: usize,
}

/// Mask a `[batch, time, freq, 1]` tensor in place.
pub fn spec_augment(
    batch: &mut Tensor,
    config: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (b_n, t, f, c) = batch.dims4();
    debug_assert_eq!(c, 1);
    if config.time_masks > 0 && config.max_time_width > t {
        return Err(Error::InvalidConfig(format!(
            "time mask width {} exceeds {t} frames",
            config.max_time_width
        )));
    }
    if config.freq_masks > 0 && config.max_freq_width > f {
        return Err(Error::InvalidConfig(format!(
            "frequency mask width {} exceeds {f} bins",
            config.max_freq_width
        )));
    }
    if config.time_masks == 0 && config.freq_masks == 0 {
        return Ok(());
    }

    let fill = batch.data.iter().sum::<f64>() / batch.data.len() as f64;
    let per = t * f;

    for _ in 0..config.time_masks {
        let width = rng.random_range(0..=config.max_time_width);
        if width == 0 {
            continue;
        }
        let start = rng.random_range(0..=t - width);
        for b in 0..b_n {
            for ti in start..start + width {
                let row = &mut batch.data[b * per + ti * f..b * per + (ti + 1) * f];
                row.iter_mut().for_each(|v| *v = fill);
            }
        }
    }
    for _ in 0..config.freq_masks {
        let width = rng.random_range(0..=config.max_freq_width);
        if width == 0 {
            continue;
        }
        let start = rng.random_range(0..=f - width);
        for b in 0..b_n {
            for ti in 0..t {
                for fi in start..start + width {
                    batch.data[b * per + ti * f + fi] = fill;
                }
            }
        }
    }
    Ok(())
}
