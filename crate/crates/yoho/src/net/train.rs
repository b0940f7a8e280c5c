//! Mini-batch training with early stopping.
//!
//! Per-example losses follow the masked sum-squared error; a batch
//! optimizes their mean so gradient scale does not depend on batch size.
//! Validation loss (data term only, inference mode) drives early stopping,
//! and the best-scoring weights are restored when training ends.
//!
//! Runs are reproducible: shuffling, augmentation, and dropout all draw
//! from one seeded generator, and every parallel reduction in the layer
//! engine is ordered.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{spec_augment, AugmentConfig};
use super::adam::Adam;
use super::tensor::Tensor;
use super::{ArchKind, Network};
use crate::error::{Error, Result};
use crate::features::Matrix;
use crate::labels::YohoGrid;

/// One training example: spectrogram plus its encoded grid.
#[derive(Debug, Clone)]
pub struct Sample {
    pub features: Matrix,
    pub target: YohoGrid,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2_first_conv: f64,
    pub l2_rest: f64,
    pub spatial_dropout_rate: f64,
    /// Consecutive non-improving epochs tolerated before stopping; 0 stops
    /// at the first epoch that fails to improve.
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
    /// Optional wall-clock budget checked at epoch boundaries.
    pub time_limit: Option<Duration>,
    /// Stream per-epoch losses to stderr as they happen.
    pub progress: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 32,
            l2_first_conv: 0.0,
            l2_rest: 0.0,
            spatial_dropout_rate: 0.0,
            early_stop_patience: 10,
            max_epochs: 1000,
            seed: 0,
            augment: None,
            time_limit: None,
            progress: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean per-example data loss plus the L2 penalty averaged over steps.
    pub train_loss: f64,
    /// Mean per-example data loss on the validation set, inference mode.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub hit_time_limit: bool,
}

// Masked sum-squared error over flat triplet rows; writes the gradient of
// (scale * loss) if a buffer is given. Layout matches the network output:
// (presence, start, stop) per class per step.
fn masked_sse(pred: &[f64], target: &[f64], mut grad: Option<&mut [f64]>, scale: f64) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    debug_assert_eq!(pred.len() % 3, 0);
    let mut loss = 0.0;
    for i in (0..pred.len()).step_by(3) {
        let dp = pred[i] - target[i];
        loss += dp * dp;
        let present = target[i] == 1.0;
        if let Some(g) = grad.as_deref_mut() {
            g[i] = 2.0 * dp * scale;
        }
        if present {
            let ds = pred[i + 1] - target[i + 1];
            let de = pred[i + 2] - target[i + 2];
            loss += ds * ds + de * de;
            if let Some(g) = grad.as_deref_mut() {
                g[i + 1] = 2.0 * ds * scale;
                g[i + 2] = 2.0 * de * scale;
            }
        } else if let Some(g) = grad.as_deref_mut() {
            g[i + 1] = 0.0;
            g[i + 2] = 0.0;
        }
    }
    loss
}

fn batch_tensor(samples: &[&Sample], input_time: usize, n_mels: usize) -> Result<Tensor> {
    let mut batch = Tensor::zeros(&[samples.len(), input_time, n_mels, 1]);
    let per = input_time * n_mels;
    for (b, sample) in samples.iter().enumerate() {
        if sample.features.rows != input_time || sample.features.cols != n_mels {
            return Err(Error::ShapeMismatch(format!(
                "sample features are {}x{}, network expects {input_time}x{n_mels}",
                sample.features.rows, sample.features.cols
            )));
        }
        batch.data[b * per..(b + 1) * per].copy_from_slice(&sample.features.data);
    }
    Ok(batch)
}

fn batch_targets(samples: &[&Sample], out_len: usize) -> Result<Vec<f64>> {
    let mut flat = Vec::with_capacity(samples.len() * out_len);
    for sample in samples {
        let t = sample.target.flat();
        if t.len() != out_len {
            return Err(Error::ShapeMismatch(format!(
                "target grid has {} values, network emits {out_len}",
                t.len()
            )));
        }
        flat.extend_from_slice(t);
    }
    Ok(flat)
}

fn snapshot(net: &Network) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let params = net.named_params().iter().map(|(_, p)| p.data.clone()).collect();
    let state = net.named_state().iter().map(|(_, s)| s.to_vec()).collect();
    (params, state)
}

fn restore(net: &mut Network, snap: &(Vec<Vec<f64>>, Vec<Vec<f64>>)) {
    for ((_, p), saved) in net.named_params_mut().into_iter().zip(snap.0.iter()) {
        p.data.copy_from_slice(saved);
    }
    for ((_, s), saved) in net.named_state_mut().into_iter().zip(snap.1.iter()) {
        s.copy_from_slice(saved);
    }
}

/// Refresh batch-norm running statistics with frozen weights: one pass
/// over the set, averaging batch statistics with equal weight. Momentum
/// tracking alone lags the weights badly over short runs, which would make
/// inference-mode losses meaningless.
pub fn calibrate_batchnorm(
    net: &mut Network,
    set: &[Sample],
    batch_size: usize,
) -> Result<()> {
    net.begin_bn_calibration();
    for chunk in set.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = batch_tensor(&refs, net.input_time, net.n_mels)?;
        net.forward_calibrate(&batch)?;
    }
    net.end_bn_calibration();
    Ok(())
}

/// Mean per-example data loss in inference mode.
pub fn evaluate_loss(net: &mut Network, set: &[Sample], batch_size: usize) -> Result<f64> {
    let (t_out, cols) = net.output_shape();
    let out_len = t_out * cols;
    let mut total = 0.0;
    for chunk in set.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = batch_tensor(&refs, net.input_time, net.n_mels)?;
        let targets = batch_targets(&refs, out_len)?;
        let out = net.forward_infer(&batch)?;
        total += masked_sse(&out.data, &targets, None, 0.0);
    }
    Ok(total / set.len() as f64)
}

/// Train until the validation loss plateaus, then restore the best weights.
pub fn train(
    net: &mut Network,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidConfig(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if net.arch != ArchKind::Yoho {
        return Err(Error::InvalidConfig(
            "training targets the regression head".into(),
        ));
    }
    if config.learning_rate <= 0.0 {
        return Err(Error::InvalidConfig("learning rate must be > 0".into()));
    }
    if !(0.0..1.0).contains(&config.spatial_dropout_rate) {
        return Err(Error::InvalidConfig("dropout rate must lie in [0, 1)".into()));
    }

    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    net.set_dropout_rate(config.spatial_dropout_rate);
    let mut adam = Adam::new(net, config.learning_rate);
    let (t_out, cols) = net.output_shape();
    let out_len = t_out * cols;

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_snap = snapshot(net);
    let mut since_improve = 0usize;
    let mut stopped_early = false;
    let mut hit_time_limit = false;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut data_loss_sum = 0.0;
        let mut l2_sum = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let refs: Vec<&Sample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let mut batch = batch_tensor(&refs, net.input_time, net.n_mels)?;
            let targets = batch_targets(&refs, out_len)?;
            if let Some(aug) = &config.augment {
                spec_augment(&mut batch, aug, &mut rng)?;
            }
            net.zero_grads();
            let (tape, out) = net.forward_train(&batch, &mut rng)?;
            let mut grad = Tensor::zeros(&out.shape);
            let scale = 1.0 / refs.len() as f64;
            let loss = masked_sse(&out.data, &targets, Some(&mut grad.data), scale);
            net.backward(&tape, &grad);
            l2_sum += net.l2_regularize(config.l2_first_conv, config.l2_rest);
            adam.step(net);
            data_loss_sum += loss;
            steps += 1;
        }
        let train_loss = data_loss_sum / train_set.len() as f64 + l2_sum / steps as f64;
        // Refresh running statistics against the weights this epoch
        // produced, so the inference-mode validation loss is meaningful.
        calibrate_batchnorm(net, train_set, config.batch_size)?;
        let val_loss = evaluate_loss(net, val_set, config.batch_size)?;
        if config.progress {
            eprintln!("epoch {epoch:3}  train {train_loss:.5}  val {val_loss:.5}");
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_snap = snapshot(net);
            since_improve = 0;
        } else {
            since_improve += 1;
            if since_improve > config.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
        if let Some(limit) = config.time_limit {
            if started.elapsed() >= limit {
                hit_time_limit = true;
                break;
            }
        }
    }

    restore(net, &best_snap);
    net.set_dropout_rate(0.0);
    Ok(TrainHistory {
        epochs: history,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
        hit_time_limit,
    })
}
