//! Convolutional network with a regression output head, plus its training
//! engine.
//!
//! The backbone is a depthwise-separable stack: a strided 3x3 convolution,
//! then alternating depthwise/pointwise blocks that double the channel
//! count while five stride-2 stages halve both axes, an appended head that
//! tapers the channels back down, and a width-1 convolution over time that
//! emits `3 * n_classes` sigmoid outputs per coarse step.
//!
//! The time-preserving comparison build keeps every parameter tensor the
//! same shape but runs all convolutions at stride 1, halving only the
//! frequency axis through max pooling. Its head reads one per-frame
//! presence score per class out of the same output stack, so the two
//! builds have identical parameter counts by construction.

pub mod adam;
pub mod augment;
pub mod checkpoint;
pub mod layers;
pub mod tensor;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use layers::{
    BatchNorm, Conv1d, Conv2d, DepthwiseConv2d, Layer, MaxPool2d, Mode, Relu, ReshapeMerge,
    Sigmoid, SpatialDropout,
};
use tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    /// Regression head: coarse steps, `3 * n_classes` outputs each.
    Yoho,
    /// Frame-classification head: full time resolution, per-class presence.
    FrameCnn,
}

/// Base channel progression: `(halves_resolution, pointwise_out_channels)`
/// per depthwise/pointwise block. The trailing three blocks are the
/// appended head that tapers back down to 128.
const BLOCKS: &[(bool, usize)] = &[
    (false, 64),
    (true, 128),
    (false, 128),
    (true, 256),
    (false, 256),
    (true, 512),
    (false, 512),
    (false, 512),
    (false, 512),
    (false, 512),
    (false, 512),
    (true, 1024),
    (false, 1024),
    (false, 512),
    (false, 256),
    (false, 128),
];

const FIRST_CONV_CHANNELS: usize = 32;

/// Builder knobs. `width_divisor` scales every channel count down for
/// desk-size experiments; it must divide 32.
#[derive(Debug, Clone, Copy)]
pub struct BuildConfig {
    pub width_divisor: usize,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            width_divisor: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub arch: ArchKind,
    pub width_divisor: usize,
    pub input_time: usize,
    pub n_mels: usize,
    pub n_classes: usize,
    pub layers: Vec<Layer>,
}

/// Forward activations kept for the backward pass: entry 0 is the batch
/// input, entry `i + 1` the output of layer `i`. Backward needs a tape, so
/// it cannot run without a training-mode forward first.
pub struct Tape {
    activations: Vec<Tensor>,
}

impl Tape {
    pub fn raw_output(&self) -> &Tensor {
        self.activations.last().expect("tape is never empty")
    }
}

fn he_uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let limit = (6.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-limit..limit)).collect();
    Tensor::param(shape, data)
}

fn build(
    arch: ArchKind,
    input_time: usize,
    n_mels: usize,
    n_classes: usize,
    cfg: BuildConfig,
) -> Result<Network> {
    if input_time < 32 {
        return Err(Error::InvalidConfig(format!(
            "input time {input_time} too short for five stride-2 stages (need >= 32)"
        )));
    }
    if n_mels == 0 || n_classes == 0 {
        return Err(Error::InvalidConfig(
            "n_mels and n_classes must be >= 1".into(),
        ));
    }
    let div = cfg.width_divisor;
    if div == 0 || FIRST_CONV_CHANNELS % div != 0 {
        return Err(Error::InvalidConfig(format!(
            "width divisor {div} must divide {FIRST_CONV_CHANNELS}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let time_preserving = arch == ArchKind::FrameCnn;
    let mut layers = Vec::new();
    let mut freq = n_mels;
    let conv_stride = |halve: bool| -> (usize, usize) {
        if halve && !time_preserving {
            (2, 2)
        } else {
            (1, 1)
        }
    };

    // Stem: full 3x3 convolution on the single input channel.
    let c0 = FIRST_CONV_CHANNELS / div;
    layers.push(Layer::Conv2d(Conv2d {
        kernel: he_uniform(&mut rng, &[3, 3, 1, c0], 9),
        stride: conv_stride(true),
    }));
    layers.push(Layer::BatchNorm(BatchNorm::new(c0)));
    layers.push(Layer::Relu(Relu));
    if time_preserving {
        layers.push(Layer::MaxPool2d(MaxPool2d { pool_w: 2 }));
    }
    freq = freq.div_ceil(2);

    let mut channels = c0;
    for &(halve, out_full) in BLOCKS {
        let out_ch = out_full / div;
        layers.push(Layer::DepthwiseConv2d(DepthwiseConv2d {
            kernel: he_uniform(&mut rng, &[3, 3, channels], 9),
            stride: conv_stride(halve),
        }));
        layers.push(Layer::BatchNorm(BatchNorm::new(channels)));
        layers.push(Layer::Relu(Relu));
        if halve {
            if time_preserving {
                layers.push(Layer::MaxPool2d(MaxPool2d { pool_w: 2 }));
            }
            freq = freq.div_ceil(2);
        }
        layers.push(Layer::Conv2d(Conv2d {
            kernel: he_uniform(&mut rng, &[1, 1, channels, out_ch], channels),
            stride: (1, 1),
        }));
        layers.push(Layer::BatchNorm(BatchNorm::new(out_ch)));
        layers.push(Layer::Relu(Relu));
        // Rate set at training time; inactive otherwise.
        layers.push(Layer::SpatialDropout(SpatialDropout::new(0.0)));
        channels = out_ch;
    }

    layers.push(Layer::ReshapeMerge(ReshapeMerge));
    let flat = freq * channels;
    layers.push(Layer::Conv1d(Conv1d {
        kernel: he_uniform(&mut rng, &[flat, 3 * n_classes], flat),
        bias: Tensor::param(&[3 * n_classes], vec![0.0; 3 * n_classes]),
    }));
    layers.push(Layer::Sigmoid(Sigmoid));

    Ok(Network {
        arch,
        width_divisor: div,
        input_time,
        n_mels,
        n_classes,
        layers,
    })
}

/// Build the regression-head network.
pub fn build_yoho(
    input_time: usize,
    n_mels: usize,
    n_classes: usize,
    cfg: BuildConfig,
) -> Result<Network> {
    build(ArchKind::Yoho, input_time, n_mels, n_classes, cfg)
}

/// Build the frame-classification comparison network: same parameter stack,
/// stride-1 convolutions, frequency halved by max pooling instead.
pub fn build_frame_cnn(
    input_time: usize,
    n_mels: usize,
    n_classes: usize,
    cfg: BuildConfig,
) -> Result<Network> {
    build(ArchKind::FrameCnn, input_time, n_mels, n_classes, cfg)
}

impl Network {
    fn check_input(&self, batch: &Tensor) -> Result<()> {
        let (_, t, f, c) = batch.dims4();
        if t != self.input_time || f != self.n_mels || c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "batch is {t}x{f}x{c}, network expects {}x{}x1",
                self.input_time, self.n_mels
            )));
        }
        Ok(())
    }

    /// `(time_steps, values_per_step)` of the extracted output.
    pub fn output_shape(&self) -> (usize, usize) {
        match self.arch {
            ArchKind::Yoho => {
                let mut t = self.input_time;
                for _ in 0..5 {
                    t = t.div_ceil(2);
                }
                (t, 3 * self.n_classes)
            }
            ArchKind::FrameCnn => (self.input_time, self.n_classes),
        }
    }

    // Raw sigmoid stack output [b, t, 1, 3C] -> extracted [b, t, cols].
    fn extract(&self, raw: &Tensor) -> Tensor {
        let (b, t, _, ch) = raw.dims4();
        match self.arch {
            ArchKind::Yoho => Tensor::from_vec(&[b, t, ch], raw.data.clone()),
            ArchKind::FrameCnn => {
                let c = self.n_classes;
                let mut out = Tensor::zeros(&[b, t, c]);
                for row in 0..b * t {
                    for ci in 0..c {
                        out.data[row * c + ci] = raw.data[row * ch + 3 * ci];
                    }
                }
                out
            }
        }
    }

    fn inject_out_grad(&self, raw: &Tensor, out_grad: &Tensor) -> Tensor {
        let (b, t, _, ch) = raw.dims4();
        match self.arch {
            ArchKind::Yoho => Tensor::from_vec(&[b, t, 1, ch], out_grad.data.clone()),
            ArchKind::FrameCnn => {
                let c = self.n_classes;
                let mut g = Tensor::zeros(&[b, t, 1, ch]);
                for row in 0..b * t {
                    for ci in 0..c {
                        g.data[row * ch + 3 * ci] = out_grad.data[row * c + ci];
                    }
                }
                g
            }
        }
    }

    /// Training-mode forward: batch statistics, dropout active, activations
    /// retained. Returns the tape and the extracted output.
    pub fn forward_train(
        &mut self,
        batch: &Tensor,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Tape, Tensor)> {
        self.check_input(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for layer in &mut self.layers {
            let next = layer.forward(activations.last().unwrap(), Mode::Train, rng);
            activations.push(next);
        }
        let tape = Tape { activations };
        let out = self.extract(tape.raw_output());
        Ok((tape, out))
    }

    /// Inference-mode forward: running statistics, dropout off, nothing
    /// retained. Deterministic for a given batch.
    pub fn forward_infer(&mut self, batch: &Tensor) -> Result<Tensor> {
        self.check_input(batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = batch.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, Mode::Infer, &mut rng);
        }
        Ok(self.extract(&x))
    }

    /// Accumulate parameter gradients for `out_grad` (shaped like the
    /// extracted output) against the tape from [`Network::forward_train`].
    pub fn backward(&mut self, tape: &Tape, out_grad: &Tensor) {
        let mut g = self.inject_out_grad(tape.raw_output(), out_grad);
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&tape.activations[i], &tape.activations[i + 1], &g);
        }
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            for (_, p) in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    /// Count of trainable parameters (kernels, biases, batch-norm scales
    /// and shifts).
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|(_, p)| p.len())
            .sum()
    }

    /// Set the channel-dropout probability on every dropout layer.
    pub fn set_dropout_rate(&mut self, rate: f64) {
        for layer in &mut self.layers {
            if let Layer::SpatialDropout(d) = layer {
                d.rate = rate;
            }
        }
    }

    /// Switch every batch-norm layer into calibration mode; subsequent
    /// training-mode forwards replace the running statistics with an
    /// equal-weight average of batch statistics.
    pub fn begin_bn_calibration(&mut self) {
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                bn.begin_calibration();
            }
        }
    }

    pub fn end_bn_calibration(&mut self) {
        for layer in &mut self.layers {
            if let Layer::BatchNorm(bn) = layer {
                bn.end_calibration();
            }
        }
    }

    /// One calibration forward: batch statistics flow like training, but
    /// dropout stays off and no activations are retained.
    pub fn forward_calibrate(&mut self, batch: &Tensor) -> Result<()> {
        self.check_input(batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut x = batch.clone();
        for layer in &mut self.layers {
            x = layer.forward(&x, Mode::Calibrate, &mut rng);
        }
        Ok(())
    }

    /// Add L2 gradients (`2 * lambda * w`) for convolution kernels: the stem
    /// convolution uses `l2_first`, all other 2-D convolution kernels use
    /// `l2_rest`. Returns the penalty value `sum(lambda * w^2)`.
    pub fn l2_regularize(&mut self, l2_first: f64, l2_rest: f64) -> f64 {
        let mut penalty = 0.0;
        let mut first_seen = false;
        for layer in &mut self.layers {
            let lambda = match layer {
                Layer::Conv2d(_) if !first_seen => {
                    first_seen = true;
                    l2_first
                }
                Layer::Conv2d(_) | Layer::DepthwiseConv2d(_) => l2_rest,
                _ => continue,
            };
            if lambda == 0.0 {
                continue;
            }
            let kernel = match layer {
                Layer::Conv2d(l) => &mut l.kernel,
                Layer::DepthwiseConv2d(l) => &mut l.kernel,
                _ => unreachable!(),
            };
            let mut sq = 0.0;
            {
                let grad = kernel.grad.as_mut().expect("conv kernels carry grads");
                for (g, &w) in grad.iter_mut().zip(kernel.data.iter()) {
                    *g += 2.0 * lambda * w;
                    sq += w * w;
                }
            }
            penalty += lambda * sq;
        }
        penalty
    }

    /// All trainable tensors with stable `layerN.name` labels.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params()
                    .into_iter()
                    .map(move |(name, p)| (format!("layer{i}.{name}"), p))
            })
            .collect()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.params_mut()
                    .into_iter()
                    .map(move |(name, p)| (format!("layer{i}.{name}"), p))
            })
            .collect()
    }

    /// Non-trainable state (batch-norm running statistics), named like
    /// parameters.
    pub fn named_state(&self) -> Vec<(String, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.state()
                    .into_iter()
                    .map(move |(name, s)| (format!("layer{i}.{name}"), s))
            })
            .collect()
    }

    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                l.state_mut()
                    .into_iter()
                    .map(move |(name, s)| (format!("layer{i}.{name}"), s))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(div: usize) -> BuildConfig {
        BuildConfig {
            width_divisor: div,
            seed: 42,
        }
    }

    #[test]
    fn output_shapes_match_published_configs() {
        let cases = [
            ((801, 64, 2), (26, 6)),
            ((257, 40, 6), (9, 18)),
            ((1001, 40, 10), (32, 30)),
        ];
        for ((t, m, c), expected) in cases {
            let net = build_yoho(t, m, c, cfg(1)).unwrap();
            assert_eq!(net.output_shape(), expected, "input {t}x{m}, {c} classes");
        }
    }

    #[test]
    fn frame_head_preserves_time() {
        let net = build_frame_cnn(801, 64, 2, cfg(1)).unwrap();
        assert_eq!(net.output_shape(), (801, 2));
        let net = build_frame_cnn(257, 40, 6, cfg(1)).unwrap();
        assert_eq!(net.output_shape(), (257, 6));
    }

    #[test]
    fn parameter_count_within_five_percent_of_published() {
        let net = build_yoho(801, 64, 2, cfg(1)).unwrap();
        let count = net.param_count() as f64;
        let published = 3.9e6;
        assert!(
            (count - published).abs() / published < 0.05,
            "parameter count {count} vs {published}"
        );
    }

    #[test]
    fn parameter_parity_between_heads() {
        for (t, m, c) in [(801, 64, 2), (257, 40, 6), (1001, 40, 10)] {
            let yoho = build_yoho(t, m, c, cfg(1)).unwrap();
            let frame = build_frame_cnn(t, m, c, cfg(1)).unwrap();
            assert_eq!(
                yoho.param_count(),
                frame.param_count(),
                "config {t}x{m}, {c} classes"
            );
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        assert!(build_yoho(31, 64, 2, cfg(1)).is_err());
        assert!(build_yoho(32, 64, 2, cfg(1)).is_ok());
    }

    #[test]
    fn forward_outputs_sit_strictly_inside_unit_interval() {
        let mut net = build_yoho(64, 16, 2, cfg(8)).unwrap();
        let batch = Tensor::zeros(&[2, 64, 16, 1]);
        let out = net.forward_infer(&batch).unwrap();
        assert_eq!(out.shape, vec![2, 2, 6]);
        assert!(out.data.iter().all(|&v| v > 0.0 && v < 1.0 && v.is_finite()));
    }

    #[test]
    fn identical_batch_rows_give_identical_outputs() {
        let mut net = build_yoho(64, 16, 2, cfg(8)).unwrap();
        let mut batch = Tensor::zeros(&[2, 64, 16, 1]);
        for i in 0..64 * 16 {
            let v = ((i * 31) % 17) as f64 / 17.0 - 0.5;
            batch.data[i] = v;
            batch.data[64 * 16 + i] = v;
        }
        // Inference mode.
        let out = net.forward_infer(&batch).unwrap();
        let half = out.data.len() / 2;
        assert_eq!(out.data[..half], out.data[half..]);
        // Training mode: batch statistics are shared, so rows still match.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, out) = net.forward_train(&batch, &mut rng).unwrap();
        let half = out.data.len() / 2;
        assert_eq!(out.data[..half], out.data[half..]);
    }

    #[test]
    fn batchnorm_inference_ignores_batch_composition() {
        let mut net = build_yoho(64, 16, 2, cfg(8)).unwrap();
        let mut a = Tensor::zeros(&[1, 64, 16, 1]);
        for (i, v) in a.data.iter_mut().enumerate() {
            *v = ((i * 7) % 13) as f64 / 13.0 - 0.4;
        }
        let solo = net.forward_infer(&a).unwrap();

        let mut pair = Tensor::zeros(&[2, 64, 16, 1]);
        pair.data[..a.data.len()].copy_from_slice(&a.data);
        for (i, v) in pair.data[a.data.len()..].iter_mut().enumerate() {
            *v = (i % 5) as f64 / 5.0;
        }
        let joint = net.forward_infer(&pair).unwrap();
        for (x, y) in solo.data.iter().zip(joint.data[..solo.data.len()].iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gradient_leaves_only_l2() {
        let mut net = build_yoho(64, 16, 2, cfg(8)).unwrap();
        let batch = Tensor::zeros(&[1, 64, 16, 1]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (tape, out) = net.forward_train(&batch, &mut rng).unwrap();
        let zero_grad = Tensor::zeros(&out.shape);
        net.zero_grads();
        net.backward(&tape, &zero_grad);
        for (name, p) in net.named_params() {
            assert!(
                p.grad_ref().iter().all(|&g| g == 0.0),
                "{name} has nonzero gradient"
            );
        }
        // Now add L2 and check conv kernels pick up exactly 2*lambda*w.
        let lambda = 0.01;
        net.l2_regularize(lambda, lambda);
        for layer in &net.layers {
            if let Layer::Conv2d(l) = layer {
                for (g, &w) in l.kernel.grad_ref().iter().zip(l.kernel.data.iter()) {
                    assert!((g - 2.0 * lambda * w).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn dead_relu_units_get_no_weight_gradient() {
        // Conv with strongly negative kernel on positive input: every
        // pre-activation is negative, so the kernel gradient vanishes.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Layer::Conv2d(Conv2d {
            kernel: Tensor::param(&[3, 3, 1, 2], vec![-1.0; 18]),
            stride: (1, 1),
        });
        let mut relu = Layer::Relu(Relu);
        let x = Tensor::from_vec(&[1, 4, 4, 1], vec![1.0; 16]);
        let mid = conv.forward(&x, Mode::Train, &mut rng);
        assert!(mid.data.iter().all(|&v| v < 0.0));
        let y = relu.forward(&mid, Mode::Train, &mut rng);
        assert!(y.data.iter().all(|&v| v == 0.0));
        let gout = Tensor::from_vec(&y.shape, vec![1.0; y.len()]);
        let gmid = relu.backward(&mid, &y, &gout);
        assert!(gmid.data.iter().all(|&g| g == 0.0));
        let _ = conv.backward(&x, &mid, &gmid);
        let (_, kernel) = &conv.params()[0];
        assert!(kernel.grad_ref().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn frame_head_extracts_presence_channels() {
        let mut net = build_frame_cnn(32, 8, 2, cfg(8)).unwrap();
        let batch = Tensor::zeros(&[1, 32, 8, 1],);
        let out = net.forward_infer(&batch).unwrap();
        assert_eq!(out.shape, vec![1, 32, 2]);
        assert!(out.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
