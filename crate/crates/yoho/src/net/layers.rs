//! Layer forward and backward passes.
//!
//! Activations are `[batch, time, freq, channels]`. Convolutions use
//! "same" padding (more padding on the trailing side when the total is
//! odd), so an output axis is `ceil(input / stride)` long. Backward
//! methods take the layer's forward input and output plus the upstream
//! gradient, accumulate into parameter gradient buffers, and return the
//! input gradient.
//!
//! Batch items are independent everywhere except batch norm, so forward
//! and backward parallelize over the batch (or over channels for batch
//! norm); weight-gradient partials are collected per example and reduced
//! in index order to keep results bit-reproducible.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
    /// Batch statistics like training, but dropout disabled; used when
    /// refreshing batch-norm running statistics over frozen weights.
    Calibrate,
}

/// Output length and leading pad for "same" padding.
pub(crate) fn same_pad(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `[kh, kw, c_in, c_out]`
    pub kernel: Tensor,
    pub stride: (usize, usize),
}

impl Conv2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        let (b_n, t_in, f_in, c_in) = x.dims4();
        let (kh, kw) = (self.kernel.shape[0], self.kernel.shape[1]);
        let c_out = self.kernel.shape[3];
        debug_assert_eq!(self.kernel.shape[2], c_in);
        let (sh, sw) = self.stride;
        let (t_out, pad_t) = same_pad(t_in, kh, sh);
        let (f_out, pad_f) = same_pad(f_in, kw, sw);

        let mut out = Tensor::zeros(&[b_n, t_out, f_out, c_out]);
        let per_example = t_out * f_out * c_out;
        let kernel = &self.kernel.data;
        out.data
            .par_chunks_mut(per_example)
            .enumerate()
            .for_each(|(b, out_b)| {
                let x_b = &x.data[b * t_in * f_in * c_in..(b + 1) * t_in * f_in * c_in];
                for to in 0..t_out {
                    for fo in 0..f_out {
                        let acc = &mut out_b[(to * f_out + fo) * c_out..][..c_out];
                        for dh in 0..kh {
                            let ti = (to * sh + dh) as isize - pad_t as isize;
                            if ti < 0 || ti as usize >= t_in {
                                continue;
                            }
                            for dw in 0..kw {
                                let fi = (fo * sw + dw) as isize - pad_f as isize;
                                if fi < 0 || fi as usize >= f_in {
                                    continue;
                                }
                                let x_row =
                                    &x_b[((ti as usize * f_in) + fi as usize) * c_in..][..c_in];
                                let k_base = (dh * kw + dw) * c_in * c_out;
                                for (ci, &xv) in x_row.iter().enumerate() {
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let k_row = &kernel[k_base + ci * c_out..][..c_out];
                                    for (a, &k) in acc.iter_mut().zip(k_row.iter()) {
                                        *a += xv * k;
                                    }
                                }
                            }
                        }
                    }
                }
            });
        out
    }

    fn backward(&mut self, input: &Tensor, gout: &Tensor) -> Tensor {
        let (_, t_in, f_in, c_in) = input.dims4();
        let (kh, kw) = (self.kernel.shape[0], self.kernel.shape[1]);
        let c_out = self.kernel.shape[3];
        let (sh, sw) = self.stride;
        let (t_out, pad_t) = same_pad(t_in, kh, sh);
        let (f_out, pad_f) = same_pad(f_in, kw, sw);

        let mut gin = Tensor::zeros(&input.shape);
        let per_in = t_in * f_in * c_in;
        let per_out = t_out * f_out * c_out;
        let kernel = &self.kernel.data;
        let k_len = kernel.len();

        let partials: Vec<Vec<f64>> = gin
            .data
            .par_chunks_mut(per_in)
            .enumerate()
            .map(|(b, gin_b)| {
                let x_b = &input.data[b * per_in..(b + 1) * per_in];
                let g_b = &gout.data[b * per_out..(b + 1) * per_out];
                let mut kg = vec![0.0f64; k_len];
                for to in 0..t_out {
                    for fo in 0..f_out {
                        let g_row = &g_b[(to * f_out + fo) * c_out..][..c_out];
                        for dh in 0..kh {
                            let ti = (to * sh + dh) as isize - pad_t as isize;
                            if ti < 0 || ti as usize >= t_in {
                                continue;
                            }
                            for dw in 0..kw {
                                let fi = (fo * sw + dw) as isize - pad_f as isize;
                                if fi < 0 || fi as usize >= f_in {
                                    continue;
                                }
                                let base = ((ti as usize * f_in) + fi as usize) * c_in;
                                let k_base = (dh * kw + dw) * c_in * c_out;
                                for ci in 0..c_in {
                                    let k_row = &kernel[k_base + ci * c_out..][..c_out];
                                    let mut g = 0.0;
                                    for (gv, kv) in g_row.iter().zip(k_row.iter()) {
                                        g += gv * kv;
                                    }
                                    gin_b[base + ci] += g;
                                    let xv = x_b[base + ci];
                                    if xv != 0.0 {
                                        let kg_row = &mut kg[k_base + ci * c_out..][..c_out];
                                        for (kgv, gv) in kg_row.iter_mut().zip(g_row.iter()) {
                                            *kgv += xv * gv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                kg
            })
            .collect();

        let kgrad = self.kernel.grad_mut();
        for partial in &partials {
            for (k, p) in kgrad.iter_mut().zip(partial.iter()) {
                *k += p;
            }
        }
        gin
    }
}

#[derive(Debug, Clone)]
pub struct DepthwiseConv2d {
    /// `[kh, kw, c]`
    pub kernel: Tensor,
    pub stride: (usize, usize),
}

impl DepthwiseConv2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        let (b_n, t_in, f_in, c) = x.dims4();
        let (kh, kw) = (self.kernel.shape[0], self.kernel.shape[1]);
        debug_assert_eq!(self.kernel.shape[2], c);
        let (sh, sw) = self.stride;
        let (t_out, pad_t) = same_pad(t_in, kh, sh);
        let (f_out, pad_f) = same_pad(f_in, kw, sw);

        let mut out = Tensor::zeros(&[b_n, t_out, f_out, c]);
        let per_example = t_out * f_out * c;
        let kernel = &self.kernel.data;
        out.data
            .par_chunks_mut(per_example)
            .enumerate()
            .for_each(|(b, out_b)| {
                let x_b = &x.data[b * t_in * f_in * c..(b + 1) * t_in * f_in * c];
                for to in 0..t_out {
                    for fo in 0..f_out {
                        let acc = &mut out_b[(to * f_out + fo) * c..][..c];
                        for dh in 0..kh {
                            let ti = (to * sh + dh) as isize - pad_t as isize;
                            if ti < 0 || ti as usize >= t_in {
                                continue;
                            }
                            for dw in 0..kw {
                                let fi = (fo * sw + dw) as isize - pad_f as isize;
                                if fi < 0 || fi as usize >= f_in {
                                    continue;
                                }
                                let x_row = &x_b[((ti as usize * f_in) + fi as usize) * c..][..c];
                                let k_row = &kernel[(dh * kw + dw) * c..][..c];
                                for ((a, &xv), &kv) in
                                    acc.iter_mut().zip(x_row.iter()).zip(k_row.iter())
                                {
                                    *a += xv * kv;
                                }
                            }
                        }
                    }
                }
            });
        out
    }

    fn backward(&mut self, input: &Tensor, gout: &Tensor) -> Tensor {
        let (_, t_in, f_in, c) = input.dims4();
        let (kh, kw) = (self.kernel.shape[0], self.kernel.shape[1]);
        let (sh, sw) = self.stride;
        let (t_out, pad_t) = same_pad(t_in, kh, sh);
        let (f_out, pad_f) = same_pad(f_in, kw, sw);

        let mut gin = Tensor::zeros(&input.shape);
        let per_in = t_in * f_in * c;
        let per_out = t_out * f_out * c;
        let kernel = &self.kernel.data;
        let k_len = kernel.len();

        let partials: Vec<Vec<f64>> = gin
            .data
            .par_chunks_mut(per_in)
            .enumerate()
            .map(|(b, gin_b)| {
                let x_b = &input.data[b * per_in..(b + 1) * per_in];
                let g_b = &gout.data[b * per_out..(b + 1) * per_out];
                let mut kg = vec![0.0f64; k_len];
                for to in 0..t_out {
                    for fo in 0..f_out {
                        let g_row = &g_b[(to * f_out + fo) * c..][..c];
                        for dh in 0..kh {
                            let ti = (to * sh + dh) as isize - pad_t as isize;
                            if ti < 0 || ti as usize >= t_in {
                                continue;
                            }
                            for dw in 0..kw {
                                let fi = (fo * sw + dw) as isize - pad_f as isize;
                                if fi < 0 || fi as usize >= f_in {
                                    continue;
                                }
                                let base = ((ti as usize * f_in) + fi as usize) * c;
                                let k_off = (dh * kw + dw) * c;
                                let k_row = &kernel[k_off..][..c];
                                let kg_row = &mut kg[k_off..][..c];
                                for ci in 0..c {
                                    gin_b[base + ci] += g_row[ci] * k_row[ci];
                                    kg_row[ci] += x_b[base + ci] * g_row[ci];
                                }
                            }
                        }
                    }
                }
                kg
            })
            .collect();

        let kgrad = self.kernel.grad_mut();
        for partial in &partials {
            for (k, p) in kgrad.iter_mut().zip(partial.iter()) {
                *k += p;
            }
        }
        gin
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
    // Batch statistics from the last training forward, needed by backward.
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    // When set, training forwards accumulate an equal-weight average of
    // batch statistics into the running buffers instead of the momentum
    // update; the value counts batches seen so far.
    calibrating: Option<usize>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::param(&[channels], vec![1.0; channels]),
            beta: Tensor::param(&[channels], vec![0.0; channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.99,
            eps: 1e-3,
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            calibrating: None,
        }
    }

    /// Start averaging batch statistics from scratch. Momentum tracking
    /// lags far behind the weights when training runs for few steps, so a
    /// dedicated pass over frozen weights replaces the running estimates
    /// with an exact average.
    pub fn begin_calibration(&mut self) {
        self.calibrating = Some(0);
        self.running_mean.iter_mut().for_each(|v| *v = 0.0);
        self.running_var.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn end_calibration(&mut self) {
        // An interrupted calibration (zero batches) would leave degenerate
        // stats; fall back to the identity normalization.
        if self.calibrating == Some(0) {
            self.running_var.iter_mut().for_each(|v| *v = 1.0);
        }
        self.calibrating = None;
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn affine(&self, x: &Tensor, mean: &[f64], var: &[f64]) -> Tensor {
        let c = self.channels();
        let scale: Vec<f64> = (0..c)
            .map(|ci| self.gamma.data[ci] / (var[ci] + self.eps).sqrt())
            .collect();
        let shift: Vec<f64> = (0..c)
            .map(|ci| self.beta.data[ci] - mean[ci] * scale[ci])
            .collect();
        let mut out = Tensor::zeros(&x.shape);
        out.data
            .par_chunks_mut(c)
            .zip(x.data.par_chunks(c))
            .for_each(|(o, xr)| {
                for ci in 0..c {
                    o[ci] = xr[ci] * scale[ci] + shift[ci];
                }
            });
        out
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let c = self.channels();
        debug_assert_eq!(x.shape[3], c);
        match mode {
            Mode::Infer => {
                let (mean, var) = (self.running_mean.clone(), self.running_var.clone());
                self.affine(x, &mean, &var)
            }
            Mode::Train | Mode::Calibrate => {
                let n = (x.len() / c) as f64;
                let stats: Vec<(f64, f64)> = (0..c)
                    .into_par_iter()
                    .map(|ci| {
                        let mut sum = 0.0;
                        let mut i = ci;
                        while i < x.data.len() {
                            sum += x.data[i];
                            i += c;
                        }
                        let mean = sum / n;
                        let mut sq = 0.0;
                        let mut i = ci;
                        while i < x.data.len() {
                            let d = x.data[i] - mean;
                            sq += d * d;
                            i += c;
                        }
                        (mean, sq / n)
                    })
                    .collect();
                let mean: Vec<f64> = stats.iter().map(|s| s.0).collect();
                let var: Vec<f64> = stats.iter().map(|s| s.1).collect();
                match self.calibrating {
                    Some(count) => {
                        let w = 1.0 / (count + 1) as f64;
                        for ci in 0..c {
                            self.running_mean[ci] += (mean[ci] - self.running_mean[ci]) * w;
                            self.running_var[ci] += (var[ci] - self.running_var[ci]) * w;
                        }
                        self.calibrating = Some(count + 1);
                    }
                    None => {
                        for ci in 0..c {
                            self.running_mean[ci] = self.momentum * self.running_mean[ci]
                                + (1.0 - self.momentum) * mean[ci];
                            self.running_var[ci] = self.momentum * self.running_var[ci]
                                + (1.0 - self.momentum) * var[ci];
                        }
                    }
                }
                let out = self.affine(x, &mean, &var);
                self.batch_mean = mean;
                self.batch_var = var;
                out
            }
        }
    }

    fn backward(&mut self, input: &Tensor, gout: &Tensor) -> Tensor {
        assert!(
            !self.batch_mean.is_empty(),
            "batch-norm backward requires a training-mode forward first"
        );
        let c = self.channels();
        let n = (input.len() / c) as f64;

        // Per-channel reductions over the normalized input.
        let sums: Vec<(f64, f64)> = (0..c)
            .into_par_iter()
            .map(|ci| {
                let inv_std = 1.0 / (self.batch_var[ci] + self.eps).sqrt();
                let mean = self.batch_mean[ci];
                let mut sum_g = 0.0;
                let mut sum_gx = 0.0;
                let mut i = ci;
                while i < input.data.len() {
                    let g = gout.data[i];
                    sum_g += g;
                    sum_gx += g * (input.data[i] - mean) * inv_std;
                    i += c;
                }
                (sum_g, sum_gx)
            })
            .collect();

        {
            let g_gamma = self.gamma.grad_mut();
            for (ci, (sum_g, sum_gx)) in sums.iter().enumerate() {
                g_gamma[ci] += sum_gx;
                let _ = sum_g;
            }
        }
        {
            let g_beta = self.beta.grad_mut();
            for (ci, (sum_g, _)) in sums.iter().enumerate() {
                g_beta[ci] += sum_g;
            }
        }

        let inv_std: Vec<f64> = (0..c)
            .map(|ci| 1.0 / (self.batch_var[ci] + self.eps).sqrt())
            .collect();
        let mean = &self.batch_mean;
        let gamma = &self.gamma.data;
        let mut gin = Tensor::zeros(&input.shape);
        gin.data
            .par_chunks_mut(c)
            .zip(input.data.par_chunks(c).zip(gout.data.par_chunks(c)))
            .for_each(|(gi, (xr, gr))| {
                for ci in 0..c {
                    let xhat = (xr[ci] - mean[ci]) * inv_std[ci];
                    let (sum_g, sum_gx) = sums[ci];
                    gi[ci] = gamma[ci] * inv_std[ci] / n
                        * (n * gr[ci] - sum_g - xhat * sum_gx);
                }
            });
        gin
    }
}

#[derive(Debug, Clone)]
pub struct Relu;

impl Relu {
    fn forward(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        out.grad = None;
        out.data.par_iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0;
            }
        });
        out
    }

    fn backward(&self, input: &Tensor, gout: &Tensor) -> Tensor {
        let mut gin = Tensor::zeros(&input.shape);
        gin.data
            .par_iter_mut()
            .zip(input.data.par_iter().zip(gout.data.par_iter()))
            .for_each(|(gi, (&x, &g))| {
                *gi = if x > 0.0 { g } else { 0.0 };
            });
        gin
    }
}

#[derive(Debug, Clone)]
pub struct Sigmoid;

impl Sigmoid {
    fn forward(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        out.grad = None;
        out.data
            .par_iter_mut()
            .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp()));
        out
    }

    fn backward(&self, output: &Tensor, gout: &Tensor) -> Tensor {
        let mut gin = Tensor::zeros(&output.shape);
        gin.data
            .par_iter_mut()
            .zip(output.data.par_iter().zip(gout.data.par_iter()))
            .for_each(|(gi, (&y, &g))| {
                *gi = g * y * (1.0 - y);
            });
        gin
    }
}

/// Max pooling over the frequency axis with ceil-mode output length.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub pool_w: usize,
}

impl MaxPool2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        let (b_n, t, f_in, c) = x.dims4();
        let f_out = f_in.div_ceil(self.pool_w);
        let mut out = Tensor::zeros(&[b_n, t, f_out, c]);
        let per_in = t * f_in * c;
        let per_out = t * f_out * c;
        out.data
            .par_chunks_mut(per_out)
            .enumerate()
            .for_each(|(b, out_b)| {
                let x_b = &x.data[b * per_in..(b + 1) * per_in];
                for ti in 0..t {
                    for fo in 0..f_out {
                        let acc = &mut out_b[(ti * f_out + fo) * c..][..c];
                        let f_lo = fo * self.pool_w;
                        let f_hi = (f_lo + self.pool_w).min(f_in);
                        for ci in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            for fi in f_lo..f_hi {
                                let v = x_b[(ti * f_in + fi) * c + ci];
                                if v > best {
                                    best = v;
                                }
                            }
                            acc[ci] = best;
                        }
                    }
                }
            });
        out
    }

    fn backward(&self, input: &Tensor, gout: &Tensor) -> Tensor {
        let (_, t, f_in, c) = input.dims4();
        let f_out = f_in.div_ceil(self.pool_w);
        let mut gin = Tensor::zeros(&input.shape);
        let per_in = t * f_in * c;
        let per_out = t * f_out * c;
        gin.data
            .par_chunks_mut(per_in)
            .enumerate()
            .for_each(|(b, gin_b)| {
                let x_b = &input.data[b * per_in..(b + 1) * per_in];
                let g_b = &gout.data[b * per_out..(b + 1) * per_out];
                for ti in 0..t {
                    for fo in 0..f_out {
                        let f_lo = fo * self.pool_w;
                        let f_hi = (f_lo + self.pool_w).min(f_in);
                        for ci in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_fi = f_lo;
                            for fi in f_lo..f_hi {
                                let v = x_b[(ti * f_in + fi) * c + ci];
                                if v > best {
                                    best = v;
                                    best_fi = fi;
                                }
                            }
                            gin_b[(ti * f_in + best_fi) * c + ci] +=
                                g_b[(ti * f_out + fo) * c + ci];
                        }
                    }
                }
            });
        gin
    }
}

/// Channel dropout: zeroes whole feature maps per example during training
/// and rescales the survivors. Inactive at rate 0 and in inference mode.
#[derive(Debug, Clone)]
pub struct SpatialDropout {
    pub rate: f64,
    mask: Vec<f64>,
}

impl SpatialDropout {
    pub fn new(rate: f64) -> Self {
        SpatialDropout {
            rate,
            mask: Vec::new(),
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Tensor {
        if mode != Mode::Train || self.rate == 0.0 {
            self.mask.clear();
            let mut out = x.clone();
            out.grad = None;
            return out;
        }
        let (b_n, _, _, c) = x.dims4();
        let keep_scale = 1.0 / (1.0 - self.rate);
        self.mask = (0..b_n * c)
            .map(|_| {
                if rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        self.apply_mask(x)
    }

    fn apply_mask(&self, x: &Tensor) -> Tensor {
        let (_, t, f, c) = x.dims4();
        let per = t * f * c;
        let mut out = Tensor::zeros(&x.shape);
        out.data
            .par_chunks_mut(per)
            .enumerate()
            .for_each(|(b, out_b)| {
                let x_b = &x.data[b * per..(b + 1) * per];
                let m = &self.mask[b * c..(b + 1) * c];
                for (o, (xv, ci)) in out_b
                    .iter_mut()
                    .zip(x_b.iter().zip((0..c).cycle()))
                {
                    *o = xv * m[ci];
                }
            });
        out
    }

    fn backward(&self, gout: &Tensor) -> Tensor {
        if self.mask.is_empty() {
            let mut g = gout.clone();
            g.grad = None;
            return g;
        }
        self.apply_mask(gout)
    }
}

/// Flattens `[b, t, f, c]` into `[b, t, 1, f*c]`; the row-major layout
/// makes this a pure shape change.
#[derive(Debug, Clone)]
pub struct ReshapeMerge;

impl ReshapeMerge {
    fn forward(&self, x: &Tensor) -> Tensor {
        let (b_n, t, f, c) = x.dims4();
        Tensor::from_vec(&[b_n, t, 1, f * c], x.data.clone())
    }

    fn backward(&self, input: &Tensor, gout: &Tensor) -> Tensor {
        Tensor::from_vec(&input.shape, gout.data.clone())
    }
}

/// Width-1 convolution over time: a per-step linear map with bias, used as
/// the output head.
#[derive(Debug, Clone)]
pub struct Conv1d {
    /// `[c_in, c_out]`
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl Conv1d {
    fn forward(&self, x: &Tensor) -> Tensor {
        let (b_n, t, f, c_in) = x.dims4();
        debug_assert_eq!(f, 1, "conv1d expects a flattened frequency axis");
        debug_assert_eq!(self.kernel.shape[0], c_in);
        let c_out = self.kernel.shape[1];
        let mut out = Tensor::zeros(&[b_n, t, 1, c_out]);
        let kernel = &self.kernel.data;
        let bias = &self.bias.data;
        out.data
            .par_chunks_mut(c_out)
            .zip(x.data.par_chunks(c_in))
            .for_each(|(o, xr)| {
                o.copy_from_slice(bias);
                for (ci, &xv) in xr.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let k_row = &kernel[ci * c_out..][..c_out];
                    for (ov, &kv) in o.iter_mut().zip(k_row.iter()) {
                        *ov += xv * kv;
                    }
                }
            });
        out
    }

    fn backward(&mut self, input: &Tensor, gout: &Tensor) -> Tensor {
        let (b_n, t, _, c_in) = input.dims4();
        let c_out = self.kernel.shape[1];
        let rows = b_n * t;
        let mut gin = Tensor::zeros(&input.shape);
        let kernel = &self.kernel.data;

        let partials: Vec<(Vec<f64>, Vec<f64>)> = gin
            .data
            .par_chunks_mut(c_in)
            .enumerate()
            .map(|(row, gi)| {
                let xr = &input.data[row * c_in..(row + 1) * c_in];
                let gr = &gout.data[row * c_out..(row + 1) * c_out];
                let mut kg = vec![0.0f64; c_in * c_out];
                let mut bg = vec![0.0f64; c_out];
                for ci in 0..c_in {
                    let k_row = &kernel[ci * c_out..][..c_out];
                    let mut g = 0.0;
                    for (gv, kv) in gr.iter().zip(k_row.iter()) {
                        g += gv * kv;
                    }
                    gi[ci] = g;
                    let xv = xr[ci];
                    if xv != 0.0 {
                        let kg_row = &mut kg[ci * c_out..][..c_out];
                        for (kgv, gv) in kg_row.iter_mut().zip(gr.iter()) {
                            *kgv += xv * gv;
                        }
                    }
                }
                for (bgv, gv) in bg.iter_mut().zip(gr.iter()) {
                    *bgv += gv;
                }
                (kg, bg)
            })
            .collect();
        let _ = rows;

        let kgrad = self.kernel.grad_mut();
        for (kg, _) in &partials {
            for (k, p) in kgrad.iter_mut().zip(kg.iter()) {
                *k += p;
            }
        }
        let bgrad = self.bias.grad_mut();
        for (_, bg) in &partials {
            for (b, p) in bgrad.iter_mut().zip(bg.iter()) {
                *b += p;
            }
        }
        gin
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    DepthwiseConv2d(DepthwiseConv2d),
    BatchNorm(BatchNorm),
    Relu(Relu),
    Sigmoid(Sigmoid),
    MaxPool2d(MaxPool2d),
    SpatialDropout(SpatialDropout),
    ReshapeMerge(ReshapeMerge),
    Conv1d(Conv1d),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Tensor {
        match self {
            Layer::Conv2d(l) => l.forward(x),
            Layer::DepthwiseConv2d(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x),
            Layer::Sigmoid(l) => l.forward(x),
            Layer::MaxPool2d(l) => l.forward(x),
            Layer::SpatialDropout(l) => l.forward(x, mode, rng),
            Layer::ReshapeMerge(l) => l.forward(x),
            Layer::Conv1d(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, input: &Tensor, output: &Tensor, gout: &Tensor) -> Tensor {
        match self {
            Layer::Conv2d(l) => l.backward(input, gout),
            Layer::DepthwiseConv2d(l) => l.backward(input, gout),
            Layer::BatchNorm(l) => l.backward(input, gout),
            Layer::Relu(l) => l.backward(input, gout),
            Layer::Sigmoid(l) => l.backward(output, gout),
            Layer::MaxPool2d(l) => l.backward(input, gout),
            Layer::SpatialDropout(l) => l.backward(gout),
            Layer::ReshapeMerge(l) => l.backward(input, gout),
            Layer::Conv1d(l) => l.backward(input, gout),
        }
    }

    /// Trainable parameter tensors with stable names.
    pub fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Conv2d(l) => vec![("kernel", &l.kernel)],
            Layer::DepthwiseConv2d(l) => vec![("kernel", &l.kernel)],
            Layer::BatchNorm(l) => vec![("gamma", &l.gamma), ("beta", &l.beta)],
            Layer::Conv1d(l) => vec![("kernel", &l.kernel), ("bias", &l.bias)],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        match self {
            Layer::Conv2d(l) => vec![("kernel", &mut l.kernel)],
            Layer::DepthwiseConv2d(l) => vec![("kernel", &mut l.kernel)],
            Layer::BatchNorm(l) => vec![("gamma", &mut l.gamma), ("beta", &mut l.beta)],
            Layer::Conv1d(l) => vec![("kernel", &mut l.kernel), ("bias", &mut l.bias)],
            _ => Vec::new(),
        }
    }

    /// Non-trainable buffers that still belong in checkpoints.
    pub fn state(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", l.running_mean.as_slice()),
                ("running_var", l.running_var.as_slice()),
            ],
            _ => Vec::new(),
        }
    }

    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        match self {
            Layer::BatchNorm(l) => vec![
                ("running_mean", &mut l.running_mean),
                ("running_var", &mut l.running_var),
            ],
            _ => Vec::new(),
        }
    }
}
