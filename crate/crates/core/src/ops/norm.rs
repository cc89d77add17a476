//! Per-channel batch normalization for `N x C x T x H x W` activations.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Values kept from a train-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Vec<f64>,
    inv_std: Vec<f64>,
}

fn check(input: &Tensor, scale: &[f64], shift: &[f64], stats: &RunningStats) -> Result<(usize, usize, usize)> {
    let (n, c, t, h, w) = input.dims5()?;
    for len in [scale.len(), shift.len(), stats.mean.len(), stats.var.len()] {
        if len != c {
            return Err(Error::shape("batchnorm", input.shape(), &[len]));
        }
    }
    Ok((n, c, t * h * w))
}

/// Normalizes with batch statistics over `N x T x H x W` and folds them into
/// `stats` by exponential moving average (unbiased variance).
pub fn batchnorm_train(
    input: &Tensor,
    scale: &[f64],
    shift: &[f64],
    stats: &mut RunningStats,
) -> Result<(Tensor, BnCache)> {
    let (n, c, inner) = check(input, scale, shift, stats)?;
    let count = (n * inner) as f64;
    let x = input.data();
    let mut out = Tensor::zeros(input.shape());
    let mut x_hat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; c];
    for ch in 0..c {
        let blocks = (0..n).map(|s| (s * c + ch) * inner);
        let mut sum = 0.0;
        for b in blocks.clone() {
            sum += x[b..b + inner].iter().sum::<f64>();
        }
        let mean = sum / count;
        let mut sq = 0.0;
        for b in blocks.clone() {
            sq += x[b..b + inner].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
        }
        let var = sq / count;
        let istd = 1.0 / (var + BN_EPSILON).sqrt();
        inv_std[ch] = istd;
        let y = out.data_mut();
        for b in blocks {
            for i in b..b + inner {
                let xh = (x[i] - mean) * istd;
                x_hat[i] = xh;
                y[i] = scale[ch] * xh + shift[ch];
            }
        }
        let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
        stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean;
        stats.var[ch] = (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * unbiased;
    }
    Ok((out, BnCache { x_hat, inv_std }))
}

pub fn batchnorm_eval(
    input: &Tensor,
    scale: &[f64],
    shift: &[f64],
    stats: &RunningStats,
) -> Result<Tensor> {
    let (n, c, inner) = check(input, scale, shift, stats)?;
    let mut out = input.clone();
    let y = out.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let istd = 1.0 / (stats.var[ch] + BN_EPSILON).sqrt();
            let a = scale[ch] * istd;
            let b = shift[ch] - a * stats.mean[ch];
            let base = (s * c + ch) * inner;
            for v in &mut y[base..base + inner] {
                *v = a * *v + b;
            }
        }
    }
    Ok(out)
}

pub struct BnGrads {
    pub input: Tensor,
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

pub fn batchnorm_backward(cache: &BnCache, scale: &[f64], grad_out: &Tensor) -> Result<BnGrads> {
    let (n, c, t, h, w) = grad_out.dims5()?;
    if cache.x_hat.len() != grad_out.len() || scale.len() != c {
        return Err(Error::shape("batchnorm backward", grad_out.shape(), &[cache.x_hat.len()]));
    }
    let inner = t * h * w;
    let count = (n * inner) as f64;
    let dy = grad_out.data();
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut dscale = vec![0.0; c];
    let mut dshift = vec![0.0; c];
    for ch in 0..c {
        let blocks: Vec<usize> = (0..n).map(|s| (s * c + ch) * inner).collect();
        let (mut sum_dy, mut sum_dy_xh) = (0.0, 0.0);
        for &b in &blocks {
            for i in b..b + inner {
                sum_dy += dy[i];
                sum_dy_xh += dy[i] * cache.x_hat[i];
            }
        }
        dshift[ch] = sum_dy;
        dscale[ch] = sum_dy_xh;
        let k = scale[ch] * cache.inv_std[ch] / count;
        let d = dx.data_mut();
        for &b in &blocks {
            for i in b..b + inner {
                d[i] = k * (count * dy[i] - sum_dy - cache.x_hat[i] * sum_dy_xh);
            }
        }
    }
    Ok(BnGrads {
        input: dx,
        scale: dscale,
        shift: dshift,
    })
}
