//! Fully connected layers, pointwise activations, softmax and dropout.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// `x (rows x in) * weight (in x out) + bias`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let (rows, fan_in) = x.dims2()?;
    let (w_in, out) = weight.dims2()?;
    if w_in != fan_in || bias.len() != out {
        return Err(Error::shape("linear", x.shape(), weight.shape()));
    }
    let mut y = Tensor::zeros(&[rows, out]);
    for row in y.data_mut().chunks_mut(out) {
        row.copy_from_slice(bias);
    }
    gemm(rows, fan_in, out, 1.0, x.data(), false, weight.data(), false, 1.0, y.data_mut());
    Ok(y)
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn linear_backward(x: &Tensor, weight: &Tensor, grad_out: &Tensor) -> Result<LinearGrads> {
    let (rows, fan_in) = x.dims2()?;
    let (_, out) = weight.dims2()?;
    if grad_out.shape() != [rows, out] {
        return Err(Error::shape("linear backward", grad_out.shape(), &[rows, out]));
    }
    let mut dw = vec![0.0; fan_in * out];
    gemm(fan_in, rows, out, 1.0, x.data(), true, grad_out.data(), false, 0.0, &mut dw);
    let mut dx = Tensor::zeros(&[rows, fan_in]);
    gemm(rows, out, fan_in, 1.0, grad_out.data(), false, weight.data(), true, 0.0, dx.data_mut());
    let mut db = vec![0.0; out];
    for row in grad_out.data().chunks(out) {
        for (b, g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LinearGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn relu_inplace(x: &mut Tensor) {
    for v in x.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Gradient through ReLU given its output.
pub fn relu_backward(output: &Tensor, grad_out: &mut Tensor) {
    for (g, y) in grad_out.data_mut().iter_mut().zip(output.data()) {
        if *y <= 0.0 {
            *g = 0.0;
        }
    }
}

pub fn sigmoid_backward(output: &[f64], grad_out: &mut [f64]) {
    for (g, y) in grad_out.iter_mut().zip(output) {
        *g *= y * (1.0 - y);
    }
}

pub fn tanh_backward(output: &[f64], grad_out: &mut [f64]) {
    for (g, y) in grad_out.iter_mut().zip(output) {
        *g *= 1.0 - y * y;
    }
}

/// Row-wise softmax of a `rows x k` matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    let (_, k) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Ok(out)
}

pub fn softmax_rows_backward(probs: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (_, k) = probs.dims2()?;
    if probs.shape() != grad_out.shape() {
        return Err(Error::shape("softmax backward", probs.shape(), grad_out.shape()));
    }
    let mut dz = Tensor::zeros(probs.shape());
    for ((d, p), g) in dz
        .data_mut()
        .chunks_mut(k)
        .zip(probs.data().chunks(k))
        .zip(grad_out.data().chunks(k))
    {
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for i in 0..k {
            d[i] = p[i] * (g[i] - dot);
        }
    }
    Ok(dz)
}

/// Multiplicative dropout mask; kept entries hold `1 / (1 - p)`.
#[derive(Debug, Clone)]
pub struct DropoutMask {
    pub mask: Vec<f64>,
    /// Elements covered by one mask entry (1 for element-wise, `T*H*W` for
    /// volumetric).
    pub span: usize,
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Invalid(format!("dropout probability {p} outside [0, 1)")));
    }
    Ok(())
}

fn draw_mask<R: Rng + ?Sized>(count: usize, p: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - p);
    (0..count)
        .map(|_| if p > 0.0 && rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}

/// Element-wise dropout for linear layers.
pub fn dropout_linear<R: Rng + ?Sized>(x: &mut Tensor, p: f64, rng: &mut R) -> Result<DropoutMask> {
    check_p(p)?;
    let mask = DropoutMask {
        mask: draw_mask(x.len(), p, rng),
        span: 1,
    };
    mask.apply(x);
    Ok(mask)
}

/// Volumetric dropout: zeroes whole feature maps (one `(n, c)` slice across
/// all of `T x H x W`).
pub fn dropout_volumetric<R: Rng + ?Sized>(x: &mut Tensor, p: f64, rng: &mut R) -> Result<DropoutMask> {
    check_p(p)?;
    let (n, c, t, h, w) = x.dims5()?;
    let mask = DropoutMask {
        mask: draw_mask(n * c, p, rng),
        span: t * h * w,
    };
    mask.apply(x);
    Ok(mask)
}

impl DropoutMask {
    /// Scales `x` in place; also used for the backward pass.
    pub fn apply(&self, x: &mut Tensor) {
        for (chunk, m) in x.data_mut().chunks_mut(self.span).zip(&self.mask) {
            if *m != 1.0 {
                for v in chunk {
                    *v *= m;
                }
            }
        }
    }
}
