//! 3D cross-correlation over `N x C x T x H x W` volumes.
//!
//! The fast path lowers each sample to a column matrix and multiplies it by
//! the flattened kernel. Backward recomputes the columns instead of caching
//! them.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Zero padding per axis, `(before, after)` for `t`, `h`, `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Padding3 {
    pub t: (usize, usize),
    pub h: (usize, usize),
    pub w: (usize, usize),
}

impl Padding3 {
    pub fn symmetric(t: usize, h: usize, w: usize) -> Self {
        Padding3 {
            t: (t, t),
            h: (h, h),
            w: (w, w),
        }
    }

    /// Temporal padding only on the past side so that output frame `t`
    /// depends on input frames `<= t`; spatial padding keeps `h`, `w`.
    pub fn causal(kt: usize, kh: usize, kw: usize) -> Self {
        Padding3 {
            t: (kt - 1, 0),
            h: ((kh - 1) / 2, kh / 2),
            w: ((kw - 1) / 2, kw / 2),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    t: usize,
    h: usize,
    w: usize,
    o: usize,
    kt: usize,
    kh: usize,
    kw: usize,
    ot: usize,
    oh: usize,
    ow: usize,
    pad: Padding3,
}

impl Geometry {
    fn new(input: &Tensor, kernel: &Tensor, bias: &[f64], pad: Padding3) -> Result<Self> {
        let (n, c, t, h, w) = input.dims5()?;
        let (o, kc, kt, kh, kw) = kernel.dims5()?;
        if kc != c {
            return Err(Error::shape("conv3d", input.shape(), kernel.shape()));
        }
        if bias.len() != o {
            return Err(Error::shape("conv3d bias", kernel.shape(), &[bias.len()]));
        }
        let out = |len: usize, (a, b): (usize, usize), k: usize| (len + a + b + 1).checked_sub(k);
        match (out(t, pad.t, kt), out(h, pad.h, kh), out(w, pad.w, kw)) {
            (Some(ot), Some(oh), Some(ow)) if ot > 0 && oh > 0 && ow > 0 => Ok(Geometry {
                n,
                c,
                t,
                h,
                w,
                o,
                kt,
                kh,
                kw,
                ot,
                oh,
                ow,
                pad,
            }),
            _ => Err(Error::shape("conv3d", input.shape(), kernel.shape())),
        }
    }

    fn col_rows(&self) -> usize {
        self.c * self.kt * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.ot * self.oh * self.ow
    }

    fn sample_len(&self) -> usize {
        self.c * self.t * self.h * self.w
    }

    /// Valid output range along one axis for kernel offset `d`:
    /// output index `o` reads input `o + d - pad_before`.
    fn range(out_len: usize, in_len: usize, pad_before: usize, d: usize) -> (usize, usize) {
        let lo = pad_before.saturating_sub(d);
        let hi = (in_len + pad_before).saturating_sub(d).min(out_len);
        (lo, hi.max(lo))
    }

    fn im2col(&self, x: &[f64], col: &mut [f64]) {
        col.fill(0.0);
        let g = *self;
        let plane = g.h * g.w;
        let cols = g.col_cols();
        let mut row = 0;
        for c in 0..g.c {
            for dt in 0..g.kt {
                let (t0, t1) = Self::range(g.ot, g.t, g.pad.t.0, dt);
                for dh in 0..g.kh {
                    let (h0, h1) = Self::range(g.oh, g.h, g.pad.h.0, dh);
                    for dw in 0..g.kw {
                        let (w0, w1) = Self::range(g.ow, g.w, g.pad.w.0, dw);
                        let dst = &mut col[row * cols..(row + 1) * cols];
                        for ot in t0..t1 {
                            let it = ot + dt - g.pad.t.0;
                            for oh in h0..h1 {
                                let ih = oh + dh - g.pad.h.0;
                                let src = c * g.t * plane + it * plane + ih * g.w;
                                let dbase = (ot * g.oh + oh) * g.ow;
                                for ow in w0..w1 {
                                    dst[dbase + ow] = x[src + ow + dw - g.pad.w.0];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], dx: &mut [f64]) {
        let g = *self;
        let plane = g.h * g.w;
        let cols = g.col_cols();
        let mut row = 0;
        for c in 0..g.c {
            for dt in 0..g.kt {
                let (t0, t1) = Self::range(g.ot, g.t, g.pad.t.0, dt);
                for dh in 0..g.kh {
                    let (h0, h1) = Self::range(g.oh, g.h, g.pad.h.0, dh);
                    for dw in 0..g.kw {
                        let (w0, w1) = Self::range(g.ow, g.w, g.pad.w.0, dw);
                        let src = &col[row * cols..(row + 1) * cols];
                        for ot in t0..t1 {
                            let it = ot + dt - g.pad.t.0;
                            for oh in h0..h1 {
                                let ih = oh + dh - g.pad.h.0;
                                let dst = c * g.t * plane + it * plane + ih * g.w;
                                let sbase = (ot * g.oh + oh) * g.ow;
                                for ow in w0..w1 {
                                    dx[dst + ow + dw - g.pad.w.0] += src[sbase + ow];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

/// Forward cross-correlation. `kernel` is `O x C x kt x kh x kw`.
pub fn conv3d(input: &Tensor, kernel: &Tensor, bias: &[f64], pad: Padding3) -> Result<Tensor> {
    let g = Geometry::new(input, kernel, bias, pad)?;
    let rows = g.col_rows();
    let cols = g.col_cols();
    let mut out = Tensor::zeros(&[g.n, g.o, g.ot, g.oh, g.ow]);
    let mut col = vec![0.0; rows * cols];
    let x = input.data();
    let y = out.data_mut();
    for s in 0..g.n {
        g.im2col(&x[s * g.sample_len()..(s + 1) * g.sample_len()], &mut col);
        let ys = &mut y[s * g.o * cols..(s + 1) * g.o * cols];
        for (o, chunk) in ys.chunks_mut(cols).enumerate() {
            chunk.fill(bias[o]);
        }
        gemm(g.o, rows, cols, 1.0, kernel.data(), false, &col, false, 1.0, ys);
    }
    Ok(out)
}

pub struct Conv3dGrads {
    pub input: Tensor,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a scalar loss with respect to input, kernel and bias, given
/// the gradient at the output.
pub fn conv3d_backward(
    input: &Tensor,
    kernel: &Tensor,
    pad: Padding3,
    grad_out: &Tensor,
) -> Result<Conv3dGrads> {
    let o = kernel.shape()[0];
    let g = Geometry::new(input, kernel, &vec![0.0; o], pad)?;
    let expected = [g.n, g.o, g.ot, g.oh, g.ow];
    if grad_out.shape() != expected {
        return Err(Error::shape("conv3d backward", grad_out.shape(), &expected));
    }
    let rows = g.col_rows();
    let cols = g.col_cols();
    let mut dx = Tensor::zeros(input.shape());
    let mut dk = vec![0.0; kernel.len()];
    let mut db = vec![0.0; g.o];
    let mut col = vec![0.0; rows * cols];
    let mut dcol = vec![0.0; rows * cols];
    let x = input.data();
    let dy = grad_out.data();
    for s in 0..g.n {
        let xs = &x[s * g.sample_len()..(s + 1) * g.sample_len()];
        let dys = &dy[s * g.o * cols..(s + 1) * g.o * cols];
        for (o, chunk) in dys.chunks(cols).enumerate() {
            db[o] += chunk.iter().sum::<f64>();
        }
        g.im2col(xs, &mut col);
        // dK (o x rows) += dY (o x cols) * col^T
        gemm(g.o, cols, rows, 1.0, dys, false, &col, true, 1.0, &mut dk);
        // dcol (rows x cols) = K^T * dY
        gemm(rows, g.o, cols, 1.0, kernel.data(), true, dys, false, 0.0, &mut dcol);
        let dxs = &mut dx.data_mut()[s * g.sample_len()..(s + 1) * g.sample_len()];
        g.col2im(&dcol, dxs);
    }
    Ok(Conv3dGrads {
        input: dx,
        kernel: dk,
        bias: db,
    })
}
