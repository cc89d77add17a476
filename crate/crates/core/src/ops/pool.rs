use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output of a spatial max-pool with the winning input offsets kept for
/// backward.
#[derive(Debug, Clone)]
pub struct Pooled {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

/// Max over non-overlapping `1 x 2 x 2` windows; the temporal axis is left
/// untouched. Ties go to the first element in scan order.
pub fn maxpool3d_spatial(input: &Tensor) -> Result<Pooled> {
    let (n, c, t, h, w) = input.dims5()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Invalid(format!(
            "spatial max-pool needs even H and W, got {h} x {w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut output = Tensor::zeros(&[n, c, t, oh, ow]);
    let mut argmax = vec![0; output.len()];
    let x = input.data();
    let y = output.data_mut();
    let planes = n * c * t;
    for p in 0..planes {
        let ibase = p * h * w;
        let obase = p * oh * ow;
        for i in 0..oh {
            for j in 0..ow {
                let r0 = ibase + 2 * i * w + 2 * j;
                let mut best = r0;
                for cand in [r0 + 1, r0 + w, r0 + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                y[obase + i * ow + j] = x[best];
                argmax[obase + i * ow + j] = best;
            }
        }
    }
    Ok(Pooled { output, argmax })
}

pub fn maxpool3d_spatial_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(Error::shape("maxpool backward", grad_out.shape(), &[argmax.len()]));
    }
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        d[idx] += g;
    }
    Ok(dx)
}
