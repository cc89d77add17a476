//! Bias-free gated recurrent unit, row-vector convention:
//!
//! ```text
//! z_t = sigmoid(g_t Uz + f_{t-1} Wz)
//! r_t = sigmoid(g_t Ur + f_{t-1} Wr)
//! s_t = tanh(g_t Uh + (f_{t-1} * r_t) Wh)
//! f_t = (1 - z_t) * s_t + z_t * f_{t-1}
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::dense::sigmoid;
use crate::tensor::{gemm, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub uz: Tensor,
    pub ur: Tensor,
    pub uh: Tensor,
    pub wz: Tensor,
    pub wr: Tensor,
    pub wh: Tensor,
}

impl GruParams {
    pub fn zeros(inputs: usize, units: usize) -> Self {
        GruParams {
            uz: Tensor::zeros(&[inputs, units]),
            ur: Tensor::zeros(&[inputs, units]),
            uh: Tensor::zeros(&[inputs, units]),
            wz: Tensor::zeros(&[units, units]),
            wr: Tensor::zeros(&[units, units]),
            wh: Tensor::zeros(&[units, units]),
        }
    }

    pub fn init<R: Rng + ?Sized>(inputs: usize, units: usize, rng: &mut R) -> Self {
        let bu = (1.0 / inputs as f64).sqrt();
        let bw = (1.0 / units as f64).sqrt();
        GruParams {
            uz: Tensor::uniform(&[inputs, units], bu, rng),
            ur: Tensor::uniform(&[inputs, units], bu, rng),
            uh: Tensor::uniform(&[inputs, units], bu, rng),
            wz: Tensor::uniform(&[units, units], bw, rng),
            wr: Tensor::uniform(&[units, units], bw, rng),
            wh: Tensor::uniform(&[units, units], bw, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.uz.shape()[0]
    }

    pub fn units(&self) -> usize {
        self.uz.shape()[1]
    }
}

/// Hidden state after one step plus everything backward needs.
#[derive(Debug, Clone)]
pub struct GruState {
    pub hidden: Tensor,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    input: Tensor,
    prev: Tensor,
    prev_reset: Tensor,
}

impl GruState {
    /// All-zero state for `batch` sequences; the gate buffers are empty.
    pub fn initial(batch: usize, units: usize) -> Self {
        GruState {
            hidden: Tensor::zeros(&[batch, units]),
            z: Vec::new(),
            r: Vec::new(),
            s: Vec::new(),
            input: Tensor::zeros(&[batch, 0]),
            prev: Tensor::zeros(&[batch, units]),
            prev_reset: Tensor::zeros(&[batch, units]),
        }
    }
}

pub fn gru_step(input: &Tensor, prev: &Tensor, params: &GruParams) -> Result<GruState> {
    let (batch, fan_in) = input.dims2()?;
    let units = params.units();
    if fan_in != params.inputs() {
        return Err(Error::shape("gru input", input.shape(), params.uz.shape()));
    }
    if prev.shape() != [batch, units] {
        return Err(Error::shape("gru hidden", prev.shape(), &[batch, units]));
    }
    let n = batch * units;
    let g = input.data();
    let f = prev.data();

    let mut z = vec![0.0; n];
    gemm(batch, fan_in, units, 1.0, g, false, params.uz.data(), false, 0.0, &mut z);
    gemm(batch, units, units, 1.0, f, false, params.wz.data(), false, 1.0, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = vec![0.0; n];
    gemm(batch, fan_in, units, 1.0, g, false, params.ur.data(), false, 0.0, &mut r);
    gemm(batch, units, units, 1.0, f, false, params.wr.data(), false, 1.0, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let fr: Vec<f64> = f.iter().zip(&r).map(|(a, b)| a * b).collect();
    let mut s = vec![0.0; n];
    gemm(batch, fan_in, units, 1.0, g, false, params.uh.data(), false, 0.0, &mut s);
    gemm(batch, units, units, 1.0, &fr, false, params.wh.data(), false, 1.0, &mut s);
    s.iter_mut().for_each(|v| *v = v.tanh());

    let hidden: Vec<f64> = (0..n).map(|i| (1.0 - z[i]) * s[i] + z[i] * f[i]).collect();
    Ok(GruState {
        hidden: Tensor::from_vec(&[batch, units], hidden)?,
        z,
        r,
        s,
        input: input.clone(),
        prev: prev.clone(),
        prev_reset: Tensor::from_vec(&[batch, units], fr)?,
    })
}

/// Backward through one step. Parameter gradients are accumulated into the
/// grad slots of `params`; returns `(d_input, d_prev_hidden)`.
pub fn gru_step_backward(
    state: &GruState,
    params: &mut GruParams,
    grad_hidden: &[f64],
) -> Result<(Tensor, Tensor)> {
    let (batch, fan_in) = state.input.dims2()?;
    let units = params.units();
    let n = batch * units;
    if grad_hidden.len() != n {
        return Err(Error::shape("gru backward", &[grad_hidden.len()], &[batch, units]));
    }
    let g = state.input.data();
    let f = state.prev.data();
    let (z, r, s) = (&state.z, &state.r, &state.s);

    let mut d_prev = vec![0.0; n];
    let mut a_z = vec![0.0; n];
    let mut a_h = vec![0.0; n];
    for i in 0..n {
        let dh = grad_hidden[i];
        d_prev[i] = dh * z[i];
        a_z[i] = dh * (f[i] - s[i]) * z[i] * (1.0 - z[i]);
        a_h[i] = dh * (1.0 - z[i]) * (1.0 - s[i] * s[i]);
    }

    let mut d_input = Tensor::zeros(&[batch, fan_in]);
    let dg = d_input.data_mut();

    // candidate branch
    let mut d_fr = vec![0.0; n];
    gemm(batch, units, units, 1.0, &a_h, false, params.wh.data(), true, 0.0, &mut d_fr);
    gemm(fan_in, batch, units, 1.0, g, true, &a_h, false, 1.0, params.uh.grad_mut());
    gemm(units, batch, units, 1.0, state.prev_reset.data(), true, &a_h, false, 1.0, params.wh.grad_mut());
    gemm(batch, units, fan_in, 1.0, &a_h, false, params.uh.data(), true, 1.0, dg);

    // reset gate
    let mut a_r = vec![0.0; n];
    for i in 0..n {
        d_prev[i] += d_fr[i] * r[i];
        a_r[i] = d_fr[i] * f[i] * r[i] * (1.0 - r[i]);
    }
    gemm(fan_in, batch, units, 1.0, g, true, &a_r, false, 1.0, params.ur.grad_mut());
    gemm(units, batch, units, 1.0, f, true, &a_r, false, 1.0, params.wr.grad_mut());
    gemm(batch, units, fan_in, 1.0, &a_r, false, params.ur.data(), true, 1.0, dg);
    gemm(batch, units, units, 1.0, &a_r, false, params.wr.data(), true, 1.0, &mut d_prev);

    // update gate
    gemm(fan_in, batch, units, 1.0, g, true, &a_z, false, 1.0, params.uz.grad_mut());
    gemm(units, batch, units, 1.0, f, true, &a_z, false, 1.0, params.wz.grad_mut());
    gemm(batch, units, fan_in, 1.0, &a_z, false, params.uz.data(), true, 1.0, dg);
    gemm(batch, units, units, 1.0, &a_z, false, params.wz.data(), true, 1.0, &mut d_prev);

    Ok((d_input, Tensor::from_vec(&[batch, units], d_prev)?))
}

/// Runs a whole sequence from the all-zero state.
pub fn gru_sequence(inputs: &[Tensor], params: &GruParams) -> Result<Vec<GruState>> {
    let batch = match inputs.first() {
        Some(x) => x.dims2()?.0,
        None => return Ok(Vec::new()),
    };
    let mut states = Vec::with_capacity(inputs.len());
    let mut prev = Tensor::zeros(&[batch, params.units()]);
    for x in inputs {
        let st = gru_step(x, &prev, params)?;
        prev = st.hidden.clone();
        states.push(st);
    }
    Ok(states)
}

/// Backpropagation through time. `grad_hidden[t]` is the loss gradient
/// flowing directly into `f_t`; returns the gradient for every input `g_t`.
pub fn gru_sequence_backward(
    states: &[GruState],
    params: &mut GruParams,
    grad_hidden: &[Tensor],
) -> Result<Vec<Tensor>> {
    if states.len() != grad_hidden.len() {
        return Err(Error::shape("gru sequence backward", &[states.len()], &[grad_hidden.len()]));
    }
    let mut d_inputs = vec![Tensor::zeros(&[0]); states.len()];
    let mut carry: Option<Tensor> = None;
    for t in (0..states.len()).rev() {
        let mut dh = grad_hidden[t].data().to_vec();
        if let Some(c) = &carry {
            for (a, b) in dh.iter_mut().zip(c.data()) {
                *a += b;
            }
        }
        let (dg, dprev) = gru_step_backward(&states[t], params, &dh)?;
        d_inputs[t] = dg;
        carry = Some(dprev);
    }
    Ok(d_inputs)
}
