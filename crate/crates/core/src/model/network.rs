//! The branched encoder: conv stack -> two linear layers -> GRU (or linear)
//! -> {progression head, classification head}.
//!
//! Temporal padding in the conv stack is causal, so frame `t` never sees
//! frames after `t`. That is what lets [`EncoderStream`] reproduce the
//! whole-clip outputs one frame at a time.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::ops::{self, DropoutMask, GruParams, GruState, Padding3, RunningStats};
use crate::tensor::Tensor;

/// Per-frame outputs for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOutput {
    /// Progression estimate `P_t` in `[0, 1]`.
    pub gpm: Vec<f64>,
    /// Class distribution per frame; index 0 is no-gesture.
    pub probs: Vec<Vec<f64>>,
    /// Arg-max of `probs` per frame.
    pub classes: Vec<usize>,
}

impl ModelOutput {
    pub fn new(gpm: Vec<f64>, probs: Vec<Vec<f64>>) -> Self {
        let classes = probs.iter().map(|p| argmax(p)).collect();
        ModelOutput {
            gpm,
            probs,
            classes,
        }
    }

    pub fn len(&self) -> usize {
        self.gpm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gpm.is_empty()
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init<R: Rng + ?Sized>(fan_in: usize, out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        Dense {
            weight: Tensor::uniform(&[fan_in, out], bound, rng),
            bias: Tensor::uniform(&[out], bound, rng),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::linear(x, &self.weight, self.bias.data())
    }

    fn backward(&mut self, x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let g = ops::linear_backward(x, &self.weight, grad_out)?;
        self.weight.accumulate_grad(&g.weight);
        self.bias.accumulate_grad(&g.bias);
        Ok(g.input)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub kernel: Tensor,
    pub bias: Tensor,
    pub scale: Tensor,
    pub shift: Tensor,
    pub stats: RunningStats,
}

impl ConvBlock {
    fn init<R: Rng + ?Sized>(c_in: usize, c_out: usize, kt: usize, rng: &mut R) -> Self {
        let fan_in = c_in * kt * 9;
        let bound = (1.0 / fan_in as f64).sqrt();
        ConvBlock {
            kernel: Tensor::uniform(&[c_out, c_in, kt, 3, 3], bound, rng),
            bias: Tensor::uniform(&[c_out], bound, rng),
            scale: Tensor::full(&[c_out], 1.0),
            shift: Tensor::zeros(&[c_out]),
            stats: RunningStats::new(c_out),
        }
    }

    fn temporal_kernel(&self) -> usize {
        self.kernel.shape()[2]
    }

    fn padding(&self) -> Padding3 {
        Padding3::causal(self.temporal_kernel(), 3, 3)
    }

    /// Eval-mode conv -> BN -> ReLU -> pool.
    fn eval(&self, x: &Tensor, pad: Padding3) -> Result<Tensor> {
        let y = ops::conv3d(x, &self.kernel, self.bias.data(), pad)?;
        let mut y = ops::batchnorm_eval(&y, self.scale.data(), self.shift.data(), &self.stats)?;
        ops::relu_inplace(&mut y);
        Ok(ops::maxpool3d_spatial(&y)?.output)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Temporal {
    Gru(GruParams),
    Linear(Dense),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: ModelConfig,
    pub blocks: Vec<ConvBlock>,
    pub fc1: Dense,
    pub fc2: Dense,
    pub temporal: Temporal,
    pub gpm_head: Dense,
    pub class_head: Dense,
}

struct BlockCache {
    input: Tensor,
    bn: ops::BnCache,
    relu_out: Tensor,
    dropout: Option<DropoutMask>,
    pool_in_shape: Vec<usize>,
    argmax: Vec<usize>,
}

enum TemporalCache {
    Gru(Vec<GruState>),
    Linear(Tensor),
}

/// Activations kept from a train-mode forward pass.
pub struct ForwardCache {
    batch: usize,
    frames: usize,
    blocks: Vec<BlockCache>,
    conv_out_shape: Vec<usize>,
    flat: Tensor,
    fc1_relu: Tensor,
    fc1_drop: Option<DropoutMask>,
    fc1_out: Tensor,
    fc2_relu: Tensor,
    fc2_drop: Option<DropoutMask>,
    temporal: TemporalCache,
    features: Tensor,
    gpm: Vec<f64>,
    probs: Tensor,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let kt = config.variant.temporal_kernel();
        let mut blocks = Vec::new();
        let mut c_in = config.in_channels;
        for &c_out in &config.conv_widths {
            blocks.push(ConvBlock::init(c_in, c_out, kt, rng));
            c_in = c_out;
        }
        let fc1 = Dense::init(config.flat_features(), config.linear_width, rng);
        let fc2 = Dense::init(config.linear_width, config.linear_width, rng);
        let temporal = if config.variant.recurrent() {
            Temporal::Gru(GruParams::init(config.linear_width, config.recurrent_units, rng))
        } else {
            Temporal::Linear(Dense::init(config.linear_width, config.recurrent_units, rng))
        };
        let gpm_head = Dense::init(config.recurrent_units, 1, rng);
        let class_head = Dense::init(config.recurrent_units, config.output_classes(), rng);
        Ok(Network {
            config,
            blocks,
            fc1,
            fc2,
            temporal,
            gpm_head,
            class_head,
        })
    }

    /// Learned parameters in a fixed order with stable names.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("conv{}.weight", i + 1), &b.kernel));
            out.push((format!("conv{}.bias", i + 1), &b.bias));
            out.push((format!("bn{}.scale", i + 1), &b.scale));
            out.push((format!("bn{}.shift", i + 1), &b.shift));
        }
        for (name, d) in [("fc1", &self.fc1), ("fc2", &self.fc2)] {
            out.push((format!("{name}.weight"), &d.weight));
            out.push((format!("{name}.bias"), &d.bias));
        }
        match &self.temporal {
            Temporal::Gru(g) => {
                for (n, t) in [
                    ("uz", &g.uz),
                    ("ur", &g.ur),
                    ("uh", &g.uh),
                    ("wz", &g.wz),
                    ("wr", &g.wr),
                    ("wh", &g.wh),
                ] {
                    out.push((format!("gru.{n}"), t));
                }
            }
            Temporal::Linear(d) => {
                out.push(("temporal.weight".into(), &d.weight));
                out.push(("temporal.bias".into(), &d.bias));
            }
        }
        for (name, d) in [("gpm", &self.gpm_head), ("class", &self.class_head)] {
            out.push((format!("{name}.weight"), &d.weight));
            out.push((format!("{name}.bias"), &d.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for b in &mut self.blocks {
            out.extend([&mut b.kernel, &mut b.bias, &mut b.scale, &mut b.shift]);
        }
        out.extend([
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]);
        match &mut self.temporal {
            Temporal::Gru(g) => out.extend([
                &mut g.uz, &mut g.ur, &mut g.uh, &mut g.wz, &mut g.wr, &mut g.wh,
            ]),
            Temporal::Linear(d) => out.extend([&mut d.weight, &mut d.bias]),
        }
        out.extend([
            &mut self.gpm_head.weight,
            &mut self.gpm_head.bias,
            &mut self.class_head.weight,
            &mut self.class_head.bias,
        ]);
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<(usize, usize)> {
        let (n, c, t, h, w) = input.dims5()?;
        let cfg = &self.config;
        if c != cfg.in_channels || h != cfg.height || w != cfg.width {
            return Err(Error::Invalid(format!(
                "input of shape {:?} is incompatible with the model: required C={} H={} W={}",
                input.shape(),
                cfg.in_channels,
                cfg.height,
                cfg.width
            )));
        }
        if t == 0 || n == 0 {
            return Err(Error::Invalid("input needs at least one video and one frame".into()));
        }
        Ok((n, t))
    }

    /// Eval-mode forward over whole clips (`N x C x T x H x W`).
    pub fn forward(&self, input: &Tensor) -> Result<Vec<ModelOutput>> {
        let (n, t) = self.check_input(input)?;
        let mut x = input.clone();
        for b in &self.blocks {
            x = b.eval(&x, b.padding())?;
        }
        let flat = to_frame_rows(&x)?;
        let mut h = self.fc1.forward(&flat)?;
        ops::relu_inplace(&mut h);
        let mut h2 = self.fc2.forward(&h)?;
        ops::relu_inplace(&mut h2);
        let features = match &self.temporal {
            Temporal::Gru(p) => {
                let states = ops::gru_sequence(&split_steps(&h2, n, t)?, p)?;
                merge_steps(states.iter().map(|s| &s.hidden), n, t)?
            }
            Temporal::Linear(d) => d.forward(&h2)?,
        };
        let (gpm, probs) = self.heads(&features)?;
        Ok(split_outputs(&gpm, &probs, n, t))
    }

    fn heads(&self, features: &Tensor) -> Result<(Vec<f64>, Tensor)> {
        let g = self.gpm_head.forward(features)?;
        let gpm: Vec<f64> = g.data().iter().map(|v| ops::sigmoid(*v)).collect();
        let logits = self.class_head.forward(features)?;
        Ok((gpm, ops::softmax_rows(&logits)?))
    }

    /// Train-mode forward: batch statistics, dropout from `rng`, running
    /// statistics updated.
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        input: &Tensor,
        rng: &mut R,
    ) -> Result<(Vec<ModelOutput>, ForwardCache)> {
        let (n, t) = self.check_input(input)?;
        let p_conv = self.config.conv_dropout;
        let p_lin = self.config.linear_dropout;
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let pad = b.padding();
            let y = ops::conv3d(&x, &b.kernel, b.bias.data(), pad)?;
            let (mut y, bn) = ops::batchnorm_train(&y, b.scale.data(), b.shift.data(), &mut b.stats)?;
            ops::relu_inplace(&mut y);
            let relu_out = y.clone();
            let dropout = if p_conv > 0.0 {
                Some(ops::dropout_volumetric(&mut y, p_conv, rng)?)
            } else {
                None
            };
            let pooled = ops::maxpool3d_spatial(&y)?;
            caches.push(BlockCache {
                input: x,
                bn,
                relu_out,
                dropout,
                pool_in_shape: y.shape().to_vec(),
                argmax: pooled.argmax,
            });
            x = pooled.output;
        }
        let conv_out_shape = x.shape().to_vec();
        let flat = to_frame_rows(&x)?;

        let (fc1_relu, fc1_drop, fc1_out) = dense_relu_dropout(&self.fc1, &flat, p_lin, rng)?;
        let (fc2_relu, fc2_drop, fc2_out) = dense_relu_dropout(&self.fc2, &fc1_out, p_lin, rng)?;

        let (temporal, features) = match &self.temporal {
            Temporal::Gru(p) => {
                let states = ops::gru_sequence(&split_steps(&fc2_out, n, t)?, p)?;
                let f = merge_steps(states.iter().map(|s| &s.hidden), n, t)?;
                (TemporalCache::Gru(states), f)
            }
            Temporal::Linear(d) => {
                let f = d.forward(&fc2_out)?;
                (TemporalCache::Linear(fc2_out.clone()), f)
            }
        };
        let (gpm, probs) = self.heads(&features)?;
        let outputs = split_outputs(&gpm, &probs, n, t);
        let cache = ForwardCache {
            batch: n,
            frames: t,
            blocks: caches,
            conv_out_shape,
            flat,
            fc1_relu,
            fc1_drop,
            fc1_out,
            fc2_relu,
            fc2_drop,
            temporal,
            features,
            gpm,
            probs,
        };
        Ok((outputs, cache))
    }

    /// Accumulates parameter gradients given `dL/dP` (`N*T` values, video-major)
    /// and `dL/dprobs` (`N*T x K`, same order). Returns `dL/dinput`.
    pub fn backward(&mut self, cache: &ForwardCache, d_gpm: &[f64], d_probs: &[f64]) -> Result<Tensor> {
        let (n, t) = (cache.batch, cache.frames);
        let k = self.config.output_classes();
        if d_gpm.len() != n * t || d_probs.len() != n * t * k {
            return Err(Error::shape("network backward", &[d_gpm.len(), d_probs.len()], &[n * t, n * t * k]));
        }
        // heads
        let mut dz_gpm = d_gpm.to_vec();
        ops::dense::sigmoid_backward(&cache.gpm, &mut dz_gpm);
        let dz_gpm = Tensor::from_vec(&[n * t, 1], dz_gpm)?;
        let mut d_feat = self.gpm_head.backward(&cache.features, &dz_gpm)?;
        let d_probs = Tensor::from_vec(&[n * t, k], d_probs.to_vec())?;
        let dz_cls = ops::softmax_rows_backward(&cache.probs, &d_probs)?;
        let d2 = self.class_head.backward(&cache.features, &dz_cls)?;
        add_into(&mut d_feat, &d2);

        // temporal
        let d_fc2_out = match (&mut self.temporal, &cache.temporal) {
            (Temporal::Gru(p), TemporalCache::Gru(states)) => {
                let grads = split_steps(&d_feat, n, t)?;
                let d_in = ops::gru_sequence_backward(states, p, &grads)?;
                merge_steps(d_in.iter(), n, t)?
            }
            (Temporal::Linear(d), TemporalCache::Linear(x)) => d.backward(x, &d_feat)?,
            _ => return Err(Error::Invalid("forward cache does not match the network variant".into())),
        };

        let d_fc1_out = dense_relu_dropout_backward(
            &mut self.fc2,
            &cache.fc1_out,
            &cache.fc2_relu,
            cache.fc2_drop.as_ref(),
            d_fc2_out,
        )?;
        let d_flat = dense_relu_dropout_backward(
            &mut self.fc1,
            &cache.flat,
            &cache.fc1_relu,
            cache.fc1_drop.as_ref(),
            d_fc1_out,
        )?;

        let mut dx = from_frame_rows(&d_flat, &cache.conv_out_shape)?;
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            let mut dy = ops::maxpool3d_spatial_backward(&c.pool_in_shape, &c.argmax, &dx)?;
            if let Some(m) = &c.dropout {
                m.apply(&mut dy);
            }
            ops::relu_backward(&c.relu_out, &mut dy);
            let bn = ops::batchnorm_backward(&c.bn, b.scale.data(), &dy)?;
            b.scale.accumulate_grad(&bn.scale);
            b.shift.accumulate_grad(&bn.shift);
            let cg = ops::conv3d_backward(&c.input, &b.kernel, b.padding(), &bn.input)?;
            b.kernel.accumulate_grad(&cg.kernel);
            b.bias.accumulate_grad(&cg.bias);
            dx = cg.input;
        }
        Ok(dx)
    }

    /// Replicates the first-layer kernels across `target_channels` input
    /// channels, divided by the channel count, so that a channel-replicated
    /// input reproduces the single-channel activations.
    pub fn inflate(&self, target_channels: usize) -> Result<Network> {
        if self.config.in_channels != 1 {
            return Err(Error::Invalid(format!(
                "inflation needs a single-channel source model, got {} input channels",
                self.config.in_channels
            )));
        }
        if !(2..=3).contains(&target_channels) {
            return Err(Error::Invalid(format!(
                "inflation target must be 2 or 3 channels, got {target_channels}"
            )));
        }
        let mut out = self.clone();
        out.config.in_channels = target_channels;
        let first = &self.blocks[0].kernel;
        let (o, _, kt, kh, kw) = first.dims5()?;
        let vol = kt * kh * kw;
        let mut data = Vec::with_capacity(o * target_channels * vol);
        for oc in 0..o {
            let src = &first.data()[oc * vol..(oc + 1) * vol];
            for _ in 0..target_channels {
                data.extend(src.iter().map(|v| v / target_channels as f64));
            }
        }
        out.blocks[0].kernel = Tensor::from_vec(&[o, target_channels, kt, kh, kw], data)?;
        out.zero_grad();
        Ok(out)
    }
}

fn dense_relu_dropout<R: Rng + ?Sized>(
    layer: &Dense,
    x: &Tensor,
    p: f64,
    rng: &mut R,
) -> Result<(Tensor, Option<DropoutMask>, Tensor)> {
    let mut y = layer.forward(x)?;
    ops::relu_inplace(&mut y);
    let relu = y.clone();
    let mask = if p > 0.0 {
        Some(ops::dropout_linear(&mut y, p, rng)?)
    } else {
        None
    };
    Ok((relu, mask, y))
}

fn dense_relu_dropout_backward(
    layer: &mut Dense,
    x: &Tensor,
    relu_out: &Tensor,
    mask: Option<&DropoutMask>,
    mut grad: Tensor,
) -> Result<Tensor> {
    if let Some(m) = mask {
        m.apply(&mut grad);
    }
    ops::relu_backward(relu_out, &mut grad);
    layer.backward(x, &grad)
}

fn add_into(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
}

/// `N x C x T x H x W` -> `(N*T) x (C*H*W)`, rows ordered video-major.
fn to_frame_rows(x: &Tensor) -> Result<Tensor> {
    let (n, c, t, h, w) = x.dims5()?;
    let plane = h * w;
    let feat = c * plane;
    let mut out = vec![0.0; n * t * feat];
    let d = x.data();
    for s in 0..n {
        for ch in 0..c {
            for f in 0..t {
                let src = ((s * c + ch) * t + f) * plane;
                let dst = (s * t + f) * feat + ch * plane;
                out[dst..dst + plane].copy_from_slice(&d[src..src + plane]);
            }
        }
    }
    Tensor::from_vec(&[n * t, feat], out)
}

fn from_frame_rows(rows: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let mut x = Tensor::zeros(shape);
    let (n, c, t, h, w) = x.dims5()?;
    let plane = h * w;
    let feat = c * plane;
    if rows.shape() != [n * t, feat] {
        return Err(Error::shape("unflatten", rows.shape(), shape));
    }
    let r = rows.data();
    let d = x.data_mut();
    for s in 0..n {
        for ch in 0..c {
            for f in 0..t {
                let dst = ((s * c + ch) * t + f) * plane;
                let src = (s * t + f) * feat + ch * plane;
                d[dst..dst + plane].copy_from_slice(&r[src..src + plane]);
            }
        }
    }
    Ok(x)
}

/// `(N*T) x D` rows -> `T` matrices of `N x D`.
fn split_steps(rows: &Tensor, n: usize, t: usize) -> Result<Vec<Tensor>> {
    let (_, d) = rows.dims2()?;
    (0..t)
        .map(|f| {
            let mut m = Vec::with_capacity(n * d);
            for s in 0..n {
                let r = (s * t + f) * d;
                m.extend_from_slice(&rows.data()[r..r + d]);
            }
            Tensor::from_vec(&[n, d], m)
        })
        .collect()
}

fn merge_steps<'a>(steps: impl Iterator<Item = &'a Tensor>, n: usize, t: usize) -> Result<Tensor> {
    let mut out: Vec<f64> = Vec::new();
    let mut d = 0;
    for (f, m) in steps.enumerate() {
        let (_, dd) = m.dims2()?;
        if out.is_empty() {
            d = dd;
            out = vec![0.0; n * t * d];
        }
        for s in 0..n {
            let r = (s * t + f) * d;
            out[r..r + d].copy_from_slice(&m.data()[s * d..(s + 1) * d]);
        }
    }
    Tensor::from_vec(&[n * t, d], out)
}

fn split_outputs(gpm: &[f64], probs: &Tensor, n: usize, t: usize) -> Vec<ModelOutput> {
    let k = probs.shape()[1];
    (0..n)
        .map(|s| {
            let g = gpm[s * t..(s + 1) * t].to_vec();
            let p = (0..t)
                .map(|f| {
                    let r = (s * t + f) * k;
                    probs.data()[r..r + k].to_vec()
                })
                .collect();
            ModelOutput::new(g, p)
        })
        .collect()
}

/// Frame-at-a-time eval-mode inference carrying the causal conv history and
/// the recurrent state.
#[derive(Debug, Clone)]
pub struct EncoderStream {
    history: Vec<VecDeque<Tensor>>,
    hidden: Tensor,
    frames_seen: usize,
}

impl EncoderStream {
    pub fn new(net: &Network) -> Self {
        let history = net
            .blocks
            .iter()
            .scan(
                (net.config.in_channels, net.config.height, net.config.width),
                |(c, h, w), b| {
                    let past = b.temporal_kernel() - 1;
                    let frames = (0..past).map(|_| Tensor::zeros(&[*c, *h, *w])).collect();
                    *c = b.kernel.shape()[0];
                    *h /= 2;
                    *w /= 2;
                    Some(frames)
                },
            )
            .collect();
        EncoderStream {
            history,
            hidden: Tensor::zeros(&[1, net.config.recurrent_units]),
            frames_seen: 0,
        }
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Consumes one `C x H x W` frame. On a shape error the stream state is
    /// left untouched.
    pub fn step(&mut self, net: &Network, frame: &Tensor) -> Result<(f64, Vec<f64>)> {
        let cfg = &net.config;
        let expected = [cfg.in_channels, cfg.height, cfg.width];
        if frame.shape() != expected {
            return Err(Error::shape("stream frame", frame.shape(), &expected));
        }
        let mut x = frame.clone();
        let mut updates = Vec::with_capacity(net.blocks.len());
        for (b, hist) in net.blocks.iter().zip(&self.history) {
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let kt = b.temporal_kernel();
            let mut window = Vec::with_capacity(c * kt * h * w);
            let plane = h * w;
            for ch in 0..c {
                for past in hist.iter().chain(std::iter::once(&x)) {
                    window.extend_from_slice(&past.data()[ch * plane..(ch + 1) * plane]);
                }
            }
            let input = Tensor::from_vec(&[1, c, kt, h, w], window)?;
            let pad = Padding3 {
                t: (0, 0),
                ..b.padding()
            };
            let y = b.eval(&input, pad)?;
            let (_, oc, _, oh, ow) = y.dims5()?;
            updates.push(x);
            x = y.reshape(&[oc, oh, ow])?;
        }
        let flat = x.reshape(&[1, cfg.flat_features()])?;
        let mut h = net.fc1.forward(&flat)?;
        ops::relu_inplace(&mut h);
        let mut h2 = net.fc2.forward(&h)?;
        ops::relu_inplace(&mut h2);
        let features = match &net.temporal {
            Temporal::Gru(p) => ops::gru_step(&h2, &self.hidden, p)?.hidden,
            Temporal::Linear(d) => d.forward(&h2)?,
        };
        let (gpm, probs) = net.heads(&features)?;

        for (hist, frame) in self.history.iter_mut().zip(updates) {
            if hist.is_empty() {
                continue;
            }
            hist.pop_front();
            hist.push_back(frame);
        }
        if matches!(net.temporal, Temporal::Gru(_)) {
            self.hidden = features;
        }
        self.frames_seen += 1;
        Ok((gpm[0], probs.into_data()))
    }
}
