//! Central finite differences against the hand-written backward passes.
//! Every check builds a scalar loss `sum(R * out)` with a random `R`, so the
//! analytic input to each backward is just `R`.

use earlygest::model::{ModelConfig, Network, Variant};
use earlygest::objectives::{class_loss, class_loss_grad, gpm_loss, gpm_loss_grad};
use earlygest::ops::{self, GruParams, Padding3, RunningStats};
use earlygest::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const OP_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-6;

/// Error normalized so that large gradients are compared relatively and
/// small ones absolutely.
pub fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::uniform(shape, 1.0, rng)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Largest error over every coordinate of `x`.
fn check_all(x: &Tensor, analytic: &[f64], f: impl Fn(&Tensor) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut up = x.clone();
        up.data_mut()[i] += STEP;
        let mut down = x.clone();
        down.data_mut()[i] -= STEP;
        let numeric = (f(&up) - f(&down)) / (2.0 * STEP);
        worst = worst.max(scaled_error(analytic[i], numeric));
    }
    worst
}

fn conv_case(seed: u64, causal: bool) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, o) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..4));
    let (t, h, w) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..6));
    let (kt, kh, kw) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
    let pad = if causal {
        Padding3::causal(kt, kh, kw)
    } else {
        Padding3::symmetric(kt / 2, kh / 2, kw / 2)
    };
    let x = rand_tensor(&[n, c, t, h, w], &mut rng);
    let k = rand_tensor(&[o, c, kt, kh, kw], &mut rng);
    let b = rand_tensor(&[o], &mut rng);
    let y = ops::conv3d(&x, &k, b.data(), pad).unwrap();
    let r = rand_tensor(y.shape(), &mut rng);
    let g = ops::conv3d_backward(&x, &k, pad, &r).unwrap();
    let ex = check_all(&x, g.input.data(), |x| dot(&ops::conv3d(x, &k, b.data(), pad).unwrap(), &r));
    let ek = check_all(&k, &g.kernel, |k| dot(&ops::conv3d(&x, k, b.data(), pad).unwrap(), &r));
    let eb = check_all(&b, &g.bias, |b| dot(&ops::conv3d(&x, &k, b.data(), pad).unwrap(), &r));
    ex.max(ek).max(eb)
}

fn maxpool_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c, t) = (rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..4));
    let (h, w) = (2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4));
    // Distinct values spaced far wider than the step, so no window is
    // within reach of a tie.
    let len = n * c * t * h * w;
    let mut vals: Vec<f64> = (0..len).map(|i| i as f64 * 0.01).collect();
    for i in (1..len).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let x = Tensor::from_vec(&[n, c, t, h, w], vals).unwrap();
    let p = ops::maxpool3d_spatial(&x).unwrap();
    let r = rand_tensor(p.output.shape(), &mut rng);
    let dx = ops::maxpool3d_spatial_backward(x.shape(), &p.argmax, &r).unwrap();
    check_all(&x, dx.data(), |x| dot(&ops::maxpool3d_spatial(x).unwrap().output, &r))
}

fn batchnorm_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, c) = (rng.gen_range(1..3), rng.gen_range(1..4));
    let (t, h, w) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(2..4));
    let x = rand_tensor(&[n, c, t, h, w], &mut rng);
    let scale = rand_tensor(&[c], &mut rng);
    let shift = rand_tensor(&[c], &mut rng);
    let run = |x: &Tensor, s: &Tensor, b: &Tensor| {
        ops::batchnorm_train(x, s.data(), b.data(), &mut RunningStats::new(c)).unwrap()
    };
    let (y, cache) = run(&x, &scale, &shift);
    let r = rand_tensor(y.shape(), &mut rng);
    let g = ops::batchnorm_backward(&cache, scale.data(), &r).unwrap();
    let ex = check_all(&x, g.input.data(), |x| dot(&run(x, &scale, &shift).0, &r));
    let es = check_all(&scale, &g.scale, |s| dot(&run(&x, s, &shift).0, &r));
    let eb = check_all(&shift, &g.shift, |b| dot(&run(&x, &scale, b).0, &r));
    ex.max(es).max(eb)
}

fn linear_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, fan_in, out) = (rng.gen_range(1..5), rng.gen_range(1..6), rng.gen_range(1..5));
    let x = rand_tensor(&[rows, fan_in], &mut rng);
    let w = rand_tensor(&[fan_in, out], &mut rng);
    let b = rand_tensor(&[out], &mut rng);
    let r = rand_tensor(&[rows, out], &mut rng);
    let g = ops::linear_backward(&x, &w, &r).unwrap();
    let ex = check_all(&x, g.input.data(), |x| dot(&ops::linear(x, &w, b.data()).unwrap(), &r));
    let ew = check_all(&w, &g.weight, |w| dot(&ops::linear(&x, w, b.data()).unwrap(), &r));
    let eb = check_all(&b, &g.bias, |b| dot(&ops::linear(&x, &w, b.data()).unwrap(), &r));
    ex.max(ew).max(eb)
}

fn softmax_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, k) = (rng.gen_range(1..5), rng.gen_range(2..7));
    let z = Tensor::uniform(&[rows, k], 4.0, &mut rng);
    let r = rand_tensor(&[rows, k], &mut rng);
    let p = ops::softmax_rows(&z).unwrap();
    let dz = ops::softmax_rows_backward(&p, &r).unwrap();
    check_all(&z, dz.data(), |z| dot(&ops::softmax_rows(z).unwrap(), &r))
}

fn pointwise_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::uniform(&[12], 5.0, &mut rng);
    let r = rand_tensor(&[12], &mut rng);
    let sig = |x: &Tensor| Tensor::from_vec(&[12], x.data().iter().map(|v| ops::sigmoid(*v)).collect()).unwrap();
    let th = |x: &Tensor| Tensor::from_vec(&[12], x.data().iter().map(|v| v.tanh()).collect()).unwrap();
    let mut ds = r.data().to_vec();
    ops::sigmoid_backward(sig(&x).data(), &mut ds);
    let mut dt = r.data().to_vec();
    ops::tanh_backward(th(&x).data(), &mut dt);
    let es = check_all(&x, &ds, |x| dot(&sig(x), &r));
    let et = check_all(&x, &dt, |x| dot(&th(x), &r));
    // ReLU away from its kink.
    let shifted = Tensor::from_vec(
        &[12],
        x.data().iter().map(|v| if v.abs() < 0.01 { v + 0.02 } else { *v }).collect(),
    )
    .unwrap();
    let relu = |x: &Tensor| {
        let mut y = x.clone();
        ops::relu_inplace(&mut y);
        y
    };
    let mut dr = r.clone();
    ops::relu_backward(&relu(&shifted), &mut dr);
    let er = check_all(&shifted, dr.data(), |x| dot(&relu(x), &r));
    es.max(et).max(er)
}

fn gru_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, fan_in, units, steps) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..6));
    let params = GruParams::init(fan_in, units, &mut rng);
    let inputs: Vec<Tensor> = (0..steps).map(|_| rand_tensor(&[batch, fan_in], &mut rng)).collect();
    let rs: Vec<Tensor> = (0..steps).map(|_| rand_tensor(&[batch, units], &mut rng)).collect();
    let loss = |inputs: &[Tensor], p: &GruParams| -> f64 {
        ops::gru_sequence(inputs, p)
            .unwrap()
            .iter()
            .zip(&rs)
            .map(|(s, r)| dot(&s.hidden, r))
            .sum()
    };
    let states = ops::gru_sequence(&inputs, &params).unwrap();
    let mut grads = params.clone();
    let d_inputs = ops::gru_sequence_backward(&states, &mut grads, &rs).unwrap();

    let mut worst: f64 = 0.0;
    for t in 0..steps {
        let e = check_all(&inputs[t], d_inputs[t].data(), |x| {
            let mut v = inputs.clone();
            v[t] = x.clone();
            loss(&v, &params)
        });
        worst = worst.max(e);
    }
    type Field = fn(&mut GruParams) -> &mut Tensor;
    let fields: [Field; 6] = [
        |p| &mut p.uz,
        |p| &mut p.ur,
        |p| &mut p.uh,
        |p| &mut p.wz,
        |p| &mut p.wr,
        |p| &mut p.wh,
    ];
    for field in fields {
        let analytic = field(&mut grads).grad().expect("gru grad").to_vec();
        let base = field(&mut params.clone()).clone();
        let e = check_all(&base, &analytic, |w| {
            let mut p = params.clone();
            *field(&mut p) = w.clone();
            loss(&inputs, &p)
        });
        worst = worst.max(e);
    }
    worst
}

fn loss_case(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t, k) = (rng.gen_range(1..8), rng.gen_range(2..6));
    let pred = rand_tensor(&[t], &mut rng);
    let target: Vec<f64> = (0..t).map(|_| rng.gen()).collect();
    let g = gpm_loss_grad(pred.data(), &target).unwrap();
    let eg = check_all(&pred, &g, |p| gpm_loss(p.data(), &target).unwrap());

    let probs = Tensor::from_vec(&[t, k], (0..t * k).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..t).map(|_| rng.gen_range(0..k)).collect();
    let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.5..2.0)).collect();
    let rows = |p: &Tensor| p.data().chunks(k).map(|c| c.to_vec()).collect::<Vec<_>>();
    let gc: Vec<f64> = class_loss_grad(&rows(&probs), &labels, &weights).unwrap().concat();
    let ec = check_all(&probs, &gc, |p| class_loss(&rows(p), &labels, &weights).unwrap());
    eg.max(ec)
}

/// Worst error per op family over `seeds` random cases each.
pub fn op_errors(seeds: std::ops::Range<u64>) -> Vec<(&'static str, f64)> {
    let cases: [(&str, fn(u64) -> f64); 9] = [
        ("conv3d causal", |s| conv_case(s, true)),
        ("conv3d symmetric", |s| conv_case(s, false)),
        ("maxpool3d", maxpool_case),
        ("batchnorm", batchnorm_case),
        ("linear", linear_case),
        ("softmax", softmax_case),
        ("pointwise", pointwise_case),
        ("gru bptt", gru_case),
        ("losses", loss_case),
    ];
    cases
        .iter()
        .map(|(name, f)| (*name, seeds.clone().map(f).fold(0.0, f64::max)))
        .collect()
}

pub struct NetworkCheck {
    pub worst: f64,
    pub checked: usize,
    /// Coordinates where halving the step moved the estimate: a ReLU or
    /// max-pool switch sits inside the stencil, so the loss is not
    /// differentiable there.
    pub skipped: usize,
}

fn tiny_config(variant: Variant, channels: usize) -> ModelConfig {
    ModelConfig {
        in_channels: channels,
        height: 8,
        width: 8,
        conv_widths: vec![2, 3],
        linear_width: 6,
        recurrent_units: 4,
        num_classes: 3,
        conv_dropout: 0.2,
        linear_dropout: 0.3,
        ..ModelConfig::desk(3)
    }
    .with_variant(variant)
}

/// Full multitask loss for one batch: per-video GPM error plus weighted
/// cross-entropy, summed over videos.
struct Batch {
    input: Tensor,
    targets: Vec<Vec<f64>>,
    labels: Vec<Vec<usize>>,
    weights: Vec<f64>,
    lambda: f64,
    mask_seed: u64,
}

impl Batch {
    fn loss(&self, net: &mut Network, input: &Tensor) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.mask_seed);
        let (outs, _) = net.forward_train(input, &mut rng).unwrap();
        outs.iter()
            .enumerate()
            .map(|(i, o)| {
                gpm_loss(&o.gpm, &self.targets[i]).unwrap()
                    + self.lambda * class_loss(&o.probs, &self.labels[i], &self.weights).unwrap()
            })
            .sum()
    }

    /// `at(net, d)` moves one coordinate to `base + d` and returns the input
    /// to run; `d = 0` restores it.
    fn numeric(&self, net: &mut Network, h: f64, at: &impl Fn(&mut Network, f64) -> Tensor) -> f64 {
        let up = at(net, h);
        let lu = self.loss(net, &up);
        let down = at(net, -h);
        let ld = self.loss(net, &down);
        at(net, 0.0);
        (lu - ld) / (2.0 * h)
    }
}

/// One seed of the end-to-end check on a tiny network with dropout active
/// (masks replayed from a fixed seed).
pub fn network_case(seed: u64) -> NetworkCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant = [Variant::Conv3dGru, Variant::Conv3dLinear, Variant::Conv2dGru][seed as usize % 3];
    let channels = [1, 3][(seed / 3) as usize % 2];
    let cfg = tiny_config(variant, channels);
    let k = cfg.output_classes();
    let mut net = Network::new(cfg, &mut rng).unwrap();
    let (n, t) = (2, 4);
    let batch = Batch {
        input: rand_tensor(&[n, channels, t, 8, 8], &mut rng),
        targets: (0..n).map(|_| (0..t).map(|_| rng.gen()).collect()).collect(),
        labels: (0..n).map(|_| (0..t).map(|_| rng.gen_range(0..k)).collect()).collect(),
        weights: (0..k).map(|_| rng.gen_range(0.5..2.0)).collect(),
        lambda: rng.gen_range(0.5..2.0),
        mask_seed: rng.gen(),
    };

    net.zero_grad();
    let mut mask_rng = ChaCha8Rng::seed_from_u64(batch.mask_seed);
    let (outs, cache) = net.forward_train(&batch.input, &mut mask_rng).unwrap();
    let mut d_gpm = Vec::new();
    let mut d_probs = Vec::new();
    for (i, o) in outs.iter().enumerate() {
        d_gpm.extend(gpm_loss_grad(&o.gpm, &batch.targets[i]).unwrap());
        for row in class_loss_grad(&o.probs, &batch.labels[i], &batch.weights).unwrap() {
            d_probs.extend(row.iter().map(|g| g * batch.lambda));
        }
    }
    let d_input = net.backward(&cache, &d_gpm, &d_probs).unwrap();

    let mut report = NetworkCheck {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut record = |analytic: f64, coarse: f64, fine: f64| {
        if scaled_error(coarse, fine) > 1e-6 {
            report.skipped += 1;
            return;
        }
        report.checked += 1;
        report.worst = report.worst.max(scaled_error(analytic, fine));
    };

    let h = 1e-5;
    let grads: Vec<Vec<f64>> = net
        .params_mut()
        .into_iter()
        .map(|p| p.grad().map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();
    for (pi, grad) in grads.iter().enumerate() {
        let picks: Vec<usize> = if grad.len() <= 6 {
            (0..grad.len()).collect()
        } else {
            (0..6).map(|_| rng.gen_range(0..grad.len())).collect()
        };
        for j in picks {
            let base = net.params_mut()[pi].data()[j];
            let at = |net: &mut Network, d: f64| {
                net.params_mut()[pi].data_mut()[j] = base + d;
                batch.input.clone()
            };
            let coarse = batch.numeric(&mut net, h, &at);
            let fine = batch.numeric(&mut net, h / 2.0, &at);
            record(grad[j], coarse, fine);
        }
    }
    for _ in 0..8 {
        let j = rng.gen_range(0..batch.input.len());
        let at = |_: &mut Network, d: f64| {
            let mut x = batch.input.clone();
            x.data_mut()[j] += d;
            x
        };
        let coarse = batch.numeric(&mut net, h, &at);
        let fine = batch.numeric(&mut net, h / 2.0, &at);
        record(d_input.data()[j], coarse, fine);
    }
    report
}

pub fn network_errors(seeds: std::ops::Range<u64>) -> NetworkCheck {
    let mut total = NetworkCheck {
        worst: 0.0,
        checked: 0,
        skipped: 0,
    };
    for s in seeds {
        let r = network_case(s);
        total.worst = total.worst.max(r.worst);
        total.checked += r.checked;
        total.skipped += r.skipped;
    }
    total
}
