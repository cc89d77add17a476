//! Nested-loop and counting oracles, each run on fuzzed instances. A check
//! reports how many instances disagreed with the library.

use earlygest::annotation::{FrameAnnotation, NO_GESTURE};
use earlygest::detector::{classify_consensus, classify_peak};
use earlygest::metrics::{
    jaccard, jaccard_by_class, label_segments, nttd, operating_point, roc_auc, score_roc, threshold_grid,
    ROC_GRID_POINTS,
};
use earlygest::model::ModelOutput;
use earlygest::ops::{self, Padding3};
use earlygest::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: usize = 1000;
pub const AUC_TOLERANCE: f64 = 0.01;

#[derive(Debug, Default)]
pub struct Outcome {
    pub instances: usize,
    pub mismatches: usize,
    /// Largest deviation seen, for checks with a tolerance.
    pub worst: f64,
    pub first_failure: Option<String>,
}

impl Outcome {
    fn record(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.instances += 1;
        if !ok {
            self.mismatches += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(what());
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.mismatches == 0
    }
}

fn rng_for(check: u64, i: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(check << 32 | i as u64)
}

/// Small integers keep every sum exact, so equality is bitwise.
fn int_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-4..=4) as f64).collect()).unwrap()
}

fn conv_oracle(x: &Tensor, k: &Tensor, b: &[f64], pad: Padding3) -> Vec<f64> {
    let xs = x.shape();
    let ks = k.shape();
    let (n, c, t, h, w) = (xs[0], xs[1], xs[2], xs[3], xs[4]);
    let (o, kt, kh, kw) = (ks[0], ks[2], ks[3], ks[4]);
    let ot = t + pad.t.0 + pad.t.1 + 1 - kt;
    let oh = h + pad.h.0 + pad.h.1 + 1 - kh;
    let ow = w + pad.w.0 + pad.w.1 + 1 - kw;
    let xv = |ni, ci, ti, hi, wi| x.data()[(((ni * c + ci) * t + ti) * h + hi) * w + wi];
    let kv = |oi, ci, a, bb, cc| k.data()[(((oi * c + ci) * kt + a) * kh + bb) * kw + cc];
    let mut out = Vec::new();
    for ni in 0..n {
        for oi in 0..o {
            for z in 0..ot {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut s = b[oi];
                        for ci in 0..c {
                            for a in 0..kt {
                                for bb in 0..kh {
                                    for cc in 0..kw {
                                        let ti = (z + a) as isize - pad.t.0 as isize;
                                        let hi = (y + bb) as isize - pad.h.0 as isize;
                                        let wi = (xx + cc) as isize - pad.w.0 as isize;
                                        if ti < 0 || hi < 0 || wi < 0 {
                                            continue;
                                        }
                                        let (ti, hi, wi) = (ti as usize, hi as usize, wi as usize);
                                        if ti >= t || hi >= h || wi >= w {
                                            continue;
                                        }
                                        s += xv(ni, ci, ti, hi, wi) * kv(oi, ci, a, bb, cc);
                                    }
                                }
                            }
                        }
                        out.push(s);
                    }
                }
            }
        }
    }
    out
}

pub fn conv3d(instances: usize) -> Outcome {
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(1, i);
        let (n, c, o) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let (kt, kh, kw): (usize, usize, usize) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let mut p = || (rng.gen_range(0..3usize), rng.gen_range(0..3usize));
        let pad = Padding3 { t: p(), h: p(), w: p() };
        // Keep every output extent positive.
        let t = rng.gen_range(kt.saturating_sub(pad.t.0 + pad.t.1).max(1)..kt + 4);
        let h = rng.gen_range(kh.saturating_sub(pad.h.0 + pad.h.1).max(1)..kh + 4);
        let w = rng.gen_range(kw.saturating_sub(pad.w.0 + pad.w.1).max(1)..kw + 4);
        let x = int_tensor(&[n, c, t, h, w], &mut rng);
        let k = int_tensor(&[o, c, kt, kh, kw], &mut rng);
        let b: Vec<f64> = (0..o).map(|_| rng.gen_range(-4..=4) as f64).collect();
        let got = ops::conv3d(&x, &k, &b, pad).unwrap();
        let want = conv_oracle(&x, &k, &b, pad);
        res.record(got.data() == want.as_slice(), || format!("instance {i}: shape {:?} pad {pad:?}", x.shape()));
    }
    res
}

pub fn maxpool3d(instances: usize) -> Outcome {
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(2, i);
        let (n, c, t) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let (h, w) = (2 * rng.gen_range(1..5), 2 * rng.gen_range(1..5));
        // Values from a tiny range so ties are common.
        let x = Tensor::from_vec(
            &[n, c, t, h, w],
            (0..n * c * t * h * w).map(|_| rng.gen_range(0..4) as f64).collect(),
        )
        .unwrap();
        let got = ops::maxpool3d_spatial(&x).unwrap();
        let (mut vals, mut idx) = (Vec::new(), Vec::new());
        for plane in 0..n * c * t {
            for y in 0..h / 2 {
                for xx in 0..w / 2 {
                    let mut best = None;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let at = plane * h * w + (2 * y + dy) * w + 2 * xx + dx;
                            if best.map_or(true, |b: usize| x.data()[at] > x.data()[b]) {
                                best = Some(at);
                            }
                        }
                    }
                    let b = best.unwrap();
                    vals.push(x.data()[b]);
                    idx.push(b);
                }
            }
        }
        res.record(got.output.data() == vals.as_slice() && got.argmax == idx, || {
            format!("instance {i}: shape {:?}", x.shape())
        });
    }
    res
}

pub fn nttd_counts(instances: usize) -> Outcome {
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(3, i);
        let s = rng.gen_range(0..40);
        let e = s + rng.gen_range(0..30);
        let trigger = rng.gen_range(0..e + 10);
        let a = FrameAnnotation::new("v", 1, s, e);
        let seen = (s..=e).filter(|f| *f <= trigger).count();
        let total = (s..=e).count();
        let want = (s..=e).contains(&trigger).then(|| seen as f64 / total as f64);
        let got = nttd(trigger, &a);
        res.record(got == want, || format!("segment {s}..={e} trigger {trigger}: {got:?} vs {want:?}"));
    }
    res
}

/// Random per-frame output: GPM in [0, 1] (coarse, so ties and threshold
/// hits happen) and probabilities that sometimes favour background.
fn random_output(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> ModelOutput {
    let gpm: Vec<f64> = (0..frames).map(|_| rng.gen_range(0..=20) as f64 / 20.0).collect();
    let probs: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..=classes).map(|_| rng.gen_range(0..8) as f64 + 0.5).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter().map(|v| v / sum).collect()
        })
        .collect();
    ModelOutput::new(gpm, probs)
}

fn random_segments(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> Vec<FrameAnnotation> {
    let mut segs = Vec::new();
    let mut t = rng.gen_range(0..4);
    while t + 1 < frames && segs.len() < 3 {
        let e = (t + rng.gen_range(0..8)).min(frames - 1);
        segs.push(FrameAnnotation::new("v", rng.gen_range(1..=classes), t, e));
        t = e + 1 + rng.gen_range(1..6);
    }
    segs
}

fn first_max(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Online detection written out frame by frame: trigger state machine,
/// region claims by walking outwards from each trigger, and counting.
struct Brute {
    tp: u64,
    gesture: u64,
    fp: u64,
    background: u64,
    nttd_sum: f64,
    recognized: usize,
    false_events: usize,
}

fn brute_online(outputs: &[ModelOutput], annotations: &[Vec<FrameAnnotation>], eps: f64, refr: usize) -> Brute {
    let mut b = Brute {
        tp: 0,
        gesture: 0,
        fp: 0,
        background: 0,
        nttd_sum: 0.0,
        recognized: 0,
        false_events: 0,
    };
    for (out, segs) in outputs.iter().zip(annotations) {
        let frames = out.gpm.len();
        let gesture_class = |t: usize| 1 + first_max(&out.probs[t][1..]);
        let is_gesture_frame = |t: usize| first_max(&out.probs[t]) != NO_GESTURE;

        let mut triggers = Vec::new();
        let (mut armed, mut last_fire): (bool, Option<usize>) = (true, None);
        for t in 0..frames {
            let cooled = last_fire.map_or(true, |f| t >= f + refr);
            if !armed && cooled && out.gpm[t] < eps / 2.0 {
                armed = true;
            }
            if armed && out.gpm[t] > eps {
                triggers.push(t);
                armed = false;
                last_fire = Some(t);
            }
        }

        let mut pred = vec![NO_GESTURE; frames];
        for &f in &triggers {
            let (mut s, mut e) = (f, f);
            if is_gesture_frame(f) {
                while s > 0 && is_gesture_frame(s - 1) {
                    s -= 1;
                }
                while e + 1 < frames && is_gesture_frame(e + 1) {
                    e += 1;
                }
            }
            for p in pred.iter_mut().take(e + 1).skip(s) {
                *p = gesture_class(f);
            }
        }
        for t in 0..frames {
            let truth = segs
                .iter()
                .find(|a| a.start_frame <= t && t <= a.end_frame)
                .map_or(NO_GESTURE, |a| a.class_id);
            if truth == NO_GESTURE {
                b.background += 1;
                b.fp += u64::from(pred[t] != NO_GESTURE);
            } else {
                b.gesture += 1;
                b.tp += u64::from(pred[t] == truth);
            }
        }
        for &f in &triggers {
            if !segs.iter().any(|a| a.start_frame <= f && f <= a.end_frame) {
                b.false_events += 1;
            }
        }
        for a in segs {
            if let Some(&f) = triggers.iter().find(|&&f| a.start_frame <= f && f <= a.end_frame) {
                if gesture_class(f) == a.class_id {
                    b.recognized += 1;
                    let seen = (a.start_frame..=f).count();
                    let total = (a.start_frame..=a.end_frame).count();
                    b.nttd_sum += seen as f64 / total as f64;
                }
            }
        }
    }
    b
}

pub fn rates(instances: usize) -> Outcome {
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(4, i);
        let classes = rng.gen_range(1..5);
        let videos = rng.gen_range(1..5);
        let mut outputs = Vec::new();
        let mut annotations = Vec::new();
        for _ in 0..videos {
            let frames = rng.gen_range(1..30);
            outputs.push(random_output(&mut rng, frames, classes));
            annotations.push(random_segments(&mut rng, frames, classes));
        }
        let eps = rng.gen_range(0..=20) as f64 / 20.0;
        let refr = rng.gen_range(0..6);
        let got = operating_point(&outputs, &annotations, eps, refr).unwrap();
        let b = brute_online(&outputs, &annotations, eps, refr);
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let mean = (b.recognized > 0).then(|| b.nttd_sum / b.recognized as f64);
        let ok = got.tpr == ratio(b.tp, b.gesture)
            && got.fpr == ratio(b.fp, b.background)
            && got.mean_nttd == mean
            && got.recognized == b.recognized
            && got.false_events == b.false_events;
        res.record(ok, || format!("instance {i}: {got:?} vs tp {}/{} fp {}/{} nttd {mean:?}", b.tp, b.gesture, b.fp, b.background));
    }
    res
}

pub fn jaccard_index(instances: usize) -> Outcome {
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(5, i);
        let frames = rng.gen_range(1..40);
        let classes = rng.gen_range(1..5);
        let labels = |rng: &mut ChaCha8Rng| -> Vec<usize> {
            let mut v = Vec::with_capacity(frames);
            while v.len() < frames {
                let c = if rng.gen_bool(0.4) { NO_GESTURE } else { rng.gen_range(1..=classes) };
                for _ in 0..rng.gen_range(1..8) {
                    v.push(c);
                }
            }
            v.truncate(frames);
            v
        };
        let (pred, gt) = (labels(&mut rng), labels(&mut rng));
        let mut want = Vec::new();
        for c in 1..=classes {
            let both = (0..frames).filter(|&t| pred[t] == c && gt[t] == c).count();
            let either = (0..frames).filter(|&t| pred[t] == c || gt[t] == c).count();
            if either > 0 {
                want.push((c, both as f64 / either as f64));
            }
        }
        let mean = (!want.is_empty()).then(|| want.iter().map(|w| w.1).sum::<f64>() / want.len() as f64);
        let (ps, gs) = (label_segments(&pred), label_segments(&gt));
        let got: Vec<(usize, f64)> = jaccard_by_class(&ps, &gs).into_iter().collect();
        let got_mean = jaccard(&ps, &gs);
        res.record(got == want && got_mean == mean, || format!("instance {i}: {got:?} vs {want:?}"));
    }
    res
}

/// Consensus over GPM-selected frames against a direct vote, and the global
/// vote (`None`, or `tau = 0` with positive GPM) against summing every frame.
pub fn consensus(instances: usize) -> Outcome {
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(6, i);
        let classes = rng.gen_range(1..6);
        let frames = rng.gen_range(1..30);
        let out = random_output(&mut rng, frames, classes);
        let vote = |frames: &[usize]| {
            let mut sum = vec![0.0; classes + 1];
            for &t in frames {
                for (s, p) in sum.iter_mut().zip(&out.probs[t]) {
                    *s += p;
                }
            }
            1 + first_max(&sum[1..])
        };
        let all: Vec<usize> = (0..frames).collect();
        let global = vote(&all);
        let peak = first_max(&out.gpm);
        let max = out.gpm[peak];
        let tau = rng.gen_range(0..20) as f64 / 20.0;
        let chosen: Vec<usize> = all.iter().copied().filter(|&t| out.gpm[t] > tau * max).collect();
        let want_tau = if chosen.is_empty() { global } else { vote(&chosen) };

        let mut ok = classify_consensus(&out, None).unwrap() == global
            && classify_consensus(&out, Some(tau)).unwrap() == want_tau
            && classify_consensus(&out, Some(1.0)).unwrap() == vote(&[peak])
            && classify_peak(&out).unwrap() == vote(&[peak]);
        if out.gpm.iter().all(|g| *g > 0.0) {
            ok &= classify_consensus(&out, Some(0.0)).unwrap() == global;
        }
        res.record(ok, || format!("instance {i}: tau {tau} gpm {:?}", out.gpm));
    }
    res
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half, by comparing every pair.
pub fn mann_whitney(scores: &[f64], positive: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (a, pa) in scores.iter().zip(positive) {
        for (b, pb) in scores.iter().zip(positive) {
            if *pa && !*pb {
                pairs += 1.0;
                if a > b {
                    wins += 1.0;
                } else if a == b {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn clamp_quantized(v: f64, quantize: bool) -> f64 {
    let v = v.clamp(0.0, 1.0);
    if quantize {
        (v * 20.0).round() / 20.0
    } else {
        v
    }
}

fn labelled_scores(rng: &mut ChaCha8Rng, mut draw: impl FnMut(&mut ChaCha8Rng, bool) -> f64) -> (Vec<f64>, Vec<bool>) {
    let (pos, neg) = (rng.gen_range(30..200), rng.gen_range(30..200));
    let positive: Vec<bool> = (0..pos + neg).map(|k| k < pos).collect();
    let scores = positive.iter().map(|&p| draw(rng, p)).collect();
    (scores, positive)
}

/// AUC from the standard threshold grid against the pairwise estimate, for
/// scores with bounded density (uniform spans at least 0.2 wide, optionally
/// snapped to multiples of 0.05 so exact ties occur).
pub fn auc(instances: usize) -> Outcome {
    let grid = threshold_grid(ROC_GRID_POINTS);
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(7, i);
        let span = |rng: &mut ChaCha8Rng| {
            let w = rng.gen_range(0.2..1.0);
            (rng.gen_range(-0.2..1.0 - w + 0.2), w)
        };
        let ((lp, wp), (ln, wn)) = (span(&mut rng), span(&mut rng));
        let quantize = rng.gen_bool(0.3);
        let (scores, positive) = labelled_scores(&mut rng, |rng, p| {
            let (lo, w) = if p { (lp, wp) } else { (ln, wn) };
            clamp_quantized(lo + w * rng.gen::<f64>(), quantize)
        });
        let got = roc_auc(&score_roc(&scores, &positive, &grid).unwrap());
        let want = mann_whitney(&scores, &positive);
        let dev = (got - want).abs();
        res.worst = res.worst.max(dev);
        res.record(dev <= AUC_TOLERANCE, || format!("instance {i}: grid {got} pairwise {want}"));
    }
    res
}

/// With every distinct score (and one value below them all) as a threshold
/// the trapezoid is the pairwise statistic itself.
pub fn auc_exact(instances: usize) -> Outcome {
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(8, i);
        let quantize = rng.gen_bool(0.5);
        let (scores, positive) = labelled_scores(&mut rng, |rng, p| {
            clamp_quantized(rng.gen::<f64>() + if p { 0.2 } else { 0.0 }, quantize)
        });
        let mut grid = scores.clone();
        grid.push(-1.0);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let got = roc_auc(&score_roc(&scores, &positive, &grid).unwrap());
        let want = mann_whitney(&scores, &positive);
        let dev = (got - want).abs();
        res.worst = res.worst.max(dev);
        res.record(dev <= 1e-12, || format!("instance {i}: {got} vs {want}"));
    }
    res
}

/// Scores piled into a few bins (powers of a uniform, shifted and clamped).
/// The grid cannot order a positive and a negative in the same bin and
/// scores them as a tie, so the gap is at most half the share of such pairs.
pub fn auc_bin_bound(instances: usize) -> Outcome {
    let grid = threshold_grid(ROC_GRID_POINTS);
    let bin = |s: f64| grid.iter().filter(|&&th| s > th).count();
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(9, i);
        let (shift, power) = (rng.gen_range(-0.3..0.6), rng.gen_range(0.2..4.0));
        let (scores, positive) = labelled_scores(&mut rng, |rng, p| {
            let u = rng.gen::<f64>().powf(power);
            clamp_quantized(if p { u + shift } else { u }, false)
        });
        let (mut shared, mut pairs) = (0.0, 0.0);
        for (a, pa) in scores.iter().zip(&positive) {
            for (b, pb) in scores.iter().zip(&positive) {
                if *pa && !*pb {
                    pairs += 1.0;
                    if bin(*a) == bin(*b) {
                        shared += 1.0;
                    }
                }
            }
        }
        let got = roc_auc(&score_roc(&scores, &positive, &grid).unwrap());
        let want = mann_whitney(&scores, &positive);
        let dev = (got - want).abs();
        res.worst = res.worst.max(dev);
        res.record(dev <= 0.5 * shared / pairs + 1e-12, || {
            format!("instance {i}: gap {dev} bound {}", 0.5 * shared / pairs)
        });
    }
    res
}

/// Scores drawn independently of the labels, 20k frames per instance
/// (standard error of the AUC about 0.005).
pub fn auc_chance(instances: usize) -> Outcome {
    let grid = threshold_grid(ROC_GRID_POINTS);
    let mut res = Outcome::default();
    for i in 0..instances {
        let mut rng = rng_for(10, i);
        let positive: Vec<bool> = (0..20_000).map(|_| rng.gen_bool(0.3)).collect();
        let scores: Vec<f64> = positive.iter().map(|_| rng.gen()).collect();
        let got = roc_auc(&score_roc(&scores, &positive, &grid).unwrap());
        res.worst = res.worst.max((got - 0.5).abs());
        res.record((got - 0.5).abs() <= 0.05, || format!("instance {i}: {got}"));
    }
    res
}
