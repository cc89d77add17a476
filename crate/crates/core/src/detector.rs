//! Turning per-frame model outputs into detections: offline peak triggers,
//! consensus classification, the online threshold trigger, and late fusion
//! of several modalities.

use serde::{Deserialize, Serialize};

use crate::annotation::NO_GESTURE;
use crate::error::{Error, Result};
use crate::model::{argmax, EncoderStream, ModelOutput, Network};
use crate::objectives::LOG_CLAMP;
use crate::tensor::Tensor;

/// Offline regions whose GPM never exceeds this produce no event.
pub const GPM_NOISE_FLOOR: f64 = 0.05;
/// Fusion weights are searched on multiples of this step.
pub const FUSION_GRID_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    /// Online trigger threshold on the GPM.
    pub epsilon: f64,
    /// Consensus ratio; `None` (written `"global"`) means global voting.
    #[serde(with = "tau_repr")]
    pub tau: Option<f64>,
    /// Frames after a trigger during which no new event can fire.
    pub refractory: usize,
    /// One weight per fused modality; empty means fit on the train split.
    pub fusion_weights: Vec<f64>,
}

/// Parses a consensus ratio: a number in `[0, 1]` or `global`.
pub fn parse_tau(s: &str) -> Result<Option<f64>> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("global") {
        return Ok(None);
    }
    let t: f64 = s
        .parse()
        .map_err(|_| Error::Config(format!("tau must be a number in [0, 1] or 'global', got '{s}'")))?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("tau must be in [0, 1], got {t}")));
    }
    Ok(Some(t))
}

mod tau_repr {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Ratio(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(tau: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match tau {
            Some(t) => s.serialize_f64(*t),
            None => s.serialize_str("global"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Ratio(t) => Ok(Some(t)),
            Repr::Word(w) if w.eq_ignore_ascii_case("global") => Ok(None),
            Repr::Word(w) => Err(de::Error::custom(format!("tau must be a number or \"global\", got \"{w}\""))),
        }
    }
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            epsilon: 0.5,
            tau: Some(1.0),
            refractory: 8,
            fusion_weights: Vec::new(),
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::Config(format!("epsilon must be in [0, 1], got {}", self.epsilon)));
        }
        if let Some(t) = self.tau {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("tau must be in [0, 1], got {t}")));
            }
        }
        if !self.fusion_weights.is_empty() {
            if self.fusion_weights.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::Config("fusion weights must be nonnegative".into()));
            }
            if self.fusion_weights.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("fusion weights must not all be zero".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub frame: usize,
    /// Never the no-gesture class.
    pub class: usize,
    pub gpm: f64,
    /// Filled in by evaluation when the trigger lands inside a gesture.
    pub nttd: Option<f64>,
    pub probs: Vec<f64>,
}

/// Most likely gesture class, ignoring no-gesture (first on ties).
pub fn gesture_argmax(probs: &[f64]) -> usize {
    if probs.len() < 2 {
        return NO_GESTURE;
    }
    1 + argmax(&probs[1..])
}

fn event_at(output: &ModelOutput, frame: usize) -> DetectionEvent {
    DetectionEvent {
        frame,
        class: gesture_argmax(&output.probs[frame]),
        gpm: output.gpm[frame],
        nttd: None,
        probs: output.probs[frame].clone(),
    }
}

/// Maximal runs of frames whose predicted class is a gesture.
pub fn candidate_regions(output: &ModelOutput) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (t, &c) in output.classes.iter().enumerate() {
        match (c != NO_GESTURE, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                out.push((s, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, output.len() - 1));
    }
    out
}

/// Earliest frame of maximal GPM within `[s, e]`.
fn peak_in(gpm: &[f64], s: usize, e: usize) -> usize {
    let mut best = s;
    for t in s + 1..=e {
        if gpm[t] > gpm[best] {
            best = t;
        }
    }
    best
}

/// One event per candidate region, at its GPM peak.
pub fn detect_offline(output: &ModelOutput) -> Vec<DetectionEvent> {
    candidate_regions(output)
        .into_iter()
        .filter_map(|(s, e)| {
            let t = peak_in(&output.gpm, s, e);
            (output.gpm[t] > GPM_NOISE_FLOOR).then(|| event_at(output, t))
        })
        .collect()
}

/// Whole-video class from the frame of maximal GPM (earliest on ties).
pub fn classify_peak(output: &ModelOutput) -> Result<usize> {
    if output.is_empty() {
        return Err(Error::Invalid("cannot classify an empty output".into()));
    }
    let t = peak_in(&output.gpm, 0, output.len() - 1);
    Ok(gesture_argmax(&output.probs[t]))
}

/// Frames taking part in the consensus for ratio `tau`; `None` = all.
pub fn consensus_frames(gpm: &[f64], tau: Option<f64>) -> Vec<usize> {
    let all: Vec<usize> = (0..gpm.len()).collect();
    let Some(tau) = tau else { return all };
    if gpm.is_empty() {
        return all;
    }
    let m = gpm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if tau >= 1.0 {
        return vec![peak_in(gpm, 0, gpm.len() - 1)];
    }
    let set: Vec<usize> = (0..gpm.len()).filter(|&t| gpm[t] > tau * m).collect();
    if set.is_empty() {
        all
    } else {
        set
    }
}

/// Gesture class maximizing the summed probabilities of the consensus set.
pub fn classify_consensus(output: &ModelOutput, tau: Option<f64>) -> Result<usize> {
    if output.is_empty() {
        return Err(Error::Invalid("cannot classify an empty output".into()));
    }
    if let Some(t) = tau {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Invalid(format!("tau must be in [0, 1], got {t}")));
        }
    }
    let k = output.probs[0].len();
    let mut sum = vec![0.0; k];
    for t in consensus_frames(&output.gpm, tau) {
        for (s, p) in sum.iter_mut().zip(&output.probs[t]) {
            *s += p;
        }
    }
    Ok(gesture_argmax(&sum))
}

/// Threshold trigger with refractory period and re-arm hysteresis at
/// half the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct OnlineTrigger {
    pub epsilon: f64,
    pub refractory: usize,
    armed: bool,
    cooldown: usize,
}

impl OnlineTrigger {
    pub fn new(epsilon: f64, refractory: usize) -> Self {
        OnlineTrigger {
            epsilon,
            refractory,
            armed: true,
            cooldown: 0,
        }
    }

    pub fn armed(&self) -> bool {
        self.armed
    }

    /// Feeds one frame's GPM; true when an event fires on this frame.
    pub fn step(&mut self, gpm: f64) -> bool {
        if self.cooldown > 0 {
            self.cooldown -= 1;
        }
        if !self.armed && self.cooldown == 0 && gpm < self.epsilon / 2.0 {
            self.armed = true;
        }
        if self.armed && gpm > self.epsilon {
            self.armed = false;
            self.cooldown = self.refractory;
            return true;
        }
        false
    }
}

/// Online events over an already computed output, as a stream would see it.
pub fn online_events(output: &ModelOutput, epsilon: f64, refractory: usize) -> Vec<DetectionEvent> {
    let mut trig = OnlineTrigger::new(epsilon, refractory);
    (0..output.len())
        .filter(|&t| trig.step(output.gpm[t]))
        .map(|t| event_at(output, t))
        .collect()
}

/// Frame-by-frame inference with carried recurrent state.
pub struct StreamSession<'a> {
    net: &'a Network,
    encoder: EncoderStream,
    trigger: OnlineTrigger,
    frame: usize,
    last_gpm: Option<f64>,
}

/// What one streamed frame produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamStep {
    pub frame: usize,
    pub gpm: f64,
    pub probs: Vec<f64>,
    pub event: Option<DetectionEvent>,
}

impl<'a> StreamSession<'a> {
    pub fn new(net: &'a Network, epsilon: f64, refractory: usize) -> Self {
        StreamSession {
            net,
            encoder: EncoderStream::new(net),
            trigger: OnlineTrigger::new(epsilon, refractory),
            frame: 0,
            last_gpm: None,
        }
    }

    pub fn frames_seen(&self) -> usize {
        self.frame
    }

    pub fn last_gpm(&self) -> Option<f64> {
        self.last_gpm
    }

    /// Runs one `C x H x W` frame. A rejected frame leaves the session
    /// untouched.
    pub fn step(&mut self, frame: &Tensor) -> Result<StreamStep> {
        let (gpm, probs) = self.encoder.step(self.net, frame)?;
        let index = self.frame;
        self.frame += 1;
        self.last_gpm = Some(gpm);
        let event = self.trigger.step(gpm).then(|| DetectionEvent {
            frame: index,
            class: gesture_argmax(&probs),
            gpm,
            nttd: None,
            probs: probs.clone(),
        });
        Ok(StreamStep {
            frame: index,
            gpm,
            probs,
            event,
        })
    }
}

fn normalized(weights: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || !(sum > 0.0) {
        return Err(Error::Invalid(format!("fusion weights {weights:?} are not a valid mixture")));
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

/// Per-frame convex combination of probabilities and GPM values.
pub fn fuse(outputs: &[&ModelOutput], weights: &[f64]) -> Result<ModelOutput> {
    if outputs.len() != weights.len() || outputs.is_empty() {
        return Err(Error::shape("fuse", &[outputs.len()], &[weights.len()]));
    }
    let w = normalized(weights)?;
    let (t, k) = (outputs[0].len(), outputs[0].probs.first().map_or(0, |p| p.len()));
    for o in outputs {
        if o.len() != t || o.probs.iter().any(|p| p.len() != k) {
            return Err(Error::shape("fuse", &[t, k], &[o.len(), o.probs.first().map_or(0, |p| p.len())]));
        }
    }
    let mut gpm = vec![0.0; t];
    let mut probs = vec![vec![0.0; k]; t];
    for (o, &wi) in outputs.iter().zip(&w) {
        for f in 0..t {
            gpm[f] += wi * o.gpm[f];
            for (acc, p) in probs[f].iter_mut().zip(&o.probs[f]) {
                *acc += wi * p;
            }
        }
    }
    Ok(ModelOutput::new(gpm, probs))
}

/// All points of the simplex in `parts` dimensions on the fusion grid.
pub fn simplex_grid(parts: usize) -> Vec<Vec<f64>> {
    let steps = (1.0 / FUSION_GRID_STEP).round() as usize;
    fn rec(parts: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for i in (0..=left).rev() {
            cur.push(i);
            rec(parts - 1, left - i, cur, out);
            cur.pop();
        }
    }
    let mut raw = Vec::new();
    if parts > 0 {
        rec(parts, steps, &mut Vec::new(), &mut raw);
    }
    raw.into_iter()
        .map(|p| p.into_iter().map(|i| i as f64 / steps as f64).collect())
        .collect()
}

/// Frame accuracy and mean log-likelihood of the labels under a mixture.
fn mixture_score(per_modality: &[Vec<&ModelOutput>], labels: &[Vec<usize>], w: &[f64]) -> (usize, f64) {
    let (mut correct, mut ll, mut n) = (0usize, 0.0, 0usize);
    let k = per_modality[0][0].probs[0].len();
    let mut mix = vec![0.0; k];
    for (v, lab) in labels.iter().enumerate() {
        for (t, &y) in lab.iter().enumerate() {
            mix.iter_mut().for_each(|m| *m = 0.0);
            for (m, &wi) in per_modality.iter().zip(w) {
                for (acc, p) in mix.iter_mut().zip(&m[v].probs[t]) {
                    *acc += wi * p;
                }
            }
            if argmax(&mix) == y {
                correct += 1;
            }
            ll += mix[y].max(LOG_CLAMP).ln();
            n += 1;
        }
    }
    (correct, ll / n.max(1) as f64)
}

/// Grid search over the simplex for the weights maximizing fused frame
/// accuracy on training predictions. Ties go to the higher label
/// log-likelihood, then to the point closest to uniform.
///
/// `predictions[m][v]` is modality `m`'s output for video `v`; `labels[v]`
/// its per-frame classes.
pub fn fit_fusion_weights(predictions: &[Vec<ModelOutput>], labels: &[Vec<usize>]) -> Result<Vec<f64>> {
    let m = predictions.len();
    if m < 2 {
        return Err(Error::Invalid(format!("fusion needs at least 2 modalities, got {m}")));
    }
    let per: Vec<Vec<&ModelOutput>> = predictions.iter().map(|p| p.iter().collect()).collect();
    for p in &per {
        if p.len() != labels.len() || p.iter().zip(labels).any(|(o, l)| o.len() != l.len()) {
            return Err(Error::shape("fit fusion weights", &[p.len()], &[labels.len()]));
        }
    }
    let mut seen = labels.iter().flatten();
    let first = seen.next().copied().ok_or_else(|| Error::Data("fusion fit: no labelled frames".into()))?;
    if seen.all(|&c| c == first) {
        return Err(Error::Data(format!("fusion fit: every frame has class {first}; weights are not identifiable")));
    }
    let uniform = vec![1.0 / m as f64; m];
    let dist = |w: &[f64]| w.iter().zip(&uniform).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let mut candidates = vec![uniform.clone()];
    candidates.extend(simplex_grid(m));
    let mut best: Option<(Vec<f64>, usize, f64)> = None;
    for w in candidates {
        let (acc, ll) = mixture_score(&per, labels, &w);
        let better = match &best {
            None => true,
            Some((bw, bacc, bll)) => {
                if acc != *bacc {
                    acc > *bacc
                } else if (ll - bll).abs() > 1e-9 * (1.0 + bll.abs()) {
                    ll > *bll
                } else {
                    dist(&w) < dist(bw) - 1e-15
                }
            }
        };
        if better {
            best = Some((w, acc, ll));
        }
    }
    Ok(best.map(|b| b.0).unwrap_or(uniform))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn output(gpm: Vec<f64>, winners: &[usize], k: usize) -> ModelOutput {
        let probs = winners
            .iter()
            .map(|&c| {
                let mut p = vec![0.1 / (k - 1) as f64; k];
                p[c] = 0.9;
                p
            })
            .collect();
        ModelOutput::new(gpm, probs)
    }

    #[test]
    fn offline_peak() {
        let o = output(vec![0.0, 0.2, 0.8, 0.4], &[0, 3, 3, 3], 4);
        let ev = detect_offline(&o);
        assert_eq!(ev.len(), 1);
        assert_eq!((ev[0].frame, ev[0].class), (2, 3));
        assert!(detect_offline(&output(vec![0.0; 4], &[2; 4], 4)).is_empty());
    }

    #[test]
    fn plateau_takes_earliest() {
        let o = output(vec![0.0, 1.0, 1.0, 0.0], &[1; 4], 3);
        assert_eq!(detect_offline(&o)[0].frame, 1);
        assert_eq!(consensus_frames(&o.gpm, Some(1.0)), vec![1]);
    }

    #[test]
    fn consensus_threshold() {
        assert_eq!(consensus_frames(&[0.1, 0.5, 0.9, 1.0, 0.2], Some(0.75)), vec![2, 3]);
        assert_eq!(consensus_frames(&[0.1, 0.5], None), vec![0, 1]);
    }

    #[test]
    fn online_threshold() {
        let o = output(vec![0.1, 0.4, 0.6, 0.7], &[1; 4], 3);
        let ev = online_events(&o, 0.5, 8);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].frame, 2);
        assert!(online_events(&o, 1.0, 8).is_empty());
    }

    #[test]
    fn rearm_needs_refractory_and_drop() {
        let mut trig = OnlineTrigger::new(0.5, 2);
        let fired: Vec<bool> = [0.6, 0.1, 0.9, 0.1, 0.4, 0.9, 0.2, 0.9]
            .iter()
            .map(|&p| trig.step(p))
            .collect();
        // the drop at frame 1 falls inside the refractory period, so frame 2
        // cannot fire; frame 3 re-arms (0.1 < 0.25) and frame 5 fires; frame 7
        // cannot fire because nothing after frame 5 re-armed the trigger
        assert_eq!(fired, vec![true, false, false, false, false, true, false, false]);
    }

    #[test]
    fn fusion_basics() {
        let a = output(vec![0.2, 0.8], &[1, 2], 3);
        let b = output(vec![0.6, 0.4], &[2, 2], 3);
        let f = fuse(&[&a, &b], &[1.0, 0.0]).unwrap();
        assert_eq!(f, a);
        let same = fuse(&[&a, &a], &[1.0, 1.0]).unwrap();
        for (x, y) in same.probs.iter().flatten().zip(a.probs.iter().flatten()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(fuse(&[&a, &output(vec![0.1], &[1], 3)], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn grid_covers_simplex() {
        assert_eq!(simplex_grid(2).len(), 21);
        assert_eq!(simplex_grid(3).len(), 231);
        for w in simplex_grid(3) {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_fit_rules() {
        let labels = vec![vec![0, 1, 2, 1], vec![2, 2, 0, 1]];
        let perfect: Vec<ModelOutput> = labels.iter().map(|l| output(vec![0.5; 4], l, 3)).collect();
        let wrong: Vec<ModelOutput> = labels
            .iter()
            .map(|l| output(vec![0.5; 4], &l.iter().map(|c| (c + 1) % 3).collect::<Vec<_>>(), 3))
            .collect();
        let w = fit_fusion_weights(&[wrong.clone(), perfect.clone()], &labels).unwrap();
        assert!(w[1] > 0.95, "{w:?}");
        let w = fit_fusion_weights(&[perfect.clone(), perfect.clone()], &labels).unwrap();
        assert_eq!(w, vec![0.5, 0.5]);
        assert!(fit_fusion_weights(&[perfect.clone(), perfect], &[vec![1; 4], vec![1; 4]]).is_err());
    }
}
