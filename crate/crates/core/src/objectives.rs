//! Progression targets and the multitask training objective
//! `L = L_gpm + lambda * L_class`.

use serde::{Deserialize, Serialize};

use crate::annotation::{validate_segments, FrameAnnotation, NO_GESTURE};
use crate::error::{Error, Result};

/// Floor applied to the ground-truth probability before taking its log.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda: f64,
    /// One weight per class, index 0 = no-gesture.
    pub class_weights: Vec<f64>,
}

impl LossConfig {
    pub fn uniform(classes: usize, lambda: f64) -> Self {
        LossConfig {
            lambda,
            class_weights: vec![1.0; classes],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if let Some(w) = self.class_weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::Config(format!("class weights must be positive, got {w}")));
        }
        Ok(())
    }
}

/// Normalized elapsed duration: `(t - t_s) / (t_e - t_s)` inside a segment,
/// 0 on background. A one-frame segment is complete at its only frame.
pub fn gpm_target(segments: &[FrameAnnotation], frames: usize) -> Result<Vec<f64>> {
    let sorted = validate_segments(segments, frames)?;
    let mut target = vec![0.0; frames];
    for a in &sorted {
        let (s, e) = (a.start_frame, a.end_frame);
        if s == e {
            target[s] = 1.0;
            continue;
        }
        for (t, v) in target.iter_mut().enumerate().take(e + 1).skip(s) {
            *v = (t - s) as f64 / (e - s) as f64;
        }
    }
    Ok(target)
}

fn check_len(a: usize, b: usize, what: &'static str) -> Result<()> {
    if a != b {
        return Err(Error::shape(what, &[a], &[b]));
    }
    if a == 0 {
        return Err(Error::Invalid(format!("{what}: empty sequence")));
    }
    Ok(())
}

/// Mean squared error over the frames of one video.
pub fn gpm_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred.len(), target.len(), "gpm loss")?;
    let t = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / t)
}

pub fn gpm_loss_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    check_len(pred.len(), target.len(), "gpm loss")?;
    let t = pred.len() as f64;
    Ok(pred.iter().zip(target).map(|(p, q)| 2.0 * (p - q) / t).collect())
}

fn class_name(k: usize) -> String {
    if k == NO_GESTURE {
        "no-gesture".into()
    } else {
        format!("class {k}")
    }
}

/// Inverse-frequency weights `total / (K * count_k)`; uniform counts give
/// all ones.
pub fn class_weights(histogram: &[u64]) -> Result<Vec<f64>> {
    if histogram.is_empty() {
        return Err(Error::Invalid("empty class histogram".into()));
    }
    if let Some(k) = histogram.iter().position(|c| *c == 0) {
        return Err(Error::Data(format!(
            "{} never occurs in the training frames; cannot weight it",
            class_name(k)
        )));
    }
    let total: u64 = histogram.iter().sum();
    let k = histogram.len() as f64;
    Ok(histogram.iter().map(|c| total as f64 / (k * *c as f64)).collect())
}

fn check_class_inputs(probs: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<()> {
    check_len(probs.len(), labels.len(), "class loss")?;
    for (p, l) in probs.iter().zip(labels) {
        if p.len() != weights.len() || *l >= p.len() {
            return Err(Error::shape("class loss", &[p.len(), *l], &[weights.len()]));
        }
    }
    Ok(())
}

/// Weighted cross-entropy `-(1/T) sum_t w_{y_t} log c_t`.
pub fn class_loss(probs: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<f64> {
    check_class_inputs(probs, labels, weights)?;
    let t = probs.len() as f64;
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| weights[y] * p[y].max(LOG_CLAMP).ln())
        .sum();
    Ok(-sum / t)
}

/// Gradient with respect to every probability entry (zero outside the
/// labelled class, and zero where the clamp is active).
pub fn class_loss_grad(probs: &[Vec<f64>], labels: &[usize], weights: &[f64]) -> Result<Vec<Vec<f64>>> {
    check_class_inputs(probs, labels, weights)?;
    let t = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            let mut g = vec![0.0; p.len()];
            if p[y] > LOG_CLAMP {
                g[y] = -weights[y] / (p[y] * t);
            }
            g
        })
        .collect())
}

pub fn joint_loss(gpm: f64, class: f64, lambda: f64) -> f64 {
    gpm + lambda * class
}
