//! SGD with momentum, L2 weight decay, element-wise gradient clipping and a
//! step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub clip_low: f64,
    pub clip_high: f64,
    /// Multiplier applied to the learning rate every `decay_interval` epochs.
    pub decay_factor: f64,
    pub decay_interval: u64,
}

/// The full-scale recipe: lr 0.001 dropped tenfold every 100 epochs.
impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.001,
            momentum: 0.9,
            weight_decay: 0.005,
            clip_low: -10.0,
            clip_high: 10.0,
            decay_factor: 0.1,
            decay_interval: 100,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight decay >= 0".into()));
        }
        if !(self.clip_low < self.clip_high) {
            return Err(Error::Config("clip bounds must satisfy low < high".into()));
        }
        if !(self.decay_factor > 0.0) || self.decay_interval == 0 {
            return Err(Error::Config("decay factor must be positive and interval >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    pub learning_rate: f64,
    pub step: u64,
    pub velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        Ok(Sgd {
            learning_rate: config.learning_rate,
            config,
            step: 0,
            velocity: Vec::new(),
        })
    }

    /// Sets the learning rate for a zero-based epoch index.
    pub fn set_epoch(&mut self, epoch: u64) {
        let drops = (epoch / self.config.decay_interval) as i32;
        self.learning_rate = self.config.learning_rate * self.config.decay_factor.powi(drops);
    }

    /// One update from the grad slots of `params`. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.velocity.len() != params.len() {
            return Err(Error::Invalid(format!(
                "optimizer tracks {} parameters, got {}",
                self.velocity.len(),
                params.len()
            )));
        }
        let c = self.config;
        let lr = self.learning_rate;
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            if v.len() != p.len() {
                return Err(Error::shape("momentum buffer", &[v.len()], p.shape()));
            }
            let (data, grad) = p.data_and_grad_mut();
            for i in 0..data.len() {
                let g = grad[i].clamp(c.clip_low, c.clip_high) + c.weight_decay * data[i];
                v[i] = c.momentum * v[i] + g;
                data[i] -= lr * v[i];
            }
        }
        self.step += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64, g: f64) -> Tensor {
        let mut t = Tensor::from_vec(&[1], vec![v]).unwrap();
        t.grad_mut()[0] = g;
        t
    }

    fn plain(lr: f64, momentum: f64, wd: f64) -> Sgd {
        Sgd::new(SgdConfig {
            learning_rate: lr,
            momentum,
            weight_decay: wd,
            ..SgdConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn gradient_is_clipped_before_update() {
        let mut opt = plain(0.1, 0.0, 0.0);
        let mut p = scalar(1.0, 100.0);
        opt.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data()[0], 1.0 - 0.1 * 10.0);
        let mut q = scalar(1.0, -100.0);
        let mut opt = plain(0.1, 0.0, 0.0);
        opt.step(&mut [&mut q]).unwrap();
        assert_eq!(q.data()[0], 1.0 + 0.1 * 10.0);
    }

    #[test]
    fn zero_gradient_without_decay_keeps_param() {
        let mut opt = plain(0.5, 0.9, 0.0);
        let mut p = scalar(2.25, 0.0);
        for _ in 0..3 {
            opt.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.data()[0], 2.25);
    }

    #[test]
    fn two_momentum_steps_match_hand_recurrence() {
        let (lr, mu, wd) = (0.01, 0.9, 0.005);
        let mut opt = plain(lr, mu, wd);
        let mut p = scalar(1.0, 2.0);
        opt.step(&mut [&mut p]).unwrap();
        p.grad_mut()[0] = -3.0;
        opt.step(&mut [&mut p]).unwrap();

        let mut x: f64 = 1.0;
        let g1 = 2.0 + wd * x;
        let v1 = g1;
        x -= lr * v1;
        let g2 = -3.0 + wd * x;
        let v2 = mu * v1 + g2;
        x -= lr * v2;
        assert_eq!(p.data()[0], x);
        assert_eq!(opt.step, 2);
    }

    #[test]
    fn step_schedule() {
        let mut opt = plain(0.001, 0.9, 0.0);
        opt.set_epoch(99);
        assert_eq!(opt.learning_rate, 0.001);
        opt.set_epoch(100);
        assert!((opt.learning_rate - 0.0001).abs() < 1e-18);
        opt.set_epoch(250);
        assert!((opt.learning_rate - 0.00001).abs() < 1e-18);
    }

    #[test]
    fn non_positive_learning_rate_rejected() {
        let cfg = SgdConfig {
            learning_rate: 0.0,
            ..SgdConfig::default()
        };
        assert!(Sgd::new(cfg).is_err());
    }
}
