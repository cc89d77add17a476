//! Mini-batch training of the multitask network on a corpus split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::frame_labels;
use crate::corpus::{augment_random, prepare_eval, view, AugmentationConfig, Modality, VideoSample};
use crate::error::{Error, Result};
use crate::model::{Network, Preset};
use crate::objectives::{class_loss, class_loss_grad, class_weights, gpm_loss, gpm_loss_grad, gpm_target};
use crate::optim::{Sgd, SgdConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: u64,
    /// Epochs spent fine-tuning each inflated color/flow model.
    pub finetune_epochs: u64,
    pub batch_size: usize,
    pub lambda: f64,
    /// Network frames per raw gesture slot after subsampling.
    pub frames_per_slot: usize,
    /// Inverse-frequency class weights; uniform weights when off.
    pub class_weighting: bool,
    pub optimizer: SgdConfig,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    /// Small-corpus schedule: 30 epochs with the rate dropped at epoch 20.
    /// The full-preset rate of 0.001 leaves the small model at chance after ten
    /// epochs, so the desk rate is 0.01.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 30,
            finetune_epochs: 10,
            batch_size: 4,
            lambda: 1.0,
            frames_per_slot: 16,
            class_weighting: true,
            optimizer: SgdConfig {
                learning_rate: 0.01,
                decay_interval: 20,
                ..SgdConfig::default()
            },
            augmentation: AugmentationConfig::default(),
        }
    }

    /// Full-scale recipe on 80-frame clips.
    pub fn full() -> Self {
        TrainConfig {
            epochs: 300,
            finetune_epochs: 100,
            frames_per_slot: 80,
            optimizer: SgdConfig::default(),
            augmentation: AugmentationConfig {
                crop: 112,
                ..AugmentationConfig::default()
            },
            ..TrainConfig::desk()
        }
    }

    pub fn for_preset(preset: Preset) -> Self {
        match preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Full => TrainConfig::full(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.frames_per_slot == 0 {
            return Err(Error::Config("frames_per_slot must be positive".into()));
        }
        self.optimizer.validate()?;
        self.augmentation.validate()
    }
}

/// Network clip length for a raw video of `raw` frames.
pub fn clip_frames(raw: usize, slot_frames: usize, frames_per_slot: usize) -> usize {
    (raw * frames_per_slot / slot_frames.max(1)).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub modality: Modality,
    pub epoch: u64,
    pub learning_rate: f64,
    pub gpm_loss: f64,
    pub class_loss: f64,
    pub loss: f64,
    /// Gradient norm reaching the classification head over the epoch.
    pub class_head_grad: f64,
}

/// Everything a training run needs besides the network.
pub struct TrainJob<'a> {
    pub videos: &'a [VideoSample],
    pub modality: Modality,
    pub slot_frames: usize,
    pub epochs: u64,
    pub seed: u64,
    pub config: &'a TrainConfig,
}

/// Frame-class histogram of the unaugmented, subsampled videos.
pub fn class_histogram(videos: &[VideoSample], classes: usize, slot_frames: usize, frames_per_slot: usize) -> Result<Vec<u64>> {
    let mut hist = vec![0u64; classes];
    for v in videos {
        let t = clip_frames(v.len(), slot_frames, frames_per_slot);
        let sub = crate::corpus::subsample_nearest(v, t)?;
        for c in frame_labels(&sub.annotations, t)? {
            if c >= classes {
                return Err(Error::Data(format!("{}: class {c} exceeds the {classes}-class model", v.id)));
            }
            hist[c] += 1;
        }
    }
    Ok(hist)
}

/// Groups a shuffled order into batches of equal clip length; batch order
/// is shuffled again.
fn make_batches(lengths: &[usize], batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(rng);
    let mut keys: Vec<usize> = lengths.to_vec();
    keys.sort_unstable();
    keys.dedup();
    let mut out = Vec::new();
    for k in keys {
        let group: Vec<usize> = order.iter().copied().filter(|&i| lengths[i] == k).collect();
        out.extend(group.chunks(batch).map(|c| c.to_vec()));
    }
    out.shuffle(rng);
    out
}

fn stack(samples: &[VideoSample]) -> Result<Tensor> {
    let s = samples[0].frames.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * samples[0].frames.len());
    for v in samples {
        if v.frames.shape() != s.as_slice() {
            return Err(Error::shape("batch", v.frames.shape(), &s));
        }
        data.extend_from_slice(v.frames.data());
    }
    Tensor::from_vec(&[samples.len(), s[0], s[1], s[2], s[3]], data)
}

/// Trains `net` in place and returns the optimizer state. `log` sees one
/// entry per epoch.
pub fn train(net: &mut Network, job: &TrainJob<'_>, log: &mut dyn FnMut(&EpochLog)) -> Result<Sgd> {
    let cfg = job.config;
    cfg.validate()?;
    if job.videos.is_empty() {
        return Err(Error::Data("no training videos".into()));
    }
    let k = net.config.output_classes();
    let weights = if cfg.class_weighting {
        class_weights(&class_histogram(job.videos, k, job.slot_frames, cfg.frames_per_slot)?)?
    } else {
        vec![1.0; k]
    };
    let lengths: Vec<usize> = job
        .videos
        .iter()
        .map(|v| clip_frames(v.len(), job.slot_frames, cfg.frames_per_slot))
        .collect();
    let mut opt = Sgd::new(cfg.optimizer)?;
    let class_head_index = net.params_mut().len() - 2;

    for epoch in 0..job.epochs {
        opt.set_epoch(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
        rng.set_stream(epoch + 1);
        let (mut sum_gpm, mut sum_cls, mut seen, mut head_sq) = (0.0, 0.0, 0usize, 0.0);
        for batch in make_batches(&lengths, cfg.batch_size, &mut rng) {
            let mut samples = Vec::with_capacity(batch.len());
            for &i in &batch {
                let raw = view(&job.videos[i], job.modality)?;
                samples.push(augment_random(&raw, &cfg.augmentation, Some(lengths[i]), &mut rng)?);
            }
            let input = stack(&samples)?;
            let (outputs, cache) = net.forward_train(&input, &mut rng)?;
            let n = samples.len() as f64;
            let mut d_gpm = Vec::new();
            let mut d_probs = Vec::new();
            for (s, out) in samples.iter().zip(&outputs) {
                let t = s.len();
                let target = gpm_target(&s.annotations, t)?;
                let labels = frame_labels(&s.annotations, t)?;
                let lg = gpm_loss(&out.gpm, &target)?;
                let lc = class_loss(&out.probs, &labels, &weights)?;
                if !(lg.is_finite() && lc.is_finite()) {
                    return Err(Error::Numeric(format!(
                        "non-finite loss on {} at epoch {epoch} (gpm {lg}, class {lc})",
                        s.id
                    )));
                }
                sum_gpm += lg;
                sum_cls += lc;
                seen += 1;
                d_gpm.extend(gpm_loss_grad(&out.gpm, &target)?.into_iter().map(|g| g / n));
                for row in class_loss_grad(&out.probs, &labels, &weights)? {
                    d_probs.extend(row.into_iter().map(|g| cfg.lambda * g / n));
                }
            }
            net.zero_grad();
            net.backward(&cache, &d_gpm, &d_probs)?;
            {
                let params = net.params_mut();
                head_sq += params[class_head_index..]
                    .iter()
                    .filter_map(|p| p.grad())
                    .flatten()
                    .map(|g| g * g)
                    .sum::<f64>();
            }
            let mut params = net.params_mut();
            opt.step(&mut params)?;
        }
        let (g, c) = (sum_gpm / seen as f64, sum_cls / seen as f64);
        log(&EpochLog {
            modality: job.modality,
            epoch,
            learning_rate: opt.learning_rate,
            gpm_loss: g,
            class_loss: c,
            loss: g + cfg.lambda * c,
            class_head_grad: head_sq.sqrt(),
        });
    }
    Ok(opt)
}

/// Eval-mode outputs for every video of a split, in order.
pub fn predict(
    net: &Network,
    videos: &[VideoSample],
    modality: Modality,
    slot_frames: usize,
    frames_per_slot: usize,
) -> Result<Vec<(VideoSample, crate::model::ModelOutput)>> {
    let crop = net.config.height;
    videos
        .iter()
        .map(|v| {
            let t = clip_frames(v.len(), slot_frames, frames_per_slot);
            let prepared = prepare_eval(&view(v, modality)?, crop, t)?;
            let s = prepared.frames.shape().to_vec();
            let input = prepared.frames.clone().reshape(&[1, s[0], s[1], s[2], s[3]])?;
            let out = net.forward(&input)?.remove(0);
            Ok((prepared, out))
        })
        .collect()
}
