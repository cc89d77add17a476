use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gesture::{default_gestures, render_frame, Blob, GestureSpec, Scene};
use crate::annotation::{validate_segments, FrameAnnotation};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel gains of the colorization (red, green, blue).
pub const COLOR_GAINS: [f64; 3] = [1.0, 0.75, 0.5];
/// Flow channels hold `FLOW_GAIN * (dx, dy)` in pixels per frame, spread
/// over the blob.
pub const FLOW_GAIN: f64 = 0.25;
/// Foreground mass below which a frame is treated as having no hand.
const MASS_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Depth,
    Color,
    Flow,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Depth, Modality::Color, Modality::Flow];

    pub fn channels(self) -> usize {
        match self {
            Modality::Depth => 1,
            Modality::Color => 3,
            Modality::Flow => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Depth => "depth",
            Modality::Color => "color",
            Modality::Flow => "flow",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Modality::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown modality '{s}' (expected depth, color or flow)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub modality: Modality,
    /// `C x T x H x W`.
    pub frames: Tensor,
    pub annotations: Vec<FrameAnnotation>,
    pub seed: u64,
}

impl VideoSample {
    pub fn new(
        id: impl Into<String>,
        modality: Modality,
        frames: Tensor,
        annotations: Vec<FrameAnnotation>,
        seed: u64,
    ) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 4 || s[0] != modality.channels() {
            return Err(Error::Data(format!(
                "{modality} video must be {}xTxHxW, got {s:?}",
                modality.channels()
            )));
        }
        let annotations = validate_segments(&annotations, s[1])?;
        Ok(VideoSample {
            id: id.into(),
            modality,
            frames,
            annotations,
            seed,
        })
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// Class of the first annotated gesture.
    pub fn primary_class(&self) -> Option<usize> {
        self.annotations.first().map(|a| a.class_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    /// Raw frames per gesture slot; a video with k gestures has k slots.
    pub slot_frames: usize,
    pub gesture_frames: (usize, usize),
    pub min_gap: usize,
    pub train_segments: (usize, usize),
    pub test_segments: (usize, usize),
    pub distractor_rate: f64,
    /// Gesture amplitude in pixels.
    pub amplitude: (f64, f64),
    /// Maximum offset of the gesture center from the frame center.
    pub center_jitter: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            num_classes: 8,
            train_per_class: 40,
            test_per_class: 20,
            height: 48,
            width: 48,
            slot_frames: 32,
            gesture_frames: (14, 22),
            min_gap: 3,
            train_segments: (1, 2),
            test_segments: (1, 1),
            distractor_rate: 0.25,
            amplitude: (8.0, 11.0),
            center_jitter: 3.0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.gesture_frames;
        if lo < 2 || lo > hi {
            return Err(Error::Config(format!("gesture_frames must satisfy 2 <= min <= max, got ({lo}, {hi})")));
        }
        for (name, (a, b)) in [("train_segments", self.train_segments), ("test_segments", self.test_segments)] {
            if a == 0 || a > b || b > 3 {
                return Err(Error::Config(format!("{name} must satisfy 1 <= min <= max <= 3, got ({a}, {b})")));
            }
            // longest gestures plus the mandatory gaps must fit
            let need = b * hi + (b + 1) * self.min_gap;
            if need > b * self.slot_frames {
                return Err(Error::Config(format!(
                    "infeasible packing: {b} gestures of up to {hi} frames with gaps of {} need {need} frames, video has {}",
                    self.min_gap,
                    b * self.slot_frames
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Config(format!("distractor_rate must be in [0, 1], got {}", self.distractor_rate)));
        }
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!("frames of {}x{} are too small", self.height, self.width)));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config("videos per class must be positive".into()));
        }
        if !(self.amplitude.0 > 0.0 && self.amplitude.0 <= self.amplitude.1) {
            return Err(Error::Config(format!("bad amplitude range {:?}", self.amplitude)));
        }
        default_gestures(self.num_classes, self.gesture_frames)?;
        Ok(())
    }

    pub fn gestures(&self) -> Result<Vec<GestureSpec>> {
        default_gestures(self.num_classes, self.gesture_frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn stream(self) -> u64 {
        match self {
            Split::Train => 1 << 32,
            Split::Test => 2 << 32,
        }
    }
}

/// Independent per-video seed; train and test draw from disjoint streams.
pub fn video_seed(seed: u64, split: Split, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream() + index as u64);
    rng.gen()
}

/// Splits `free` extra frames into `parts` nonnegative chunks uniformly.
fn random_composition<R: Rng>(free: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    let mut cuts: Vec<usize> = (0..parts - 1).map(|_| rng.gen_range(0..=free)).collect();
    cuts.sort_unstable();
    let mut out = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts {
        out.push(c - prev);
        prev = c;
    }
    out.push(free - prev);
    out
}

/// Renders one depth video whose first gesture has class `primary`.
pub fn generate_video(
    cfg: &GeneratorConfig,
    gestures: &[GestureSpec],
    id: &str,
    primary: usize,
    segments: (usize, usize),
    seed: u64,
) -> Result<VideoSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec_of = |class: usize| {
        gestures
            .iter()
            .find(|g| g.class_id == class)
            .ok_or_else(|| Error::Config(format!("no gesture spec for class {class}")))
    };
    let k = rng.gen_range(segments.0..=segments.1);
    let total = k * cfg.slot_frames;
    let mut classes = vec![primary];
    for _ in 1..k {
        classes.push(gestures.choose(&mut rng).map(|g| g.class_id).unwrap_or(primary));
    }
    let mut durations = Vec::with_capacity(k);
    for &c in &classes {
        let (lo, hi) = spec_of(c)?.duration;
        durations.push(rng.gen_range(lo..=hi));
    }
    let used: usize = durations.iter().sum::<usize>() + (k + 1) * cfg.min_gap;
    if used > total {
        return Err(Error::Config(format!("infeasible packing: {used} frames needed, {total} available")));
    }
    let extra = random_composition(total - used, k + 1, &mut rng);
    let gaps: Vec<usize> = extra.iter().map(|e| e + cfg.min_gap).collect();

    let (h, w) = (cfg.height, cfg.width);
    let scene = Scene {
        level: rng.gen_range(0.05..0.2),
        ramp: rng.gen_range(0.0..0.15),
    };
    let mut blobs: Vec<Option<Blob>> = vec![None; total];
    let mut annotations = Vec::with_capacity(k);
    let mut t = 0;
    for i in 0..k {
        let gap_start = t;
        t += gaps[i];
        maybe_distractor(cfg, gap_start, t, &mut blobs, &mut rng);
        let spec = spec_of(classes[i])?;
        let d = durations[i];
        let a = rng.gen_range(cfg.amplitude.0..=cfg.amplitude.1);
        let cx = (w as f64 - 1.0) / 2.0 + rng.gen_range(-cfg.center_jitter..=cfg.center_jitter);
        let cy = (h as f64 - 1.0) / 2.0 + rng.gen_range(-cfg.center_jitter..=cfg.center_jitter);
        for j in 0..d {
            let u = j as f64 / (d - 1) as f64;
            let p = spec.trajectory.pose(u, a);
            blobs[t + j] = Some(Blob {
                x: cx + p.dx,
                y: cy + p.dy,
                radius: spec.radius * p.spread,
                intensity: spec.intensity * p.gain,
            });
        }
        annotations.push(FrameAnnotation::new(id, spec.class_id, t, t + d - 1));
        t += d;
    }
    maybe_distractor(cfg, t, total, &mut blobs, &mut rng);

    let mut frames = Tensor::zeros(&[1, total, h, w]);
    for (f, chunk) in frames.data_mut().chunks_mut(h * w).enumerate() {
        render_frame(scene, blobs[f], h, w, chunk);
    }
    VideoSample::new(id, Modality::Depth, frames, annotations, seed)
}

/// With probability `distractor_rate`, a small drifting hand movement
/// inside the background gap `[start, end)`, keeping one clear frame on
/// each side.
fn maybe_distractor<R: Rng>(cfg: &GeneratorConfig, start: usize, end: usize, blobs: &mut [Option<Blob>], rng: &mut R) {
    let room = end.saturating_sub(start + 2);
    if room < 3 || !rng.gen_bool(cfg.distractor_rate) {
        return;
    }
    let len = rng.gen_range(3..=room.min(8));
    let first = start + 1 + rng.gen_range(0..=room - len);
    let mut x = rng.gen_range(0.25..0.75) * cfg.width as f64;
    let mut y = rng.gen_range(0.25..0.75) * cfg.height as f64;
    for b in &mut blobs[first..first + len] {
        *b = Some(Blob {
            x,
            y,
            radius: 2.5,
            intensity: 0.6,
        });
        x += rng.gen_range(-1.0..=1.0);
        y += rng.gen_range(-1.0..=1.0);
    }
}

/// Generates one split, `per_class` videos for every class, ordered by
/// class then index.
pub fn generate_split(cfg: &GeneratorConfig, seed: u64, split: Split) -> Result<Vec<VideoSample>> {
    cfg.validate()?;
    let gestures = cfg.gestures()?;
    let (per_class, segments) = match split {
        Split::Train => (cfg.train_per_class, cfg.train_segments),
        Split::Test => (cfg.test_per_class, cfg.test_segments),
    };
    let mut out = Vec::with_capacity(per_class * gestures.len());
    for g in &gestures {
        for _ in 0..per_class {
            let index = out.len();
            let id = format!("{}_{index:05}", split.name());
            let vseed = video_seed(seed, split, index);
            out.push(generate_video(cfg, &gestures, &id, g.class_id, segments, vseed)?);
        }
    }
    Ok(out)
}

/// Color and flow views of a depth video; annotations are shared.
pub fn derive_modalities(depth: &VideoSample) -> Result<(VideoSample, VideoSample)> {
    if depth.modality != Modality::Depth {
        return Err(Error::Data(format!("{}: expected a depth video, got {}", depth.id, depth.modality)));
    }
    let (t, h, w) = (depth.len(), depth.height(), depth.width());
    let hw = h * w;
    let src = depth.frames.data();

    let mut color = Tensor::zeros(&[3, t, h, w]);
    for (c, gain) in COLOR_GAINS.iter().enumerate() {
        let dst = &mut color.data_mut()[c * t * hw..(c + 1) * t * hw];
        for (d, s) in dst.iter_mut().zip(src) {
            *d = gain * s;
        }
    }

    // foreground = depth minus its per-pixel minimum over time
    let mut floor = src[..hw].to_vec();
    for f in 1..t {
        for (m, v) in floor.iter_mut().zip(&src[f * hw..(f + 1) * hw]) {
            *m = m.min(*v);
        }
    }
    let fg: Vec<Vec<f64>> = (0..t)
        .map(|f| src[f * hw..(f + 1) * hw].iter().zip(&floor).map(|(v, m)| v - m).collect())
        .collect();
    let centroid = |frame: &[f64]| -> Option<(f64, f64)> {
        let mass: f64 = frame.iter().sum();
        if mass < MASS_FLOOR {
            return None;
        }
        let (mut sx, mut sy) = (0.0, 0.0);
        for (i, v) in frame.iter().enumerate() {
            sx += v * (i % w) as f64;
            sy += v * (i / w) as f64;
        }
        Some((sx / mass, sy / mass))
    };
    let centroids: Vec<Option<(f64, f64)>> = fg.iter().map(|f| centroid(f)).collect();
    let mut flow = Tensor::zeros(&[2, t, h, w]);
    for f in 1..t {
        let (Some(a), Some(b)) = (centroids[f - 1], centroids[f]) else {
            continue;
        };
        let peak = fg[f].iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            continue;
        }
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let data = flow.data_mut();
        for (i, v) in fg[f].iter().enumerate() {
            let s = FLOW_GAIN * v / peak;
            data[f * hw + i] = s * dx;
            data[t * hw + f * hw + i] = s * dy;
        }
    }
    Ok((
        VideoSample::new(&depth.id, Modality::Color, color, depth.annotations.clone(), depth.seed)?,
        VideoSample::new(&depth.id, Modality::Flow, flow, depth.annotations.clone(), depth.seed)?,
    ))
}

/// The requested modality view of a depth video.
pub fn view(depth: &VideoSample, modality: Modality) -> Result<VideoSample> {
    match modality {
        Modality::Depth => Ok(depth.clone()),
        Modality::Color => Ok(derive_modalities(depth)?.0),
        Modality::Flow => Ok(derive_modalities(depth)?.1),
    }
}
