//! Preprocessing and augmentation: nearest-neighbour temporal subsampling,
//! cropping, and the random spatial/temporal augmentation suite.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::generate::VideoSample;
use crate::annotation::FrameAnnotation;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `round(num / den)` with halves rounded up, exact in integers.
fn round_div(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Source frame of every output frame: `round(i * (T_in - 1) / (T - 1))`.
pub fn subsample_indices(input: usize, target: usize) -> Vec<usize> {
    if target == 1 {
        return vec![0];
    }
    (0..target).map(|i| round_div(i * (input - 1), target - 1)).collect()
}

/// Forward image of an input frame under the same map.
fn forward_index(frame: usize, input: usize, target: usize) -> usize {
    if input == 1 {
        return 0;
    }
    round_div(frame * (target - 1), input - 1)
}

/// Copies frames `src[j]` of every channel into a new `C x len(src) x H x W`
/// tensor.
fn gather_frames(frames: &Tensor, src: &[usize]) -> Tensor {
    let s = frames.shape();
    let (c, t, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = Tensor::zeros(&[c, src.len(), s[2], s[3]]);
    let (d, o) = (frames.data(), out.data_mut());
    for ch in 0..c {
        for (j, &f) in src.iter().enumerate() {
            let from = (ch * t + f) * hw;
            let to = (ch * src.len() + j) * hw;
            o[to..to + hw].copy_from_slice(&d[from..from + hw]);
        }
    }
    out
}

/// Drops segments emptied by a remap and pushes a start forward when two
/// remapped segments would share a frame.
fn settle(mut segments: Vec<FrameAnnotation>) -> Vec<FrameAnnotation> {
    segments.sort_by_key(|a| a.start_frame);
    let mut out: Vec<FrameAnnotation> = Vec::with_capacity(segments.len());
    for mut a in segments {
        if let Some(prev) = out.last() {
            a.start_frame = a.start_frame.max(prev.end_frame + 1);
        }
        if a.start_frame <= a.end_frame {
            out.push(a);
        }
    }
    out
}

pub fn subsample_nearest(video: &VideoSample, target: usize) -> Result<VideoSample> {
    if target == 0 {
        return Err(Error::Invalid("subsample target must be at least 1 frame".into()));
    }
    if video.is_empty() {
        return Err(Error::Data(format!("{}: empty video", video.id)));
    }
    let input = video.len();
    let frames = gather_frames(&video.frames, &subsample_indices(input, target));
    let annotations = video
        .annotations
        .iter()
        .map(|a| {
            let mut b = a.clone();
            b.start_frame = forward_index(a.start_frame, input, target);
            b.end_frame = forward_index(a.end_frame, input, target).max(b.start_frame);
            b
        })
        .collect();
    VideoSample::new(&video.id, video.modality, frames, settle(annotations), video.seed)
}

/// Spatial window `[top, top + size) x [left, left + size)` of every frame.
pub fn crop(video: &VideoSample, top: usize, left: usize, size: usize) -> Result<VideoSample> {
    let (h, w) = (video.height(), video.width());
    if top + size > h || left + size > w || size == 0 {
        return Err(Error::Invalid(format!(
            "{}: crop {size}x{size} at ({top}, {left}) does not fit a {h}x{w} frame",
            video.id
        )));
    }
    let (c, t) = (video.channels(), video.len());
    let mut out = Tensor::zeros(&[c, t, size, size]);
    let (d, o) = (video.frames.data(), out.data_mut());
    for plane in 0..c * t {
        for y in 0..size {
            let from = plane * h * w + (top + y) * w + left;
            let to = plane * size * size + y * size;
            o[to..to + size].copy_from_slice(&d[from..from + size]);
        }
    }
    VideoSample::new(&video.id, video.modality, out, video.annotations.clone(), video.seed)
}

pub fn center_crop(video: &VideoSample, size: usize) -> Result<VideoSample> {
    let top = video.height().saturating_sub(size) / 2;
    let left = video.width().saturating_sub(size) / 2;
    crop(video, top, left, size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationConfig {
    /// Rotation range in degrees, sampled from `[-r, r]`.
    pub rotation: f64,
    /// Relative spatial scale range, sampled from `[1 - s, 1 + s]`.
    pub spatial_scale: f64,
    /// Relative temporal scale range, sampled from `[1 - s, 1 + s]`.
    pub temporal_scale: f64,
    pub nonlinear_warp: bool,
    /// Interval for the interior knot of the warp, as a fraction of the clip.
    pub warp_knot: (f64, f64),
    /// Interval for the ratio of the second slope to the first.
    pub warp_slope_ratio: (f64, f64),
    /// Temporal translation range in frames, sampled from `[-n, n]`.
    pub translation: i64,
    pub crop: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            rotation: 25.0,
            spatial_scale: 0.2,
            temporal_scale: 0.2,
            nonlinear_warp: true,
            warp_knot: (0.3, 0.7),
            warp_slope_ratio: (0.8, 1.25),
            translation: 5,
            crop: 32,
        }
    }
}

impl AugmentationConfig {
    /// No augmentation at all, center crop of `crop`.
    pub fn none(crop: usize) -> Self {
        AugmentationConfig {
            rotation: 0.0,
            spatial_scale: 0.0,
            temporal_scale: 0.0,
            nonlinear_warp: false,
            warp_knot: (0.5, 0.5),
            warp_slope_ratio: (1.0, 1.0),
            translation: 0,
            crop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("augmentation: {what}")));
        if !(0.0..=180.0).contains(&self.rotation) {
            return bad("rotation must be in [0, 180] degrees");
        }
        if !(0.0..1.0).contains(&self.spatial_scale) || !(0.0..1.0).contains(&self.temporal_scale) {
            return bad("scale ranges must be in [0, 1)");
        }
        let (k0, k1) = self.warp_knot;
        if !(0.0 < k0 && k0 <= k1 && k1 < 1.0) {
            return bad("warp knot interval must lie inside (0, 1)");
        }
        let (r0, r1) = self.warp_slope_ratio;
        if !(0.0 < r0 && r0 <= r1) {
            return bad("warp slope ratios must be positive");
        }
        if self.translation < 0 {
            return bad("translation must be >= 0");
        }
        if self.crop == 0 {
            return bad("crop must be positive");
        }
        Ok(())
    }

    /// One uniform draw per parameter.
    pub fn sample<R: Rng + ?Sized>(&self, height: usize, width: usize, rng: &mut R) -> Result<AugmentParams> {
        if self.crop > height || self.crop > width {
            return Err(Error::Invalid(format!(
                "crop {} is larger than the {height}x{width} frame",
                self.crop
            )));
        }
        let sym = |r: f64, rng: &mut R| if r > 0.0 { rng.gen_range(-r..=r) } else { 0.0 };
        let range = |(a, b): (f64, f64), rng: &mut R| if b > a { rng.gen_range(a..=b) } else { a };
        let rotation = sym(self.rotation, rng).to_radians();
        let spatial_scale = 1.0 + sym(self.spatial_scale, rng);
        let temporal_scale = 1.0 + sym(self.temporal_scale, rng);
        let warp = if self.nonlinear_warp {
            Some((range(self.warp_knot, rng), range(self.warp_slope_ratio, rng)))
        } else {
            None
        };
        let shift = if self.translation > 0 {
            rng.gen_range(-self.translation..=self.translation)
        } else {
            0
        };
        let top = rng.gen_range(0..=height - self.crop);
        let left = rng.gen_range(0..=width - self.crop);
        Ok(AugmentParams {
            rotation,
            spatial_scale,
            temporal_scale,
            warp,
            shift,
            top,
            left,
            crop: self.crop,
        })
    }
}

/// Concrete augmentation of one video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    /// Radians.
    pub rotation: f64,
    pub spatial_scale: f64,
    pub temporal_scale: f64,
    /// `(knot, slope ratio)` of the piecewise-linear time warp.
    pub warp: Option<(f64, f64)>,
    pub shift: i64,
    pub top: usize,
    pub left: usize,
    pub crop: usize,
}

impl AugmentParams {
    pub fn identity(height: usize, width: usize, crop: usize) -> Self {
        AugmentParams {
            rotation: 0.0,
            spatial_scale: 1.0,
            temporal_scale: 1.0,
            warp: None,
            shift: 0,
            top: height.saturating_sub(crop) / 2,
            left: width.saturating_sub(crop) / 2,
            crop,
        }
    }
}

/// Monotone two-piece linear map of `[0, 1]` onto itself with a knot at
/// `k`, second slope `ratio` times the first.
pub fn warp_time(x: f64, knot: f64, ratio: f64) -> f64 {
    let a = 1.0 / (knot + ratio * (1.0 - knot));
    if x <= knot {
        a * x
    } else {
        a * knot + a * ratio * (x - knot)
    }
}

/// Source frame of each output frame under warp, scale about the clip
/// center, then translation; clamped to the clip.
pub fn temporal_source(frames: usize, p: &AugmentParams) -> Vec<usize> {
    if frames == 1 {
        return vec![0];
    }
    let last = (frames - 1) as f64;
    (0..frames)
        .map(|j| {
            let mut x = j as f64 / last;
            if let Some((k, r)) = p.warp {
                x = warp_time(x, k, r);
            }
            let y = (0.5 + (x - 0.5) / p.temporal_scale) * last - p.shift as f64;
            y.round().clamp(0.0, last) as usize
        })
        .collect()
}

/// Output segment = output frames whose source lies inside the input
/// segment; contiguous because the source map is monotone.
fn remap_through(src: &[usize], annotations: &[FrameAnnotation]) -> Vec<FrameAnnotation> {
    let mut out = Vec::with_capacity(annotations.len());
    for a in annotations {
        let first = src.iter().position(|&s| s >= a.start_frame);
        let last = src.iter().rposition(|&s| s <= a.end_frame);
        if let (Some(f), Some(l)) = (first, last) {
            if f <= l {
                let mut b = a.clone();
                b.start_frame = f;
                b.end_frame = l;
                out.push(b);
            }
        }
    }
    out
}

/// Bilinear sample with zeros outside the plane.
fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let (y0, x0) = (y.floor(), x.floor());
    let (wy, wx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let at = |yy: i64, xx: i64| {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize]
        }
    };
    let mut v = (1.0 - wy) * (1.0 - wx) * at(y0, x0);
    if wx != 0.0 {
        v += (1.0 - wy) * wx * at(y0, x0 + 1);
    }
    if wy != 0.0 {
        v += wy * (1.0 - wx) * at(y0 + 1, x0);
        if wx != 0.0 {
            v += wy * wx * at(y0 + 1, x0 + 1);
        }
    }
    v
}

/// Rotation and scale about the frame center, then the crop window.
fn spatial(video: &VideoSample, p: &AugmentParams) -> Result<Tensor> {
    let (c, t, h, w) = (video.channels(), video.len(), video.height(), video.width());
    let size = p.crop;
    if p.top + size > h || p.left + size > w {
        return Err(Error::Invalid(format!(
            "{}: crop {size}x{size} at ({}, {}) does not fit a {h}x{w} frame",
            video.id, p.top, p.left
        )));
    }
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (sin, cos) = p.rotation.sin_cos();
    // inverse map: output pixel -> input coordinate
    let mut coords = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let oy = (p.top + y) as f64 - cy;
            let ox = (p.left + x) as f64 - cx;
            let iy = (cos * oy - sin * ox) / p.spatial_scale + cy;
            let ix = (sin * oy + cos * ox) / p.spatial_scale + cx;
            coords.push((iy, ix));
        }
    }
    let mut out = Tensor::zeros(&[c, t, size, size]);
    let (d, o) = (video.frames.data(), out.data_mut());
    for plane in 0..c * t {
        let src = &d[plane * h * w..(plane + 1) * h * w];
        let dst = &mut o[plane * size * size..(plane + 1) * size * size];
        for (v, &(iy, ix)) in dst.iter_mut().zip(&coords) {
            *v = bilinear(src, h, w, iy, ix);
        }
    }
    Ok(out)
}

/// Temporal remap, optional subsampling to `target` frames, then the
/// spatial transform and crop. Annotations follow every temporal step.
pub fn augment(video: &VideoSample, p: &AugmentParams, target: Option<usize>) -> Result<VideoSample> {
    if video.is_empty() {
        return Err(Error::Data(format!("{}: empty video", video.id)));
    }
    let src = temporal_source(video.len(), p);
    let remapped = VideoSample::new(
        &video.id,
        video.modality,
        gather_frames(&video.frames, &src),
        remap_through(&src, &video.annotations),
        video.seed,
    )?;
    let timed = match target {
        Some(n) => subsample_nearest(&remapped, n)?,
        None => remapped,
    };
    let frames = spatial(&timed, p)?;
    VideoSample::new(&video.id, video.modality, frames, timed.annotations, video.seed)
}

pub fn augment_random<R: Rng + ?Sized>(
    video: &VideoSample,
    cfg: &AugmentationConfig,
    target: Option<usize>,
    rng: &mut R,
) -> Result<VideoSample> {
    let p = cfg.sample(video.height(), video.width(), rng)?;
    augment(video, &p, target)
}

/// Inference preprocessing: center crop and subsampling.
pub fn prepare_eval(video: &VideoSample, crop: usize, target: usize) -> Result<VideoSample> {
    subsample_nearest(&center_crop(video, crop)?, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate::Modality;

    fn ramp_video(t: usize, h: usize, w: usize, segs: Vec<FrameAnnotation>) -> VideoSample {
        let data = (0..t * h * w).map(|i| i as f64).collect();
        let frames = Tensor::from_vec(&[1, t, h, w], data).unwrap();
        VideoSample::new("v", Modality::Depth, frames, segs, 0).unwrap()
    }

    #[test]
    fn subsample_formula() {
        assert_eq!(subsample_indices(4, 2), vec![0, 3]);
        assert_eq!(subsample_indices(7, 7), (0..7).collect::<Vec<_>>());
        assert_eq!(subsample_indices(10, 5), vec![0, 2, 5, 7, 9]);
    }

    #[test]
    fn subsample_remaps_segment() {
        let v = ramp_video(10, 2, 2, vec![FrameAnnotation::new("v", 1, 2, 8)]);
        let s = subsample_nearest(&v, 5).unwrap();
        assert_eq!((s.annotations[0].start_frame, s.annotations[0].end_frame), (1, 4));
        assert_eq!(s.len(), 5);
        assert_eq!(s.frames.data()[4], 8.0); // frame 2 of input starts at 2*4
    }

    #[test]
    fn subsample_identity() {
        let v = ramp_video(6, 2, 3, vec![FrameAnnotation::new("v", 2, 1, 3)]);
        assert_eq!(subsample_nearest(&v, 6).unwrap(), v);
    }

    #[test]
    fn identity_augmentation_is_center_crop() {
        let v = ramp_video(8, 6, 6, vec![FrameAnnotation::new("v", 1, 2, 5)]);
        let p = AugmentParams::identity(6, 6, 4);
        let a = augment(&v, &p, None).unwrap();
        assert_eq!(a, center_crop(&v, 4).unwrap());
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        let q = AugmentationConfig::none(4).sample(6, 6, &mut rng).unwrap();
        // random crop position still drawn, everything else neutral
        assert_eq!(q.rotation, 0.0);
        assert_eq!(q.temporal_scale, 1.0);
        assert!(q.warp.is_none());
    }

    #[test]
    fn translation_shifts_segments() {
        let v = ramp_video(20, 4, 4, vec![FrameAnnotation::new("v", 1, 5, 9)]);
        let p = AugmentParams {
            shift: 3,
            ..AugmentParams::identity(4, 4, 4)
        };
        let a = augment(&v, &p, None).unwrap();
        assert_eq!((a.annotations[0].start_frame, a.annotations[0].end_frame), (8, 12));
        assert_eq!(a.frames.data()[8 * 16], v.frames.data()[5 * 16]);
    }

    #[test]
    fn warp_is_monotone_onto() {
        for &(k, r) in &[(0.3, 0.8), (0.7, 1.25), (0.5, 1.0)] {
            assert!(warp_time(0.0, k, r).abs() < 1e-15);
            assert!((warp_time(1.0, k, r) - 1.0).abs() < 1e-12);
            let xs: Vec<f64> = (0..=50).map(|i| warp_time(i as f64 / 50.0, k, r)).collect();
            assert!(xs.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn oversized_crop_rejected() {
        let v = ramp_video(2, 4, 4, vec![]);
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        assert!(AugmentationConfig::none(5).sample(4, 4, &mut rng).is_err());
        assert!(crop(&v, 1, 0, 4).is_err());
    }

    #[test]
    fn rotation_by_quarter_turn() {
        let v = ramp_video(1, 3, 3, vec![]);
        let p = AugmentParams {
            rotation: std::f64::consts::FRAC_PI_2,
            ..AugmentParams::identity(3, 3, 3)
        };
        let a = augment(&v, &p, None).unwrap();
        // center fixed, corners permuted
        assert!((a.frames.data()[4] - 4.0).abs() < 1e-12);
        let mut got: Vec<i64> = a.frames.data().iter().map(|x| x.round() as i64).collect();
        got.sort();
        assert_eq!(got, (0..9).collect::<Vec<_>>());
    }
}
