//! Invariant checkers shared by the property tests and the acceptance
//! report.

use earlygest::annotation::FrameAnnotation;
use earlygest::corpus::{augment, center_crop, subsample_nearest, AugmentParams, Modality, VideoSample};
use earlygest::model::{EncoderStream, Network};
use earlygest::objectives::gpm_target;
use earlygest::Tensor;
use rand::Rng;

/// Segments as `(gap before, length, class)` laid out left to right and cut
/// at `frames`.
pub fn layout(frames: usize, pieces: &[(usize, usize, usize)]) -> Vec<FrameAnnotation> {
    let mut out = Vec::new();
    let mut t = 0;
    for &(gap, len, class) in pieces {
        let s = t + gap;
        let e = s + len.max(1) - 1;
        if e >= frames {
            break;
        }
        out.push(FrameAnnotation::new("v", class, s, e));
        t = e + 1;
    }
    out
}

pub fn random_pieces<R: Rng>(rng: &mut R) -> (usize, Vec<(usize, usize, usize)>) {
    let frames = rng.gen_range(1..120);
    let pieces = (0..rng.gen_range(0..6))
        .map(|_| (rng.gen_range(0..15), rng.gen_range(1..30), rng.gen_range(1..10)))
        .collect();
    (frames, pieces)
}

pub fn random_params<R: Rng>(rng: &mut R) -> (AugmentParams, Option<usize>) {
    let p = AugmentParams {
        rotation: rng.gen_range(-0.5..0.5),
        spatial_scale: rng.gen_range(0.8..1.2),
        temporal_scale: rng.gen_range(0.5..1.5),
        warp: rng.gen_bool(0.5).then(|| (rng.gen_range(0.1..0.9), rng.gen_range(0.5..2.0))),
        shift: rng.gen_range(-20..=20),
        top: rng.gen_range(0..=2),
        left: rng.gen_range(0..=2),
        crop: 2,
    };
    let target = rng.gen_bool(0.7).then(|| rng.gen_range(1..100));
    (p, target)
}

/// Range, background, endpoint and monotonicity conditions on the targets
/// of one annotated clip, plus the annotation layout itself.
pub fn check_targets(segs: &[FrameAnnotation], frames: usize) -> Result<(), String> {
    for w in segs.windows(2) {
        if w[1].start_frame <= w[0].end_frame {
            return Err(format!("overlapping segments {segs:?}"));
        }
    }
    if let Some(a) = segs.iter().find(|a| a.start_frame > a.end_frame || a.end_frame >= frames) {
        return Err(format!("segment {a:?} outside 0..{frames}"));
    }
    let g = gpm_target(segs, frames).map_err(|e| e.to_string())?;
    if g.len() != frames {
        return Err(format!("{} targets for {frames} frames", g.len()));
    }
    if let Some(v) = g.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(format!("target {v} outside [0, 1]"));
    }
    for t in 0..frames {
        if !segs.iter().any(|a| a.contains(t)) && g[t] != 0.0 {
            return Err(format!("background frame {t} has target {}", g[t]));
        }
    }
    for a in segs {
        let (s, e) = (a.start_frame, a.end_frame);
        if g[e] != 1.0 {
            return Err(format!("segment {s}..={e} ends at {}", g[e]));
        }
        if s < e && g[s] != 0.0 {
            return Err(format!("segment {s}..={e} starts at {}", g[s]));
        }
        if let Some(t) = (s..e).find(|&t| g[t + 1] <= g[t]) {
            return Err(format!("segment {s}..={e} not increasing at {t}"));
        }
    }
    Ok(())
}

fn tiny_video(frames: usize, segs: Vec<FrameAnnotation>) -> Result<VideoSample, String> {
    let data = (0..frames * 16).map(|i| i as f64).collect();
    let t = Tensor::from_vec(&[1, frames, 4, 4], data).map_err(|e| e.to_string())?;
    VideoSample::new("v", Modality::Depth, t, segs, 0).map_err(|e| e.to_string())
}

/// Checks the targets of the raw annotations and of every preprocessing and
/// augmentation output derived from them. Returns the number of annotation
/// sets checked.
pub fn check_through_augmentation(
    frames: usize,
    pieces: &[(usize, usize, usize)],
    params: &AugmentParams,
    target: Option<usize>,
) -> Result<usize, String> {
    let segs = layout(frames, pieces);
    check_targets(&segs, frames).map_err(|e| format!("raw: {e}"))?;
    let video = tiny_video(frames, segs)?;
    let mut derived = vec![
        ("center crop", center_crop(&video, 2)),
        ("augment", augment(&video, params, target)),
        ("augment, native length", augment(&video, params, None)),
    ];
    if let Some(n) = target {
        derived.push(("subsample", subsample_nearest(&video, n)));
    }
    let mut checked = 1;
    for (name, v) in derived {
        let v = v.map_err(|e| format!("{name}: {e}"))?;
        check_targets(&v.annotations, v.len()).map_err(|e| format!("{name} {params:?} {target:?}: {e}"))?;
        checked += 1;
    }
    Ok(checked)
}

/// Largest output difference between `net` on `input` and its inflation to
/// `channels` inputs on the input copied into every channel.
pub fn inflation_gap(net: &Network, channels: usize, input: &Tensor) -> f64 {
    let inflated = net.inflate(channels).unwrap();
    let (n, _, t, h, w) = input.dims5().unwrap();
    let plane = t * h * w;
    let mut wide = Vec::with_capacity(n * channels * plane);
    for v in input.data().chunks(plane) {
        for _ in 0..channels {
            wide.extend_from_slice(v);
        }
    }
    let wide = Tensor::from_vec(&[n, channels, t, h, w], wide).unwrap();
    output_gap(&net.forward(input).unwrap(), &inflated.forward(&wide).unwrap())
}

fn output_gap(a: &[earlygest::model::ModelOutput], b: &[earlygest::model::ModelOutput]) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (p, q) in x.gpm.iter().zip(&y.gpm) {
            worst = worst.max((p - q).abs());
        }
        for (p, q) in x.probs.iter().flatten().zip(y.probs.iter().flatten()) {
            worst = worst.max((p - q).abs());
        }
    }
    worst
}

/// Largest difference between whole-clip inference and frame-by-frame
/// streaming of a `C x T x H x W` clip.
pub fn streaming_gap(net: &Network, clip: &Tensor) -> f64 {
    let s = clip.shape().to_vec();
    let (c, t, h, w) = (s[0], s[1], s[2], s[3]);
    let whole = net.forward(&clip.clone().reshape(&[1, c, t, h, w]).unwrap()).unwrap();
    let mut enc = EncoderStream::new(net);
    let (mut gpm, mut probs) = (Vec::new(), Vec::new());
    for f in 0..t {
        let mut frame = Vec::with_capacity(c * h * w);
        for ch in 0..c {
            let at = (ch * t + f) * h * w;
            frame.extend_from_slice(&clip.data()[at..at + h * w]);
        }
        let (g, p) = enc.step(net, &Tensor::from_vec(&[c, h, w], frame).unwrap()).unwrap();
        gpm.push(g);
        probs.push(p);
    }
    output_gap(&whole, &[earlygest::model::ModelOutput::new(gpm, probs)])
}
