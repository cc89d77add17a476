//! Evaluation quantities: time to detect, frame-level rates, ROC curves,
//! localization overlap and offline accuracy, plus the plain-text report
//! files they are written to.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::{FrameAnnotation, NO_GESTURE};
use crate::codec::write_file;
use crate::detector::{candidate_regions, online_events, DetectionEvent};
use crate::error::{Error, Result};
use crate::model::ModelOutput;

/// Default number of thresholds in an ROC sweep, uniform on `[0, 1]`.
pub const ROC_GRID_POINTS: usize = 101;
/// Latency bounds for the early-detection table.
pub const NTTD_BOUNDS: [f64; 3] = [0.25, 0.5, 0.75];

pub fn threshold_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Fraction of the gesture observed at the trigger, counting frames
/// inclusively; `None` when the trigger is outside the segment.
pub fn nttd(trigger: usize, gt: &FrameAnnotation) -> Option<f64> {
    gt.contains(trigger)
        .then(|| (trigger - gt.start_frame + 1) as f64 / (gt.end_frame - gt.start_frame + 1) as f64)
}

/// Pooled frame counts; rates are micro-averaged over everything added.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateCounts {
    /// Gesture frames predicted with their true class.
    pub true_positive: u64,
    pub gesture_frames: u64,
    /// No-gesture frames predicted as any gesture.
    pub false_positive: u64,
    pub background_frames: u64,
}

impl RateCounts {
    pub fn from_frames(pred: &[usize], gt: &[usize]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::shape("frame rates", &[pred.len()], &[gt.len()]));
        }
        let mut c = RateCounts::default();
        for (&p, &g) in pred.iter().zip(gt) {
            if g == NO_GESTURE {
                c.background_frames += 1;
                if p != NO_GESTURE {
                    c.false_positive += 1;
                }
            } else {
                c.gesture_frames += 1;
                if p == g {
                    c.true_positive += 1;
                }
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: &RateCounts) {
        self.true_positive += other.true_positive;
        self.gesture_frames += other.gesture_frames;
        self.false_positive += other.false_positive;
        self.background_frames += other.background_frames;
    }

    pub fn tpr(&self) -> Option<f64> {
        (self.gesture_frames > 0).then(|| self.true_positive as f64 / self.gesture_frames as f64)
    }

    pub fn fpr(&self) -> Option<f64> {
        (self.background_frames > 0).then(|| self.false_positive as f64 / self.background_frames as f64)
    }
}

/// `(TPR, FPR)` of one prediction sequence.
pub fn frame_rates(pred: &[usize], gt: &[usize]) -> Result<(Option<f64>, Option<f64>)> {
    let c = RateCounts::from_frames(pred, gt)?;
    Ok((c.tpr(), c.fpr()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Points sorted by FPR (then TPR) ascending, with the `(0, 0)` and
/// `(1, 1)` corners added when missing.
pub fn sort_roc(points: &[RocPoint]) -> Vec<RocPoint> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)));
    if pts.first().map_or(true, |p| p.fpr > 0.0 || p.tpr > 0.0) {
        pts.insert(
            0,
            RocPoint {
                threshold: f64::INFINITY,
                fpr: 0.0,
                tpr: 0.0,
            },
        );
    }
    if pts.last().map_or(true, |p| p.fpr < 1.0 || p.tpr < 1.0) {
        pts.push(RocPoint {
            threshold: f64::NEG_INFINITY,
            fpr: 1.0,
            tpr: 1.0,
        });
    }
    pts
}

/// Trapezoidal area under an ROC curve given in any order.
pub fn roc_auc(points: &[RocPoint]) -> f64 {
    let pts = sort_roc(points);
    pts.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Sweeps `score > threshold` over `grid`; positives count as detected
/// only when `score` clears the threshold.
pub fn score_roc(scores: &[f64], positive: &[bool], grid: &[f64]) -> Result<Vec<RocPoint>> {
    if scores.len() != positive.len() {
        return Err(Error::shape("score roc", &[scores.len()], &[positive.len()]));
    }
    let pos = positive.iter().filter(|p| **p).count();
    let neg = positive.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("ROC needs both positive and negative frames".into()));
    }
    Ok(grid
        .iter()
        .map(|&th| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (s, &p) in scores.iter().zip(positive) {
                if *s > th {
                    if p {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            RocPoint {
                threshold: th,
                fpr: fp as f64 / neg as f64,
                tpr: tp as f64 / pos as f64,
            }
        })
        .collect())
}

/// Maximal runs of one gesture class in a per-frame label sequence.
pub fn label_segments(labels: &[usize]) -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        let c = labels[t];
        let mut e = t;
        while e + 1 < labels.len() && labels[e + 1] == c {
            e += 1;
        }
        if c != NO_GESTURE {
            out.push((c, t, e));
        }
        t = e + 1;
    }
    out
}

/// Per-class intersection over union of two segment sets
/// `(class, start, end)`, inclusive frames. Classes absent from both are
/// left out.
pub fn jaccard_by_class(pred: &[(usize, usize, usize)], gt: &[(usize, usize, usize)]) -> BTreeMap<usize, f64> {
    let mut classes: Vec<usize> = pred.iter().chain(gt).map(|s| s.0).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut out = BTreeMap::new();
    for c in classes {
        let frames = |segs: &[(usize, usize, usize)]| {
            let mut v: Vec<usize> = segs.iter().filter(|s| s.0 == c).flat_map(|s| s.1..=s.2).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        let (a, b) = (frames(pred), frames(gt));
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        let union = a.len() + b.len() - inter;
        out.insert(c, inter as f64 / union as f64);
    }
    out
}

/// Mean over the classes present in either set; `None` if neither has any.
pub fn jaccard(pred: &[(usize, usize, usize)], gt: &[(usize, usize, usize)]) -> Option<f64> {
    let per = jaccard_by_class(pred, gt);
    (!per.is_empty()).then(|| per.values().sum::<f64>() / per.len() as f64)
}

pub fn annotation_segments(segments: &[FrameAnnotation]) -> Vec<(usize, usize, usize)> {
    segments.iter().map(|a| (a.class_id, a.start_frame, a.end_frame)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub accuracy: f64,
    /// `confusion[truth][predicted]`, indexed by class id.
    pub confusion: Vec<Vec<u64>>,
}

pub fn offline_accuracy(predicted: &[usize], truth: &[usize], classes: usize) -> Result<Accuracy> {
    if predicted.len() != truth.len() {
        return Err(Error::shape("offline accuracy", &[predicted.len()], &[truth.len()]));
    }
    if predicted.is_empty() {
        return Err(Error::Data("offline accuracy over zero videos".into()));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut correct = 0;
    for (&p, &t) in predicted.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::Invalid(format!("class id {} out of range for {classes} classes", p.max(t))));
        }
        confusion[t][p] += 1;
        if p == t {
            correct += 1;
        }
    }
    Ok(Accuracy {
        accuracy: correct as f64 / predicted.len() as f64,
        confusion,
    })
}

/// Per-frame classes implied by a set of events: each event labels the
/// candidate region around its trigger (or just the trigger frame when the
/// frame classifier calls it background) with the event class.
pub fn event_frame_labels(output: &ModelOutput, events: &[DetectionEvent]) -> Vec<usize> {
    let regions = candidate_regions(output);
    let mut labels = vec![NO_GESTURE; output.len()];
    for ev in events {
        let (s, e) = regions
            .iter()
            .find(|(s, e)| (*s..=*e).contains(&ev.frame))
            .copied()
            .unwrap_or((ev.frame, ev.frame));
        labels[s..=e].fill(ev.class);
    }
    labels
}

/// Detector behaviour at one threshold, pooled over a set of videos.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub epsilon: f64,
    pub tpr: f64,
    pub fpr: f64,
    /// Over correctly recognized gestures; `None` when there are none.
    pub mean_nttd: Option<f64>,
    pub recognized: usize,
    pub gestures: usize,
    pub false_events: usize,
}

/// Online detection at threshold `epsilon` over every video.
pub fn operating_point(
    outputs: &[ModelOutput],
    annotations: &[Vec<FrameAnnotation>],
    epsilon: f64,
    refractory: usize,
) -> Result<OperatingPoint> {
    if outputs.len() != annotations.len() {
        return Err(Error::shape("operating point", &[outputs.len()], &[annotations.len()]));
    }
    let mut counts = RateCounts::default();
    let (mut nttd_sum, mut recognized, mut gestures, mut false_events) = (0.0, 0usize, 0usize, 0usize);
    for (out, segs) in outputs.iter().zip(annotations) {
        let events = online_events(out, epsilon, refractory);
        let gt = crate::annotation::frame_labels(segs, out.len())?;
        counts.add(&RateCounts::from_frames(&event_frame_labels(out, &events), &gt)?);
        for ev in &events {
            if !segs.iter().any(|a| a.contains(ev.frame)) {
                false_events += 1;
            }
        }
        for a in segs {
            gestures += 1;
            if let Some(ev) = events.iter().find(|e| a.contains(e.frame)) {
                if ev.class == a.class_id {
                    recognized += 1;
                    nttd_sum += nttd(ev.frame, a).unwrap_or(1.0);
                }
            }
        }
    }
    Ok(OperatingPoint {
        epsilon,
        tpr: counts.tpr().unwrap_or(0.0),
        fpr: counts.fpr().unwrap_or(0.0),
        mean_nttd: (recognized > 0).then(|| nttd_sum / recognized as f64),
        recognized,
        gestures,
        false_events,
    })
}

pub fn sweep(
    outputs: &[ModelOutput],
    annotations: &[Vec<FrameAnnotation>],
    grid: &[f64],
    refractory: usize,
) -> Result<Vec<OperatingPoint>> {
    grid.iter()
        .map(|&e| operating_point(outputs, annotations, e, refractory))
        .collect()
}

/// Best operating point whose mean time to detect stays within `bound`:
/// highest TPR, then lowest FPR.
pub fn best_within(points: &[OperatingPoint], bound: f64) -> Option<OperatingPoint> {
    points
        .iter()
        .filter(|p| p.mean_nttd.is_some_and(|n| n <= bound))
        .copied()
        .reduce(|best, p| {
            if p.tpr > best.tpr || (p.tpr == best.tpr && p.fpr < best.fpr) {
                p
            } else {
                best
            }
        })
}

/// FPR-versus-NTtD curve points sorted by NTtD, skipping thresholds with
/// no recognized gesture.
pub fn nttd_fpr_curve(points: &[OperatingPoint]) -> Vec<OperatingPoint> {
    let mut pts: Vec<OperatingPoint> = points.iter().filter(|p| p.mean_nttd.is_some()).copied().collect();
    pts.sort_by(|a, b| {
        a.mean_nttd
            .unwrap_or(0.0)
            .total_cmp(&b.mean_nttd.unwrap_or(0.0))
            .then(a.epsilon.total_cmp(&b.epsilon))
    });
    pts
}

/// True when FPR never rises as NTtD grows along the curve.
pub fn curve_is_monotone(curve: &[OperatingPoint]) -> bool {
    curve.windows(2).all(|w| w[1].fpr <= w[0].fpr)
}

/// Everything measured for one modality (or the fused output).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityReport {
    pub modality: String,
    pub videos: usize,
    pub accuracy_peak: f64,
    pub accuracy_consensus: f64,
    pub accuracy_global: f64,
    pub tau: Option<f64>,
    pub confusion: Vec<Vec<u64>>,
    /// Online behaviour at the configured threshold.
    pub online: OperatingPoint,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
    /// Area under the per-frame ROC of the raw GPM score.
    pub gpm_auc: f64,
    pub sweep: Vec<OperatingPoint>,
    pub early: Vec<(f64, Option<OperatingPoint>)>,
    pub jaccard: f64,
    pub jaccard_per_class: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub modalities: Vec<String>,
    pub weights: Vec<f64>,
    /// Train-split frame accuracy per modality, then fused.
    pub train_frame_accuracy: Vec<f64>,
    pub fused_train_frame_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub reports: Vec<ModalityReport>,
    pub fusion: Option<FusionReport>,
}

/// Per-frame trace of one video.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub video_id: String,
    pub labels: Vec<usize>,
    pub targets: Vec<f64>,
    pub output: ModelOutput,
}

pub const SUMMARY_FILE: &str = "metrics_summary.csv";
pub const SUMMARY_HEADER: &str = "section,metric,value";
pub const ROC_HEADER: &str = "threshold,fpr,tpr";
pub const NTTD_HEADER: &str = "epsilon,mean_nttd,fpr,tpr,recognized,gestures,false_events";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn summary_rows(report: &MetricsReport) -> Vec<(String, String, String)> {
    let mut rows = Vec::new();
    for r in &report.reports {
        let m = &r.modality;
        let mut push = |k: String, v: String| rows.push((m.clone(), k, v));
        push("videos".into(), r.videos.to_string());
        push("accuracy_peak".into(), r.accuracy_peak.to_string());
        push("accuracy_consensus".into(), r.accuracy_consensus.to_string());
        push("accuracy_global_vote".into(), r.accuracy_global.to_string());
        push("tau".into(), opt(r.tau));
        push("online_epsilon".into(), r.online.epsilon.to_string());
        push("online_tpr_micro".into(), r.online.tpr.to_string());
        push("online_fpr_micro".into(), r.online.fpr.to_string());
        push("online_mean_nttd".into(), opt(r.online.mean_nttd));
        push("online_recognized".into(), r.online.recognized.to_string());
        push("online_false_events".into(), r.online.false_events.to_string());
        push("roc_auc".into(), r.auc.to_string());
        push("gpm_frame_auc".into(), r.gpm_auc.to_string());
        for (bound, p) in &r.early {
            push(format!("early_{bound}_epsilon"), opt(p.map(|p| p.epsilon)));
            push(format!("early_{bound}_mean_nttd"), opt(p.and_then(|p| p.mean_nttd)));
            push(format!("early_{bound}_tpr"), opt(p.map(|p| p.tpr)));
            push(format!("early_{bound}_fpr"), opt(p.map(|p| p.fpr)));
        }
        push("jaccard_mean".into(), r.jaccard.to_string());
        for (c, j) in &r.jaccard_per_class {
            push(format!("jaccard_class_{c}"), j.to_string());
        }
        for (t, row) in r.confusion.iter().enumerate() {
            for (p, n) in row.iter().enumerate() {
                push(format!("confusion_{t}_{p}"), n.to_string());
            }
        }
    }
    if let Some(f) = &report.fusion {
        for (m, (w, a)) in f.modalities.iter().zip(f.weights.iter().zip(&f.train_frame_accuracy)) {
            rows.push(("fusion".into(), format!("weight_{m}"), w.to_string()));
            rows.push(("fusion".into(), format!("train_frame_accuracy_{m}"), a.to_string()));
        }
        rows.push((
            "fusion".into(),
            "train_frame_accuracy_fused".into(),
            f.fused_train_frame_accuracy.to_string(),
        ));
    }
    rows
}

pub fn summary_text(report: &MetricsReport) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for (a, b, c) in summary_rows(report) {
        let _ = writeln!(s, "{a},{b},{c}");
    }
    s
}

pub fn roc_text(points: &[RocPoint]) -> String {
    let mut s = format!("{ROC_HEADER}\n");
    for p in sort_roc(points) {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.fpr, p.tpr);
    }
    s
}

pub fn nttd_text(points: &[OperatingPoint]) -> String {
    let mut s = format!("{NTTD_HEADER}\n");
    for p in nttd_fpr_curve(points) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            p.epsilon,
            opt(p.mean_nttd),
            p.fpr,
            p.tpr,
            p.recognized,
            p.gestures,
            p.false_events
        );
    }
    s
}

pub fn trace_header(classes: usize) -> String {
    let mut s = String::from("frame,label,gpm_target,gpm,class");
    for k in 0..classes {
        let _ = write!(s, ",prob_{k}");
    }
    s
}

pub fn trace_text(trace: &Trace) -> String {
    let k = trace.output.probs.first().map_or(0, |p| p.len());
    let mut s = trace_header(k);
    s.push('\n');
    for t in 0..trace.output.len() {
        let _ = write!(
            s,
            "{t},{},{},{},{}",
            trace.labels[t], trace.targets[t], trace.output.gpm[t], trace.output.classes[t]
        );
        for p in &trace.output.probs[t] {
            let _ = write!(s, ",{p}");
        }
        s.push('\n');
    }
    s
}

/// Writes the summary, one ROC and one NTtD file per report section, and
/// a trace per video.
pub fn emit_report(dir: &Path, report: &MetricsReport, traces: &[Trace]) -> Result<Vec<String>> {
    let mut written = Vec::new();
    let mut put = |name: String, text: String| -> Result<()> {
        write_file(&dir.join(&name), text.as_bytes())?;
        written.push(name);
        Ok(())
    };
    put(SUMMARY_FILE.into(), summary_text(report))?;
    for r in &report.reports {
        put(format!("roc_{}.csv", r.modality), roc_text(&r.roc))?;
        put(format!("nttd_fpr_{}.csv", r.modality), nttd_text(&r.sweep))?;
    }
    for t in traces {
        put(format!("traces/{}.csv", t.video_id), trace_text(t))?;
    }
    Ok(written)
}

fn parse_value(s: &str) -> Result<Option<f64>> {
    if s == "NA" {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Data(format!("not a number: '{s}'")))
}

/// `(section, metric, value)` rows of a summary table.
pub fn parse_summary(text: &str) -> Result<Vec<(String, String, Option<f64>)>> {
    let mut lines = text.lines();
    if lines.next() != Some(SUMMARY_HEADER) {
        return Err(Error::Data(format!("summary must start with '{SUMMARY_HEADER}'")));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 3 || f[0].is_empty() || f[1].is_empty() {
                return Err(Error::Data(format!("summary line {}: expected 3 fields", i + 2)));
            }
            Ok((f[0].to_string(), f[1].to_string(), parse_value(f[2])?))
        })
        .collect()
}

/// Numeric table with a known header; `NA` cells become `None`.
pub fn parse_table(text: &str, header: &str) -> Result<Vec<Vec<Option<f64>>>> {
    let mut lines = text.lines();
    if lines.next() != Some(header) {
        return Err(Error::Data(format!("table must start with '{header}'")));
    }
    let width = header.split(',').count();
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != width {
                return Err(Error::Data(format!(
                    "line {}: expected {width} fields, got {}",
                    i + 2,
                    f.len()
                )));
            }
            f.into_iter().map(parse_value).collect()
        })
        .collect()
}

pub fn parse_roc(text: &str) -> Result<Vec<RocPoint>> {
    parse_table(text, ROC_HEADER)?
        .into_iter()
        .map(|r| match r[..] {
            [Some(threshold), Some(fpr), Some(tpr)] => Ok(RocPoint { threshold, fpr, tpr }),
            _ => Err(Error::Data("ROC rows must be fully numeric".into())),
        })
        .collect()
}

/// Trace rows: frame index, label, target, GPM, class, probabilities.
pub fn parse_trace(text: &str) -> Result<Vec<Vec<f64>>> {
    let header = text.lines().next().unwrap_or_default();
    let k = header.split(',').filter(|c| c.starts_with("prob_")).count();
    if header != trace_header(k) {
        return Err(Error::Data("trace header does not match the expected layout".into()));
    }
    parse_table(text, header)?
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|v| v.ok_or_else(|| Error::Data("trace cells must be numeric".into())))
                .collect()
        })
        .collect()
}
