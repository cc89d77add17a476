//! The four commands as library calls: generate a corpus, train one model
//! per modality, evaluate them, and stream a video through a model.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annotation::frame_labels;
use crate::codec::{write_file, VideoReader};
use crate::config::RunConfig;
use crate::corpus::{load_manifest, load_split, subsample_indices, write_corpus, Manifest, Modality, Split, VideoSample};
use crate::detector::{
    classify_consensus, classify_peak, detect_offline, fit_fusion_weights, fuse, StreamSession,
};
use crate::error::{Error, Result};
use crate::metrics::{
    annotation_segments, best_within, emit_report, event_frame_labels, jaccard_by_class, label_segments,
    offline_accuracy, operating_point, roc_auc, score_roc, sort_roc, sweep, threshold_grid, FusionReport,
    MetricsReport, ModalityReport, RocPoint, Trace,
};
use crate::model::{Checkpoint, ModelOutput, Network};
use crate::objectives::gpm_target;
use crate::tensor::Tensor;
use crate::train::{clip_frames, predict, train, EpochLog, TrainJob};

pub const TRAIN_LOG_HEADER: &str = "modality,epoch,learning_rate,gpm_loss,class_loss,loss,class_head_grad";

pub fn generate(cfg: &RunConfig, force: bool) -> Result<Manifest> {
    cfg.validate()?;
    let root = cfg.paths.corpus_dir();
    let m = write_corpus(&root, &cfg.generator, cfg.seed, force)?;
    cfg.echo(&root)?;
    Ok(m)
}

/// Loads the manifest and checks it was produced by this generator config.
pub fn open_corpus(cfg: &RunConfig) -> Result<(PathBuf, Manifest)> {
    let root = cfg.paths.corpus_dir();
    let m = load_manifest(&root)?;
    if m.generator != cfg.generator {
        return Err(Error::Config(format!(
            "the corpus at {} was generated with a different [generator] section; regenerate it with --force",
            root.display()
        )));
    }
    Ok((root, m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub modality: Modality,
    pub path: PathBuf,
    pub sha256: String,
    /// Depth checkpoint the weights were inflated from.
    pub inflated_from: Option<PathBuf>,
    pub epochs: u64,
}

fn modality_stream(m: Modality) -> u64 {
    match m {
        Modality::Depth => 1,
        Modality::Color => 2,
        Modality::Flow => 3,
    }
}

fn log_line(l: &EpochLog) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        l.modality, l.epoch, l.learning_rate, l.gpm_loss, l.class_loss, l.loss, l.class_head_grad
    )
}

/// Trains every selected modality. Depth trains from scratch; color and
/// flow start from the inflated depth checkpoint when one exists and are
/// fine-tuned, otherwise they train from scratch.
pub fn train_models(cfg: &RunConfig, log: &mut dyn FnMut(&EpochLog)) -> Result<Vec<TrainedModel>> {
    cfg.validate()?;
    let (root, manifest) = open_corpus(cfg)?;
    let videos = load_split(&root, &manifest, Split::Train)?;
    let dir = cfg.paths.checkpoint_dir();
    let mut out = Vec::new();
    for m in cfg.model.modality.modalities() {
        let depth_path = cfg.paths.checkpoint_file(Modality::Depth);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(modality_stream(m));
        let (mut net, epochs, inflated_from) = if m != Modality::Depth && depth_path.exists() {
            let depth = Checkpoint::load_for(&depth_path, &cfg.network(Modality::Depth))?;
            let net = depth.inflate(m.channels())?.to_network()?;
            (net, cfg.training.finetune_epochs, Some(depth_path))
        } else {
            (Network::new(cfg.network(m), &mut rng)?, cfg.training.epochs, None)
        };
        let job = TrainJob {
            videos: &videos,
            modality: m,
            slot_frames: cfg.generator.slot_frames,
            epochs,
            seed: cfg.seed,
            config: &cfg.training,
        };
        let mut lines = vec![TRAIN_LOG_HEADER.to_string()];
        let opt = train(&mut net, &job, &mut |l| {
            lines.push(log_line(l));
            log(l);
        })?;
        let ck = Checkpoint::from_network(&net, Some(&opt));
        let path = cfg.paths.checkpoint_file(m);
        ck.save(&path)?;
        lines.push(String::new());
        write_file(&dir.join(format!("train_log_{}.csv", m.name())), lines.join("\n").as_bytes())?;
        out.push(TrainedModel {
            modality: m,
            path,
            sha256: ck.sha256(),
            inflated_from,
            epochs,
        });
    }
    cfg.echo(&dir)?;
    Ok(out)
}

pub fn load_model(cfg: &RunConfig, m: Modality) -> Result<Network> {
    let path = cfg.paths.checkpoint_file(m);
    if !path.exists() {
        return Err(Error::Data(format!(
            "no {m} checkpoint at {}; run `train --modality {m}` first",
            path.display()
        )));
    }
    Checkpoint::load_for(&path, &cfg.network(m))?.to_network()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Every metric for one set of test predictions.
pub fn modality_report(
    name: &str,
    videos: &[VideoSample],
    outputs: &[ModelOutput],
    cfg: &RunConfig,
) -> Result<ModalityReport> {
    if videos.len() != outputs.len() || videos.is_empty() {
        return Err(Error::shape("modality report", &[videos.len()], &[outputs.len()]));
    }
    let classes = cfg.generator.num_classes + 1;
    let det = &cfg.detector;
    let truth: Vec<usize> = videos
        .iter()
        .map(|v| v.primary_class().ok_or_else(|| Error::Data(format!("{} has no gesture", v.id))))
        .collect::<Result<_>>()?;
    let peak: Vec<usize> = outputs.iter().map(classify_peak).collect::<Result<_>>()?;
    let cons: Vec<usize> = outputs.iter().map(|o| classify_consensus(o, det.tau)).collect::<Result<_>>()?;
    let global: Vec<usize> = outputs.iter().map(|o| classify_consensus(o, None)).collect::<Result<_>>()?;
    let acc = offline_accuracy(&peak, &truth, classes)?;
    let anns: Vec<_> = videos.iter().map(|v| v.annotations.clone()).collect();

    let grid = threshold_grid(cfg.evaluation.roc_points);
    let points = sweep(outputs, &anns, &grid, det.refractory)?;
    let roc: Vec<RocPoint> = points
        .iter()
        .map(|p| RocPoint {
            threshold: p.epsilon,
            fpr: p.fpr,
            tpr: p.tpr,
        })
        .collect();
    let roc = sort_roc(&roc);

    let mut scores = Vec::new();
    let mut positive = Vec::new();
    for (v, o) in videos.iter().zip(outputs) {
        scores.extend_from_slice(&o.gpm);
        positive.extend(frame_labels(&v.annotations, o.len())?.into_iter().map(|c| c != 0));
    }
    let gpm_auc = roc_auc(&score_roc(&scores, &positive, &grid)?);

    let mut per_video = Vec::new();
    let mut per_class: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (v, o) in videos.iter().zip(outputs) {
        let pred = label_segments(&event_frame_labels(o, &detect_offline(o)));
        let by_class = jaccard_by_class(&pred, &annotation_segments(&v.annotations));
        if !by_class.is_empty() {
            per_video.push(mean(&by_class.values().copied().collect::<Vec<_>>()));
        }
        for (c, j) in by_class {
            per_class.entry(c).or_default().push(j);
        }
    }

    Ok(ModalityReport {
        modality: name.to_string(),
        videos: videos.len(),
        accuracy_peak: acc.accuracy,
        accuracy_consensus: offline_accuracy(&cons, &truth, classes)?.accuracy,
        accuracy_global: offline_accuracy(&global, &truth, classes)?.accuracy,
        tau: det.tau,
        confusion: acc.confusion,
        online: operating_point(outputs, &anns, det.epsilon, det.refractory)?,
        auc: roc_auc(&roc),
        roc,
        gpm_auc,
        early: cfg.evaluation.nttd_bounds.iter().map(|&b| (b, best_within(&points, b))).collect(),
        sweep: points,
        jaccard: mean(&per_video),
        jaccard_per_class: per_class.into_iter().map(|(c, js)| (c, mean(&js))).collect(),
    })
}

pub fn traces(videos: &[VideoSample], outputs: &[ModelOutput]) -> Result<Vec<Trace>> {
    videos
        .iter()
        .zip(outputs)
        .map(|(v, o)| {
            Ok(Trace {
                video_id: v.id.clone(),
                labels: frame_labels(&v.annotations, o.len())?,
                targets: gpm_target(&v.annotations, o.len())?,
                output: o.clone(),
            })
        })
        .collect()
}

fn frame_accuracy(outputs: &[ModelOutput], labels: &[Vec<usize>]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for (o, l) in outputs.iter().zip(labels) {
        hit += o.classes.iter().zip(l).filter(|(a, b)| a == b).count();
        n += l.len();
    }
    hit as f64 / n.max(1) as f64
}

/// Everything `evaluate` computed, before it is written out.
pub struct Evaluation {
    pub report: MetricsReport,
    /// Prepared test videos and the primary (fused or single) outputs.
    pub videos: Vec<VideoSample>,
    pub outputs: Vec<ModelOutput>,
}

pub fn evaluate(cfg: &RunConfig) -> Result<Evaluation> {
    cfg.validate()?;
    let (root, manifest) = open_corpus(cfg)?;
    let test = load_split(&root, &manifest, Split::Test)?;
    let modalities = cfg.model.modality.modalities();
    let (slot, per_slot) = (cfg.generator.slot_frames, cfg.training.frames_per_slot);
    let nets: Vec<Network> = modalities.iter().map(|&m| load_model(cfg, m)).collect::<Result<_>>()?;

    let mut reports = Vec::new();
    let mut test_outputs = Vec::new();
    let mut prepared = Vec::new();
    for (&m, net) in modalities.iter().zip(&nets) {
        let preds = predict(net, &test, m, slot, per_slot)?;
        let (videos, outputs): (Vec<_>, Vec<_>) = preds.into_iter().unzip();
        reports.push(modality_report(m.name(), &videos, &outputs, cfg)?);
        test_outputs.push(outputs);
        prepared = videos;
    }

    let mut fusion = None;
    let mut primary = test_outputs[0].clone();
    if modalities.len() > 1 {
        let train_videos = load_split(&root, &manifest, Split::Train)?;
        let mut train_outputs = Vec::new();
        let mut labels = Vec::new();
        for (&m, net) in modalities.iter().zip(&nets) {
            let preds = predict(net, &train_videos, m, slot, per_slot)?;
            if labels.is_empty() {
                labels = preds
                    .iter()
                    .map(|(v, o)| frame_labels(&v.annotations, o.len()))
                    .collect::<Result<_>>()?;
            }
            train_outputs.push(preds.into_iter().map(|p| p.1).collect::<Vec<_>>());
        }
        let weights = if cfg.detector.fusion_weights.is_empty() {
            fit_fusion_weights(&train_outputs, &labels)?
        } else {
            let s: f64 = cfg.detector.fusion_weights.iter().sum();
            cfg.detector.fusion_weights.iter().map(|w| w / s).collect()
        };
        let fuse_all = |per: &[Vec<ModelOutput>]| -> Result<Vec<ModelOutput>> {
            (0..per[0].len())
                .map(|v| fuse(&per.iter().map(|o| &o[v]).collect::<Vec<_>>(), &weights))
                .collect()
        };
        let fused_train = fuse_all(&train_outputs)?;
        primary = fuse_all(&test_outputs)?;
        reports.push(modality_report("fused", &prepared, &primary, cfg)?);
        fusion = Some(FusionReport {
            modalities: modalities.iter().map(|m| m.name().to_string()).collect(),
            weights: weights.clone(),
            train_frame_accuracy: train_outputs.iter().map(|o| frame_accuracy(o, &labels)).collect(),
            fused_train_frame_accuracy: frame_accuracy(&fused_train, &labels),
        });
    }
    Ok(Evaluation {
        report: MetricsReport { reports, fusion },
        videos: prepared,
        outputs: primary,
    })
}

/// Runs `evaluate` and writes the report files; returns their names.
pub fn evaluate_and_emit(cfg: &RunConfig) -> Result<(Evaluation, Vec<String>)> {
    let ev = evaluate(cfg)?;
    let dir = cfg.paths.report_dir();
    let tr = if cfg.evaluation.traces {
        traces(&ev.videos, &ev.outputs)?
    } else {
        Vec::new()
    };
    let files = emit_report(&dir, &ev.report, &tr)?;
    cfg.echo(&dir)?;
    Ok((ev, files))
}

/// Picks which raw frames reach the network: the eval subsampling map when
/// the length is known, a fixed-rate nearest map otherwise.
pub struct FrameSelector {
    known: Option<Vec<usize>>,
    slot_frames: usize,
    frames_per_slot: usize,
    next: usize,
}

impl FrameSelector {
    pub fn new(total: Option<usize>, slot_frames: usize, frames_per_slot: usize) -> Self {
        let known = total.filter(|&t| t > 0).map(|t| {
            let n = clip_frames(t, slot_frames, frames_per_slot);
            subsample_indices(t, n)
        });
        FrameSelector {
            known,
            slot_frames,
            frames_per_slot,
            next: 0,
        }
    }

    fn source(&self, i: usize) -> Option<usize> {
        match &self.known {
            Some(v) => v.get(i).copied(),
            None => Some((2 * i * self.slot_frames + self.frames_per_slot) / (2 * self.frames_per_slot)),
        }
    }

    /// How many network frames raw frame `raw` feeds (0 when skipped).
    pub fn take(&mut self, raw: usize) -> usize {
        let mut n = 0;
        while self.source(self.next) == Some(raw) {
            self.next += 1;
            n += 1;
        }
        n
    }
}

fn center_crop_frame(frame: &Tensor, size: usize) -> Result<Tensor> {
    let s = frame.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    if size > h || size > w {
        return Err(Error::Data(format!("{h}x{w} frames are smaller than the {size}x{size} model input")));
    }
    let (top, left) = ((h - size) / 2, (w - size) / 2);
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for y in 0..size {
            let from = (ch * h + top + y) * w + left;
            out.extend_from_slice(&frame.data()[from..from + size]);
        }
    }
    Tensor::from_vec(&[c, size, size], out)
}

/// One detection printed by `stream`, indexed by raw input frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamEvent {
    pub frame: usize,
    pub class: usize,
    pub gpm: f64,
    pub probs: Vec<f64>,
}

impl StreamEvent {
    pub fn line(&self) -> String {
        let mut s = format!("{},{},{}", self.frame, self.class, self.gpm);
        for p in &self.probs {
            s.push(',');
            s.push_str(&p.to_string());
        }
        s
    }
}

pub fn stream_header(classes: usize) -> String {
    let mut s = String::from("frame_index,class_id,gpm_value");
    for k in 0..classes {
        s.push_str(&format!(",prob_{k}"));
    }
    s
}

/// Streams a video through `net`, writing one line per event as it fires.
/// An empty input (no header at all) yields no events.
pub fn stream<R: Read>(
    cfg: &RunConfig,
    net: &Network,
    source: R,
    sink: &mut dyn Write,
) -> Result<Vec<StreamEvent>> {
    let mut source = source;
    let mut first = [0u8; 1];
    let n = source.read(&mut first).map_err(|e| Error::io("<stream>", e))?;
    let write = |sink: &mut dyn Write, s: &str| -> Result<()> {
        writeln!(sink, "{s}").map_err(|e| Error::io("<output>", e))
    };
    if n == 0 {
        write(sink, &stream_header(net.config.output_classes()))?;
        return Ok(Vec::new());
    }
    let mut reader = VideoReader::new(first.as_slice().chain(source))?;
    let header = reader.header();
    if header.channels != net.config.in_channels {
        return Err(Error::Data(format!(
            "the video has {} channel(s) but the model expects {}",
            header.channels, net.config.in_channels
        )));
    }
    write(sink, &stream_header(net.config.output_classes()))?;
    let mut selector = FrameSelector::new(header.frames, cfg.generator.slot_frames, cfg.training.frames_per_slot);
    let mut session = StreamSession::new(net, cfg.detector.epsilon, cfg.detector.refractory);
    let mut events = Vec::new();
    let mut raw = 0;
    while let Some(frame) = reader.next_frame()? {
        let uses = selector.take(raw);
        if uses > 0 {
            let cropped = center_crop_frame(&frame, net.config.height)?;
            for _ in 0..uses {
                let step = session.step(&cropped)?;
                if let Some(ev) = step.event {
                    let e = StreamEvent {
                        frame: raw,
                        class: ev.class,
                        gpm: ev.gpm,
                        probs: ev.probs,
                    };
                    write(sink, &e.line())?;
                    events.push(e);
                }
            }
        }
        raw += 1;
    }
    sink.flush().map_err(|e| Error::io("<output>", e))?;
    Ok(events)
}

pub fn stream_file(cfg: &RunConfig, net: &Network, input: &Path, sink: &mut dyn Write) -> Result<Vec<StreamEvent>> {
    let f = std::fs::File::open(input).map_err(|e| Error::io(input, e))?;
    stream(cfg, net, std::io::BufReader::new(f), sink)
}
