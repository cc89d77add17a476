//! Run configuration: a TOML file with one section per concern.
//!
//! Values resolve as command-line flags > file > preset defaults. The file
//! is merged key by key over the defaults of the preset it names, so a file
//! only needs the fields it changes.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{GeneratorConfig, Modality};
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::metrics::{NTTD_BOUNDS, ROC_GRID_POINTS};
use crate::model::{ModelConfig, Preset, Variant};
use crate::train::TrainConfig;

/// Written next to every output so a run can be repeated from it.
pub const CONFIG_ECHO_FILE: &str = "effective_config.toml";

/// Which modalities a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalitySelection {
    Depth,
    Color,
    Flow,
    All,
}

impl ModalitySelection {
    /// Depth always comes first: the other modalities start from it.
    pub fn modalities(self) -> Vec<Modality> {
        match self {
            ModalitySelection::Depth => vec![Modality::Depth],
            ModalitySelection::Color => vec![Modality::Color],
            ModalitySelection::Flow => vec![Modality::Flow],
            ModalitySelection::All => Modality::ALL.to_vec(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModalitySelection::Depth => "depth",
            ModalitySelection::Color => "color",
            ModalitySelection::Flow => "flow",
            ModalitySelection::All => "all",
        }
    }
}

impl FromStr for ModalitySelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "depth" => Ok(ModalitySelection::Depth),
            "color" => Ok(ModalitySelection::Color),
            "flow" => Ok(ModalitySelection::Flow),
            "all" => Ok(ModalitySelection::All),
            other => Err(Error::Config(format!(
                "unknown modality '{other}' (expected depth, color, flow or all)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub variant: Variant,
    pub modality: ModalitySelection,
    pub conv_widths: Vec<usize>,
    pub linear_width: usize,
    pub recurrent_units: usize,
    pub conv_dropout: f64,
    pub linear_dropout: f64,
}

impl ModelSection {
    pub fn for_preset(preset: Preset) -> Self {
        let m = match preset {
            Preset::Desk => ModelConfig::desk(1),
            Preset::Full => ModelConfig::full(1),
        };
        ModelSection {
            preset,
            variant: m.variant,
            modality: ModalitySelection::Depth,
            conv_widths: m.conv_widths,
            linear_width: m.linear_width,
            recurrent_units: m.recurrent_units,
            conv_dropout: m.conv_dropout,
            linear_dropout: m.linear_dropout,
        }
    }

    /// Network shape for one modality at crop size `crop`.
    pub fn network(&self, num_classes: usize, modality: Modality, crop: usize) -> ModelConfig {
        ModelConfig {
            preset: self.preset,
            variant: self.variant,
            in_channels: modality.channels(),
            height: crop,
            width: crop,
            conv_widths: self.conv_widths.clone(),
            linear_width: self.linear_width,
            recurrent_units: self.recurrent_units,
            num_classes,
            conv_dropout: self.conv_dropout,
            linear_dropout: self.linear_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Thresholds in the GPM ROC and the epsilon sweep, evenly spaced on [0, 1].
    pub roc_points: usize,
    /// Mean-NTtD bounds for the early-detection table.
    pub nttd_bounds: Vec<f64>,
    /// Write per-frame trace files for every test video.
    pub traces: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            roc_points: ROC_GRID_POINTS,
            nttd_bounds: NTTD_BOUNDS.to_vec(),
            traces: true,
        }
    }
}

/// Output locations. Relative entries resolve against `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub out: PathBuf,
    pub corpus: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            out: PathBuf::from("."),
            corpus: PathBuf::from("corpus"),
            checkpoints: PathBuf::from("checkpoints"),
            reports: PathBuf::from("reports"),
        }
    }
}

impl PathsConfig {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.resolve(&self.corpus)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.resolve(&self.checkpoints)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.resolve(&self.reports)
    }

    pub fn checkpoint_file(&self, modality: Modality) -> PathBuf {
        self.checkpoint_dir().join(format!("{}.ckpt", modality.name()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Drives corpus generation, weight init and every training draw.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub model: ModelSection,
    pub training: TrainConfig,
    pub detector: DetectorConfig,
    pub evaluation: EvaluationConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_preset(Preset::Desk)
    }
}

/// Command-line values that win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub modality: Option<ModalitySelection>,
    pub epsilon: Option<f64>,
    /// `Some(None)` selects global voting.
    pub tau: Option<Option<f64>>,
    pub out: Option<PathBuf>,
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl RunConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let generator = match preset {
            Preset::Desk => GeneratorConfig::default(),
            Preset::Full => GeneratorConfig {
                height: 120,
                width: 160,
                slot_frames: 80,
                gesture_frames: (35, 55),
                min_gap: 8,
                amplitude: (20.0, 28.0),
                center_jitter: 8.0,
                ..GeneratorConfig::default()
            },
        };
        RunConfig {
            seed: 7,
            generator,
            model: ModelSection::for_preset(preset),
            training: TrainConfig::for_preset(preset),
            detector: DetectorConfig::default(),
            evaluation: EvaluationConfig::default(),
            paths: PathsConfig::default(),
        }
    }

    /// Parses a config file body and validates the result.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let preset = match file.get("model").and_then(|m| m.get("preset")) {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into()
                .map_err(|e| Error::Config(format!("model.preset: {e}")))?,
        };
        let mut value = toml::Value::try_from(RunConfig::for_preset(preset))
            .map_err(|e| Error::Config(format!("default config: {e}")))?;
        merge(&mut value, toml::Value::Table(file));
        let cfg: RunConfig = value.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = o.modality {
            self.model.modality = m;
        }
        if let Some(e) = o.epsilon {
            self.detector.epsilon = e;
        }
        if let Some(t) = o.tau {
            self.detector.tau = t;
        }
        if let Some(out) = &o.out {
            self.paths.out = out.clone();
        }
    }

    pub fn crop(&self) -> usize {
        self.training.augmentation.crop
    }

    pub fn network(&self, modality: Modality) -> ModelConfig {
        self.model.network(self.generator.num_classes, modality, self.crop())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed must be at most {}, got {}", i64::MAX, self.seed)));
        }
        self.generator.validate()?;
        self.training.validate()?;
        self.detector.validate()?;
        let crop = self.crop();
        if crop > self.generator.height || crop > self.generator.width {
            return Err(Error::Config(format!(
                "crop {crop} does not fit {}x{} frames",
                self.generator.height, self.generator.width
            )));
        }
        if !(0.0..=1.0).contains(&self.model.conv_dropout) || !(0.0..1.0).contains(&self.model.linear_dropout) {
            return Err(Error::Config("dropout rates must lie in [0, 1)".into()));
        }
        self.network(Modality::Depth).validate()?;
        let fused = self.model.modality.modalities().len();
        let w = self.detector.fusion_weights.len();
        if w != 0 && w != fused {
            return Err(Error::Config(format!(
                "{w} fusion weights given for {fused} modalities"
            )));
        }
        if self.evaluation.roc_points < 2 {
            return Err(Error::Config("roc_points must be at least 2".into()));
        }
        if self.evaluation.nttd_bounds.iter().any(|b| !(*b > 0.0 && *b <= 1.0)) {
            return Err(Error::Config("nttd_bounds must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Writes the effective config into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(CONFIG_ECHO_FILE);
        crate::codec::write_file(&path, self.to_toml()?.as_bytes())?;
        Ok(path)
    }
}
