use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// 3D convolutions feeding a GRU (the full model).
    #[serde(rename = "3dcnn-gru")]
    Conv3dGru,
    /// 3D convolutions with the GRU replaced by a per-frame linear map.
    #[serde(rename = "3dcnn-linear")]
    Conv3dLinear,
    /// Purely spatial `1 x 3 x 3` kernels feeding a GRU.
    #[serde(rename = "2dcnn-gru")]
    Conv2dGru,
}

impl Variant {
    pub fn temporal_kernel(self) -> usize {
        match self {
            Variant::Conv2dGru => 1,
            _ => 3,
        }
    }

    pub fn recurrent(self) -> bool {
        !matches!(self, Variant::Conv3dLinear)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Conv3dGru => "3dcnn-gru",
            Variant::Conv3dLinear => "3dcnn-linear",
            Variant::Conv2dGru => "2dcnn-gru",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "3dcnn-gru" => Ok(Variant::Conv3dGru),
            "3dcnn-linear" => Ok(Variant::Conv3dLinear),
            "2dcnn-gru" => Ok(Variant::Conv2dGru),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    Full,
}

/// Architecture hyper-parameters. Every conv block is
/// conv(3x3x3) -> batch-norm -> ReLU -> volumetric dropout -> 1x2x2 max-pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub preset: Preset,
    pub variant: Variant,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub conv_widths: Vec<usize>,
    pub linear_width: usize,
    pub recurrent_units: usize,
    /// Gesture classes, not counting the no-gesture class.
    pub num_classes: usize,
    pub conv_dropout: f64,
    pub linear_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk(8)
    }
}

impl ModelConfig {
    /// Small model for 32 x 32 crops. Linear dropout is 0.5 rather than the
    /// full-scale 0.85, which starves a 64-unit layer.
    pub fn desk(num_classes: usize) -> Self {
        ModelConfig {
            preset: Preset::Desk,
            variant: Variant::Conv3dGru,
            in_channels: 1,
            height: 32,
            width: 32,
            conv_widths: vec![8, 16, 32],
            linear_width: 64,
            recurrent_units: 32,
            num_classes,
            conv_dropout: 0.1,
            linear_dropout: 0.5,
        }
    }

    /// Full-size widths: 112 x 112 crops, two 2048-unit linear layers and
    /// 1024 recurrent units. The conv widths are an assumption (four blocks
    /// doubling from 32, pooled down to 7 x 7).
    pub fn full(num_classes: usize) -> Self {
        ModelConfig {
            preset: Preset::Full,
            variant: Variant::Conv3dGru,
            in_channels: 1,
            height: 112,
            width: 112,
            conv_widths: vec![32, 64, 128, 256],
            linear_width: 2048,
            recurrent_units: 1024,
            num_classes,
            conv_dropout: 0.1,
            linear_dropout: 0.85,
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Width of the classification head (gestures plus no-gesture).
    pub fn output_classes(&self) -> usize {
        self.num_classes + 1
    }

    pub fn feature_dim(&self) -> usize {
        self.recurrent_units
    }

    pub fn pooled_extent(&self) -> (usize, usize) {
        let s = 1 << self.conv_widths.len();
        (self.height / s, self.width / s)
    }

    pub fn flat_features(&self) -> usize {
        let (h, w) = self.pooled_extent();
        self.conv_widths.last().copied().unwrap_or(self.in_channels) * h * w
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.conv_widths.is_empty() || self.conv_widths.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.num_classes == 0 || self.linear_width == 0 || self.recurrent_units == 0 {
            return Err(Error::Config("class count and layer widths must be positive".into()));
        }
        let s = 1 << self.conv_widths.len();
        if self.height == 0 || self.width == 0 || self.height % s != 0 || self.width % s != 0 {
            return Err(Error::Config(format!(
                "frame extent {}x{} must be a positive multiple of {s} for {} pooling stages",
                self.height,
                self.width,
                self.conv_widths.len()
            )));
        }
        for p in [self.conv_dropout, self.linear_dropout] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
            }
        }
        Ok(())
    }
}
