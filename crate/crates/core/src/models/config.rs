use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Resnet18,
    Sresnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Multilabel,
    Multiclass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    pub out_channels: usize,
    pub stride: usize,
}

/// Residual backbone layout. Convolutions feeding batch norm carry no bias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub in_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_channels: usize,
    pub stem_pool: Option<PoolConfig>,
    pub stages: Vec<StageConfig>,
    pub block_kernel: usize,
}

pub const DEFAULT_WIDTHS: [usize; 4] = [64, 128, 256, 512];

impl BackboneConfig {
    /// Standard ResNet-18 recipe with 1D layers: 7-tap stride-2 stem, 3-tap
    /// stride-2 max pool, four stages of two basic blocks.
    pub fn resnet18(in_channels: usize) -> Self {
        BackboneConfig {
            kind: BackboneKind::Resnet18,
            in_channels,
            stem_kernel: 7,
            stem_stride: 2,
            stem_channels: 64,
            stem_pool: Some(PoolConfig {
                kernel: 3,
                stride: 2,
                padding: 1,
            }),
            stages: DEFAULT_WIDTHS
                .iter()
                .enumerate()
                .map(|(i, &w)| StageConfig {
                    blocks: 2,
                    out_channels: w,
                    stride: if i == 0 { 1 } else { 2 },
                })
                .collect(),
            block_kernel: 3,
        }
    }

    /// Small residual network: stem plus four single-block stages, each
    /// downsampling by two with a projected skip edge (13 convolutions).
    pub fn sresnet(in_channels: usize) -> Self {
        BackboneConfig {
            kind: BackboneKind::Sresnet,
            in_channels,
            stem_kernel: 7,
            stem_stride: 2,
            stem_channels: 64,
            stem_pool: None,
            stages: DEFAULT_WIDTHS
                .iter()
                .map(|&w| StageConfig {
                    blocks: 1,
                    out_channels: w,
                    stride: 2,
                })
                .collect(),
            block_kernel: 3,
        }
    }

    pub fn for_kind(kind: BackboneKind, in_channels: usize) -> Self {
        match kind {
            BackboneKind::Resnet18 => Self::resnet18(in_channels),
            BackboneKind::Sresnet => Self::sresnet(in_channels),
        }
    }

    /// Replaces stem and stage widths, keeping depth and strides.
    pub fn with_widths(mut self, stem: usize, stages: &[usize]) -> Result<Self> {
        if stages.len() != self.stages.len() {
            return Err(Error::Config(format!(
                "{} stage widths given, backbone has {} stages",
                stages.len(),
                self.stages.len()
            )));
        }
        self.stem_channels = stem;
        for (s, &w) in self.stages.iter_mut().zip(stages) {
            s.out_channels = w;
        }
        Ok(self)
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(self.stem_channels, |s| s.out_channels)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("stem_kernel", self.stem_kernel),
            ("stem_stride", self.stem_stride),
            ("stem_channels", self.stem_channels),
            ("block_kernel", self.block_kernel),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("backbone.{name} must be >= 1")));
            }
        }
        if self.block_kernel.is_multiple_of(2) {
            return Err(Error::Config("backbone.block_kernel must be odd".into()));
        }
        if self.stages.is_empty() {
            return Err(Error::Config("backbone needs at least one stage".into()));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.blocks == 0 || s.out_channels == 0 || s.stride == 0 {
                return Err(Error::Config(format!(
                    "backbone stage {} needs blocks, out_channels and stride >= 1",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Per-tap concentration pipeline: 1×1 conv → spatial dropout → global average pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub compress_channels: usize,
    pub dropout_rate: f64,
}

impl Default for ConcentrationConfig {
    fn default() -> Self {
        ConcentrationConfig {
            compress_channels: 64,
            dropout_rate: 0.1,
        }
    }
}

impl ConcentrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.compress_channels == 0 {
            return Err(Error::Config("compress_channels must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TapPreset {
    #[serde(rename = "ecg-resnet18")]
    EcgResnet18,
    #[serde(rename = "ecg-sresnet")]
    EcgSresnet,
    #[serde(rename = "eeg-sresnet")]
    EegSresnet,
}

impl TapPreset {
    pub fn backbone(self) -> BackboneKind {
        match self {
            TapPreset::EcgResnet18 => BackboneKind::Resnet18,
            TapPreset::EcgSresnet | TapPreset::EegSresnet => BackboneKind::Sresnet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TapSelection {
    Preset(TapPreset),
    Locations(Vec<String>),
}

/// A named edge of the backbone graph that feeds one concentration pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapPoint {
    pub id: String,
    pub location: String,
}

impl TapPoint {
    pub fn at(location: impl Into<String>) -> Self {
        let location = location.into();
        TapPoint {
            id: location.clone(),
            location,
        }
    }
}

fn default_compress() -> usize {
    ConcentrationConfig::default().compress_channels
}

fn default_dropout() -> f64 {
    ConcentrationConfig::default().dropout_rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiodgConfig {
    pub taps: TapSelection,
    #[serde(default = "default_compress")]
    pub compress_channels: usize,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
}

impl BiodgConfig {
    pub fn new(taps: TapSelection, pipeline: ConcentrationConfig) -> Self {
        BiodgConfig {
            taps,
            compress_channels: pipeline.compress_channels,
            dropout_rate: pipeline.dropout_rate,
        }
    }

    pub fn pipeline(&self) -> ConcentrationConfig {
        ConcentrationConfig {
            compress_channels: self.compress_channels,
            dropout_rate: self.dropout_rate,
        }
    }
}

/// Everything needed to build a [`crate::models::Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub num_classes: usize,
    pub task: Task,
    /// Present for the multi-tap assembly; absent for a plain pooled-backbone head.
    pub biodg: Option<BiodgConfig>,
}

impl ModelConfig {
    pub fn baseline(backbone: BackboneConfig, num_classes: usize, task: Task) -> Self {
        ModelConfig {
            backbone,
            num_classes,
            task,
            biodg: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be >= 1".into()));
        }
        if let Some(b) = &self.biodg {
            b.pipeline().validate()?;
            if let TapSelection::Locations(l) = &b.taps {
                if l.is_empty() {
                    return Err(Error::Config("biodg needs at least one tap".into()));
                }
            }
        }
        Ok(())
    }
}

/// Model section of a config file: backbone kind plus optional overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub backbone: BackboneKind,
    #[serde(default)]
    pub stem_channels: Option<usize>,
    #[serde(default)]
    pub widths: Option<Vec<usize>>,
    #[serde(default)]
    pub biodg: Option<BiodgConfig>,
}

impl ModelSpec {
    pub fn resolve(&self, in_channels: usize, num_classes: usize, task: Task) -> Result<ModelConfig> {
        let mut backbone = BackboneConfig::for_kind(self.backbone, in_channels);
        if self.stem_channels.is_some() || self.widths.is_some() {
            let stem = self.stem_channels.unwrap_or(backbone.stem_channels);
            let widths: Vec<usize> = match &self.widths {
                Some(w) => w.clone(),
                None => backbone.stages.iter().map(|s| s.out_channels).collect(),
            };
            backbone = backbone.with_widths(stem, &widths)?;
        }
        let cfg = ModelConfig {
            backbone,
            num_classes,
            task,
            biodg: self.biodg.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
