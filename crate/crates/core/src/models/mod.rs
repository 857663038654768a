//! 1D residual backbones, multi-tap concentration assemblies and their
//! complexity counters.

pub mod checkpoint;
pub mod complexity;
pub mod config;
pub mod network;

use rand::Rng;

use crate::autodiff::Element;
use crate::error::Result;

pub use checkpoint::{checkpoint_dtype, load_checkpoint, save_checkpoint, Checkpoint};
pub use complexity::{analytic_param_count, count_macs, count_params, layer_census, peak_memory_estimate, LayerCost};
pub use config::{
    BackboneConfig, BackboneKind, BiodgConfig, ConcentrationConfig, ModelConfig, ModelSpec, PoolConfig, StageConfig,
    TapPoint, TapPreset, TapSelection, Task, DEFAULT_WIDTHS,
};
pub use network::{
    backbone_layout, concentration_forward, default_taps, resolve_taps, validate_taps, ConvInfo, EdgeInfo, Forward,
    Model, Network, Trace,
};

/// ResNet-18 baseline with a pooled linear head.
pub fn build_resnet18_1d<T: Element, R: Rng>(
    in_channels: usize,
    num_classes: usize,
    task: Task,
    rng: &mut R,
) -> Result<Model<T>> {
    let cfg = ModelConfig::baseline(BackboneConfig::resnet18(in_channels), num_classes, task);
    Model::build(&cfg, rng)
}

/// S-ResNet baseline with a pooled linear head.
pub fn build_sresnet_1d<T: Element, R: Rng>(
    in_channels: usize,
    num_classes: usize,
    task: Task,
    rng: &mut R,
) -> Result<Model<T>> {
    let cfg = ModelConfig::baseline(BackboneConfig::sresnet(in_channels), num_classes, task);
    Model::build(&cfg, rng)
}

/// Config of a multi-tap assembly: one concentration pipeline per tap, head
/// over the concatenated pipeline outputs.
pub fn assemble_biodg(
    backbone: BackboneConfig,
    taps: TapSelection,
    pipeline: ConcentrationConfig,
    num_classes: usize,
    task: Task,
) -> Result<ModelConfig> {
    let cfg = ModelConfig {
        backbone,
        num_classes,
        task,
        biodg: Some(BiodgConfig::new(taps, pipeline)),
    };
    cfg.validate()?;
    if let Some(b) = &cfg.biodg {
        resolve_taps(&cfg.backbone, b)?;
    }
    Ok(cfg)
}
