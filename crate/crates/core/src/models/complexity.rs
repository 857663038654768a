use crate::autodiff::{Element, ParamStore};
use crate::error::{Error, Result};
use crate::models::config::ModelConfig;
use crate::models::network::{backbone_layout, resolve_taps};

/// A weighted layer as seen by the complexity counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerCost {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        out_len: usize,
        bias: bool,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    BatchNorm {
        channels: usize,
    },
}

impl LayerCost {
    /// Multiply-accumulates for one sample.
    pub fn macs(&self) -> u64 {
        match *self {
            LayerCost::Conv {
                in_channels,
                out_channels,
                kernel,
                out_len,
                ..
            } => (in_channels * out_channels * kernel * out_len) as u64,
            LayerCost::Linear {
                in_features,
                out_features,
            } => (in_features * out_features) as u64,
            LayerCost::BatchNorm { .. } => 0,
        }
    }

    pub fn params(&self) -> u64 {
        match *self {
            LayerCost::Conv {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => (in_channels * out_channels * kernel + if bias { out_channels } else { 0 }) as u64,
            LayerCost::Linear {
                in_features,
                out_features,
            } => (in_features * out_features + out_features) as u64,
            LayerCost::BatchNorm { channels } => 2 * channels as u64,
        }
    }
}

/// Every weighted layer of the assembly described by `config`, with temporal
/// lengths for an input of `input_len` samples.
pub fn layer_census(config: &ModelConfig, input_len: usize) -> Result<Vec<LayerCost>> {
    config.validate()?;
    let (convs, edges) = backbone_layout(&config.backbone, Some(input_len));
    let mut layers = Vec::new();
    for c in &convs {
        let out_len = c
            .out_len
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::Config(format!("input length {input_len} too short for layer {}", c.name)))?;
        layers.push(LayerCost::Conv {
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            out_len,
            bias: c.bias,
        });
        layers.push(LayerCost::BatchNorm {
            channels: c.out_channels,
        });
    }
    let head_in = match &config.biodg {
        Some(biodg) => {
            let width = biodg.compress_channels;
            let taps = resolve_taps(&config.backbone, biodg)?;
            for tap in &taps {
                let edge = edges.iter().find(|e| e.name == tap.location).expect("validated tap");
                layers.push(LayerCost::Conv {
                    in_channels: edge.channels,
                    out_channels: width,
                    kernel: 1,
                    out_len: edge.length.unwrap_or(0),
                    bias: true,
                });
            }
            taps.len() * width
        }
        None => config.backbone.out_channels(),
    };
    layers.push(LayerCost::Linear {
        in_features: head_in,
        out_features: config.num_classes,
    });
    Ok(layers)
}

/// Trainable scalar count from layer shapes alone.
pub fn analytic_param_count(config: &ModelConfig) -> Result<u64> {
    // Lengths do not affect parameter counts; any admissible length works.
    let len = admissible_len(config);
    Ok(layer_census(config, len)?.iter().map(LayerCost::params).sum())
}

fn admissible_len(config: &ModelConfig) -> usize {
    let depth = config.backbone.stages.len() + 2;
    (config.backbone.stem_kernel + 2) << depth
}

/// Trainable scalar count summed over the named parameters of a built model.
pub fn count_params<T: Element>(params: &ParamStore<T>) -> u64 {
    params.iter().map(|p| p.value.numel() as u64).sum()
}

/// Multiply-accumulates of one forward pass of a single `[C, L]` sample.
pub fn count_macs(config: &ModelConfig, input_shape: [usize; 2]) -> Result<u64> {
    let [channels, len] = input_shape;
    if channels != config.backbone.in_channels {
        return Err(Error::Config(format!(
            "input has {channels} channels, model expects {}",
            config.backbone.in_channels
        )));
    }
    Ok(layer_census(config, len)?.iter().map(LayerCost::macs).sum())
}

/// Bytes held by parameters plus every recorded activation of a one-sample
/// forward pass, at `dtype_size` bytes per scalar.
pub fn peak_memory_estimate(config: &ModelConfig, input_shape: [usize; 2], dtype_size: usize) -> Result<u64> {
    let [channels, len] = input_shape;
    let params = analytic_param_count(config)?;
    let (convs, edges) = backbone_layout(&config.backbone, Some(len));
    // Each conv yields a pre-norm and a post-norm tensor; edges add relu/add outputs.
    let conv_acts: usize = convs.iter().map(|c| 2 * c.out_channels * c.out_len.unwrap_or(0)).sum();
    let edge_acts: usize = edges.iter().map(|e| e.channels * e.length.unwrap_or(0)).sum();
    let pipeline_acts: usize = match &config.biodg {
        Some(b) => {
            let taps = resolve_taps(&config.backbone, b)?;
            taps.iter()
                .map(|t| {
                    let e = edges.iter().find(|e| e.name == t.location).expect("validated tap");
                    2 * b.compress_channels * e.length.unwrap_or(0) + b.compress_channels
                })
                .sum()
        }
        None => config.backbone.out_channels(),
    };
    let scalars = params as usize + channels * len + conv_acts + edge_acts + pipeline_acts + config.num_classes;
    Ok((scalars * dtype_size) as u64)
}
