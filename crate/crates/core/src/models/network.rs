use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::autodiff::{BatchNormState, Element, Graph, Mode, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::config::{
    BackboneConfig, BackboneKind, BiodgConfig, ModelConfig, TapPoint, TapPreset, TapSelection,
};

/// One named edge of the backbone graph, with its feature-map geometry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeInfo {
    pub name: String,
    pub channels: usize,
    /// Temporal length, when an input length was supplied.
    pub length: Option<usize>,
}

/// A convolution as seen by the complexity counters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvInfo {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
    pub out_len: Option<usize>,
}

fn out_len(len: Option<usize>, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    len.and_then(|l| {
        let padded = l + 2 * padding;
        (padded >= kernel).then(|| (padded - kernel) / stride + 1)
    })
}

/// Walks the backbone layout, listing every convolution and every tappable edge.
pub fn backbone_layout(cfg: &BackboneConfig, input_len: Option<usize>) -> (Vec<ConvInfo>, Vec<EdgeInfo>) {
    let mut convs = Vec::new();
    let mut edges = Vec::new();
    let stem_pad = cfg.stem_kernel / 2;
    let mut len = out_len(input_len, cfg.stem_kernel, cfg.stem_stride, stem_pad);
    convs.push(ConvInfo {
        name: "stem.conv".into(),
        in_channels: cfg.in_channels,
        out_channels: cfg.stem_channels,
        kernel: cfg.stem_kernel,
        stride: cfg.stem_stride,
        padding: stem_pad,
        bias: false,
        out_len: len,
    });
    edges.push(EdgeInfo {
        name: "stem".into(),
        channels: cfg.stem_channels,
        length: len,
    });
    if let Some(p) = cfg.stem_pool {
        len = out_len(len, p.kernel, p.stride, p.padding);
        edges.push(EdgeInfo {
            name: "stem.pool".into(),
            channels: cfg.stem_channels,
            length: len,
        });
    }
    let mut channels = cfg.stem_channels;
    let k = cfg.block_kernel;
    for (si, stage) in cfg.stages.iter().enumerate() {
        for b in 0..stage.blocks {
            let name = format!("layer{}.{}", si + 1, b);
            let stride = if b == 0 { stage.stride } else { 1 };
            let out = stage.out_channels;
            let mid = out_len(len, k, stride, k / 2);
            convs.push(ConvInfo {
                name: format!("{name}.conv1"),
                in_channels: channels,
                out_channels: out,
                kernel: k,
                stride,
                padding: k / 2,
                bias: false,
                out_len: mid,
            });
            edges.push(EdgeInfo {
                name: format!("{name}.conv1"),
                channels: out,
                length: mid,
            });
            let end = out_len(mid, k, 1, k / 2);
            convs.push(ConvInfo {
                name: format!("{name}.conv2"),
                in_channels: out,
                out_channels: out,
                kernel: k,
                stride: 1,
                padding: k / 2,
                bias: false,
                out_len: end,
            });
            edges.push(EdgeInfo {
                name: format!("{name}.conv2"),
                channels: out,
                length: end,
            });
            if stride != 1 || channels != out {
                let plen = out_len(len, 1, stride, 0);
                convs.push(ConvInfo {
                    name: format!("{name}.proj"),
                    in_channels: channels,
                    out_channels: out,
                    kernel: 1,
                    stride,
                    padding: 0,
                    bias: false,
                    out_len: plen,
                });
                edges.push(EdgeInfo {
                    name: format!("{name}.proj"),
                    channels: out,
                    length: plen,
                });
            }
            edges.push(EdgeInfo {
                name: format!("{name}.out"),
                channels: out,
                length: end,
            });
            channels = out;
            len = end;
        }
    }
    edges.push(EdgeInfo {
        name: "final".into(),
        channels,
        length: len,
    });
    (convs, edges)
}

/// Tap locations for a named preset.
///
/// Block outputs are the residual-branch outputs (`conv2`), projections are
/// the downsampling skip edges, and `final` is the pre-pool backbone output.
pub fn default_taps(backbone: &BackboneConfig, preset: TapPreset) -> Result<Vec<TapPoint>> {
    if backbone.kind != preset.backbone() {
        return Err(Error::Config(format!(
            "tap preset {preset:?} needs a {:?} backbone, got {:?}",
            preset.backbone(),
            backbone.kind
        )));
    }
    let locations: Vec<&str> = match preset {
        TapPreset::EcgResnet18 => vec![
            "stem",
            "layer1.0.conv1",
            "layer1.0.conv2",
            "layer1.1.conv2",
            "layer2.0.conv1",
            "layer2.0.conv2",
            "layer2.0.proj",
            "layer2.1.conv2",
            "layer3.0.conv2",
            "layer3.0.proj",
            "layer3.1.conv2",
            "layer4.0.conv2",
            "layer4.0.proj",
            "layer4.1.conv2",
            "final",
        ],
        TapPreset::EcgSresnet => vec![
            "stem",
            "layer1.0.conv2",
            "layer2.0.conv2",
            "layer2.0.proj",
            "layer3.0.conv2",
            "layer3.0.proj",
            "layer4.0.conv2",
            "layer4.0.proj",
            "final",
        ],
        TapPreset::EegSresnet => vec!["stem", "layer2.0.conv2", "layer3.0.conv2", "layer4.0.conv2", "final"],
    };
    let taps: Vec<TapPoint> = locations.into_iter().map(TapPoint::at).collect();
    validate_taps(backbone, &taps)?;
    Ok(taps)
}

pub fn validate_taps(backbone: &BackboneConfig, taps: &[TapPoint]) -> Result<()> {
    if taps.is_empty() {
        return Err(Error::Config("at least one tap is required".into()));
    }
    let (_, edges) = backbone_layout(backbone, None);
    let mut seen = std::collections::HashSet::new();
    for tap in taps {
        if !edges.iter().any(|e| e.name == tap.location) {
            return Err(Error::Config(format!(
                "tap `{}` names nonexistent edge `{}`",
                tap.id, tap.location
            )));
        }
        if !seen.insert(tap.id.as_str()) {
            return Err(Error::Config(format!("duplicate tap id `{}`", tap.id)));
        }
    }
    Ok(())
}

pub fn resolve_taps(backbone: &BackboneConfig, biodg: &BiodgConfig) -> Result<Vec<TapPoint>> {
    match &biodg.taps {
        TapSelection::Preset(p) => default_taps(backbone, *p),
        TapSelection::Locations(locs) => {
            let taps: Vec<TapPoint> = locs.iter().map(TapPoint::at).collect();
            validate_taps(backbone, &taps)?;
            Ok(taps)
        }
    }
}

#[derive(Debug, Clone)]
struct ConvBn {
    weight: ParamId,
    gamma: ParamId,
    beta: ParamId,
    bn: usize,
    stride: usize,
    padding: usize,
}

#[derive(Debug, Clone)]
struct BasicBlock {
    name: String,
    conv1: ConvBn,
    conv2: ConvBn,
    proj: Option<ConvBn>,
}

#[derive(Debug, Clone)]
struct Pipeline {
    tap: TapPoint,
    weight: ParamId,
    bias: ParamId,
    dropout: f64,
}

/// Record of one forward pass: every backbone edge and the exact tensor each
/// pipeline consumed.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub edges: Vec<(String, Var)>,
    pub pipeline_inputs: Vec<Var>,
}

impl Trace {
    pub fn edge(&self, name: &str) -> Option<Var> {
        self.edges.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub logits: Var,
    /// Head input: concatenated pipeline outputs, or pooled backbone features.
    pub embedding: Var,
}

/// Layer structure and non-trainable state of a model. Parameters live in a
/// separate [`ParamStore`] so gradient checks can perturb them freely.
#[derive(Debug, Clone)]
pub struct Network<T> {
    config: ModelConfig,
    stem: ConvBn,
    pool: Option<crate::models::config::PoolConfig>,
    blocks: Vec<BasicBlock>,
    taps: Vec<TapPoint>,
    pipelines: Vec<Pipeline>,
    head_weight: ParamId,
    head_bias: ParamId,
    head_in: usize,
    bn_states: Vec<BatchNormState<T>>,
    bn_names: Vec<String>,
}

/// A built model: parameters plus network.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub params: ParamStore<T>,
    pub net: Network<T>,
}

struct Builder<'a, T: Element, R: Rng> {
    params: ParamStore<T>,
    bn_states: Vec<BatchNormState<T>>,
    bn_names: Vec<String>,
    rng: &'a mut R,
}

impl<T: Element, R: Rng> Builder<'_, T, R> {
    fn tensor(&mut self, name: String, shape: Vec<usize>, values: Vec<f64>) -> Result<ParamId> {
        let t = Tensor::from_f64(shape, &values)?;
        self.params.add(name, t)
    }

    /// Kaiming-normal (fan-out, relu gain) conv weights followed by batch norm.
    fn conv_bn(
        &mut self,
        name: &str,
        bn_name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<ConvBn> {
        let std = (2.0 / (cout * kernel) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let w: Vec<f64> = (0..cout * cin * kernel).map(|_| normal.sample(self.rng)).collect();
        let weight = self.tensor(format!("{name}.weight"), vec![cout, cin, kernel], w)?;
        let gamma = self.tensor(format!("{bn_name}.weight"), vec![cout], vec![1.0; cout])?;
        let beta = self.tensor(format!("{bn_name}.bias"), vec![cout], vec![0.0; cout])?;
        self.bn_states.push(BatchNormState::new(cout));
        self.bn_names.push(bn_name.to_string());
        Ok(ConvBn {
            weight,
            gamma,
            beta,
            bn: self.bn_states.len() - 1,
            stride,
            padding,
        })
    }

    /// Uniform(±1/√fan_in) weights and bias.
    fn affine(&mut self, name: &str, shape: Vec<usize>, fan_in: usize) -> Result<(ParamId, ParamId)> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n: usize = shape.iter().product();
        let out = shape[0];
        let w: Vec<f64> = (0..n).map(|_| dist.sample(self.rng)).collect();
        let b: Vec<f64> = (0..out).map(|_| dist.sample(self.rng)).collect();
        let weight = self.tensor(format!("{name}.weight"), shape, w)?;
        let bias = self.tensor(format!("{name}.bias"), vec![out], b)?;
        Ok((weight, bias))
    }
}

impl<T: Element> Model<T> {
    /// Builds and randomly initializes a model.
    pub fn build<R: Rng>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let bb = &config.backbone;
        let mut b = Builder {
            params: ParamStore::new(),
            bn_states: Vec::new(),
            bn_names: Vec::new(),
            rng,
        };
        let stem = b.conv_bn(
            "backbone.stem.conv",
            "backbone.stem.bn",
            bb.in_channels,
            bb.stem_channels,
            bb.stem_kernel,
            bb.stem_stride,
            bb.stem_kernel / 2,
        )?;
        let mut blocks = Vec::new();
        let mut channels = bb.stem_channels;
        let k = bb.block_kernel;
        for (si, stage) in bb.stages.iter().enumerate() {
            for bi in 0..stage.blocks {
                let name = format!("layer{}.{}", si + 1, bi);
                let p = format!("backbone.{name}");
                let stride = if bi == 0 { stage.stride } else { 1 };
                let out = stage.out_channels;
                let conv1 = b.conv_bn(
                    &format!("{p}.conv1"),
                    &format!("{p}.bn1"),
                    channels,
                    out,
                    k,
                    stride,
                    k / 2,
                )?;
                let conv2 = b.conv_bn(&format!("{p}.conv2"), &format!("{p}.bn2"), out, out, k, 1, k / 2)?;
                let proj = if stride != 1 || channels != out {
                    Some(b.conv_bn(
                        &format!("{p}.proj.conv"),
                        &format!("{p}.proj.bn"),
                        channels,
                        out,
                        1,
                        stride,
                        0,
                    )?)
                } else {
                    None
                };
                blocks.push(BasicBlock {
                    name,
                    conv1,
                    conv2,
                    proj,
                });
                channels = out;
            }
        }

        let (_, edges) = backbone_layout(bb, None);
        let mut taps = Vec::new();
        let mut pipelines = Vec::new();
        let head_in = match &config.biodg {
            Some(biodg) => {
                taps = resolve_taps(bb, biodg)?;
                let pc = biodg.pipeline();
                for (i, tap) in taps.iter().enumerate() {
                    let cin = edges
                        .iter()
                        .find(|e| e.name == tap.location)
                        .map(|e| e.channels)
                        .expect("validated tap");
                    let (weight, bias) =
                        b.affine(&format!("pipelines.{i}.conv"), vec![pc.compress_channels, cin, 1], cin)?;
                    pipelines.push(Pipeline {
                        tap: tap.clone(),
                        weight,
                        bias,
                        dropout: pc.dropout_rate,
                    });
                }
                taps.len() * pc.compress_channels
            }
            None => channels,
        };
        let (head_weight, head_bias) = b.affine("head", vec![config.num_classes, head_in], head_in)?;
        Ok(Model {
            params: b.params,
            net: Network {
                config: config.clone(),
                stem,
                pool: bb.stem_pool,
                blocks,
                taps,
                pipelines,
                head_weight,
                head_bias,
                head_in,
                bn_states: b.bn_states,
                bn_names: b.bn_names,
            },
        })
    }

    pub fn cast<U: Element>(&self) -> Model<U> {
        Model {
            params: self.params.cast(),
            net: self.net.cast(),
        }
    }

    pub fn forward<R: Rng + ?Sized>(&mut self, g: &mut Graph<T>, x: Var, mode: Mode, rng: &mut R) -> Result<Forward> {
        self.net.forward(g, &self.params, x, mode, rng).map(|(f, _)| f)
    }
}

impl<T: Element> Network<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn taps(&self) -> &[TapPoint] {
        &self.taps
    }

    pub fn is_biodg(&self) -> bool {
        self.config.biodg.is_some()
    }

    pub fn head_in(&self) -> usize {
        self.head_in
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn bn_states(&self) -> &[BatchNormState<T>] {
        &self.bn_states
    }

    pub fn bn_states_mut(&mut self) -> &mut [BatchNormState<T>] {
        &mut self.bn_states
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    pub fn head_params(&self) -> (ParamId, ParamId) {
        (self.head_weight, self.head_bias)
    }

    /// `(weight, bias)` of each concentration pipeline's 1×1 convolution.
    pub fn pipeline_params(&self) -> Vec<(ParamId, ParamId)> {
        self.pipelines.iter().map(|p| (p.weight, p.bias)).collect()
    }

    pub fn cast<U: Element>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            stem: self.stem.clone(),
            pool: self.pool,
            blocks: self.blocks.clone(),
            taps: self.taps.clone(),
            pipelines: self.pipelines.clone(),
            head_weight: self.head_weight,
            head_bias: self.head_bias,
            head_in: self.head_in,
            bn_states: self.bn_states.iter().map(|s| s.cast()).collect(),
            bn_names: self.bn_names.clone(),
        }
    }

    fn conv_bn(&mut self, g: &mut Graph<T>, params: &ParamStore<T>, layer: &ConvBn, x: Var, mode: Mode) -> Result<Var> {
        let w = g.param(params, layer.weight);
        let y = g.conv1d(x, w, None, layer.stride, layer.padding)?;
        let gamma = g.param(params, layer.gamma);
        let beta = g.param(params, layer.beta);
        let state = &mut self.bn_states[layer.bn];
        g.batch_norm1d(y, gamma, beta, state, mode, &self.bn_names[layer.bn])
    }

    /// Backbone pass, recording every named edge.
    fn backbone(
        &mut self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        x: Var,
        mode: Mode,
        trace: &mut Trace,
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let cin = self.config.backbone.in_channels;
        if shape.len() != 3 || shape[1] != cin {
            return Err(Error::shape(
                "model",
                format!("input must be [N, {cin}, L], got {shape:?}"),
            ));
        }
        let stem = self.stem.clone();
        let h = self.conv_bn(g, params, &stem, x, mode)?;
        let mut h = g.relu(h)?;
        trace.edges.push(("stem".into(), h));
        if let Some(p) = self.pool {
            h = g.max_pool1d(h, p.kernel, p.stride, p.padding)?;
            trace.edges.push(("stem.pool".into(), h));
        }
        let blocks = self.blocks.clone();
        for block in &blocks {
            let a = self.conv_bn(g, params, &block.conv1, h, mode)?;
            let a = g.relu(a)?;
            trace.edges.push((format!("{}.conv1", block.name), a));
            let a = self.conv_bn(g, params, &block.conv2, a, mode)?;
            trace.edges.push((format!("{}.conv2", block.name), a));
            let skip = match &block.proj {
                Some(proj) => {
                    let s = self.conv_bn(g, params, proj, h, mode)?;
                    trace.edges.push((format!("{}.proj", block.name), s));
                    s
                }
                None => h,
            };
            let sum = g.add(a, skip)?;
            h = g.relu(sum)?;
            trace.edges.push((format!("{}.out", block.name), h));
        }
        trace.edges.push(("final".into(), h));
        Ok(h)
    }

    /// Computes the head input for `x: [N, Cin, L]`.
    pub fn embed<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Trace)> {
        let mut trace = Trace::default();
        let features = self.backbone(g, params, x, mode, &mut trace)?;
        if self.pipelines.is_empty() {
            return Ok((g.global_avg_pool1d(features)?, trace));
        }
        let mut outputs = Vec::with_capacity(self.pipelines.len());
        for p in &self.pipelines {
            let input = trace
                .edge(&p.tap.location)
                .ok_or_else(|| Error::Config(format!("edge `{}` not produced", p.tap.location)))?;
            trace.pipeline_inputs.push(input);
            let w = g.param(params, p.weight);
            let b = g.param(params, p.bias);
            let y = g.conv1d(input, w, Some(b), 1, 0)?;
            let y = g.spatial_dropout1d(y, p.dropout, mode, rng)?;
            outputs.push(g.global_avg_pool1d(y)?);
        }
        let embedding = g.concat(&outputs)?;
        if g.shape(embedding)[1] != self.head_in {
            return Err(Error::shape(
                "assemble_biodg",
                format!(
                    "head expects {} inputs, pipelines produce {}",
                    self.head_in,
                    g.shape(embedding)[1]
                ),
            ));
        }
        Ok((embedding, trace))
    }

    pub fn head(&self, g: &mut Graph<T>, params: &ParamStore<T>, embedding: Var) -> Result<Var> {
        let w = g.param(params, self.head_weight);
        let b = g.param(params, self.head_bias);
        g.linear(embedding, w, Some(b))
    }

    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        g: &mut Graph<T>,
        params: &ParamStore<T>,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Forward, Trace)> {
        let (embedding, trace) = self.embed(g, params, x, mode, rng)?;
        let logits = self.head(g, params, embedding)?;
        Ok((Forward { logits, embedding }, trace))
    }

    pub fn backbone_kind(&self) -> BackboneKind {
        self.config.backbone.kind
    }
}

/// One concentration pipeline applied to a single feature map `[N, C, L]`.
pub fn concentration_forward<T: Element, R: Rng + ?Sized>(
    g: &mut Graph<T>,
    feature: Var,
    weight: Var,
    bias: Var,
    dropout_rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<Var> {
    let shape = g.shape(feature);
    if shape.len() != 3 || shape[1] == 0 {
        return Err(Error::shape(
            "concentration_forward",
            format!("feature must be [N, C>=1, L], got {shape:?}"),
        ));
    }
    let y = g.conv1d(feature, weight, Some(bias), 1, 0)?;
    let y = g.spatial_dropout1d(y, dropout_rate, mode, rng)?;
    g.global_avg_pool1d(y)
}
