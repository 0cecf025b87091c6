//! Encoder-decoder graph: a pyramid of downsampling conv blocks, a decoder of
//! nearest-neighbour upconv blocks with configurable skip fusion, and one
//! sigmoid prediction head per supervised scale.
//!
//! Heads are leaves: they read the fused decoder feature at their scale and
//! feed nothing back, so disabling the coarse heads leaves the full-resolution
//! output untouched.

use crate::config::{ArchConfig, DecoderStage, Fusion};
use crate::error::{ConfigError, NetError};
use crate::tensor::{
    activation_inplace, add, concat_channels, conv2d, upsample_nearest2x, Activation, ConvWeights,
    Dims, Stride, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Encoder,
    Upconv,
    Head,
}

/// Static description of one 3x3 conv in the graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub slot: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: Stride,
    /// Spatial extents of the conv output (before any upsampling).
    pub out_height: usize,
    pub out_width: usize,
    /// Scale index for heads, pyramid level for encoder and upconv layers.
    pub level: usize,
}

impl LayerInfo {
    pub fn params(&self) -> u64 {
        (self.in_channels * self.out_channels * 9 + self.out_channels) as u64
    }

    pub fn macs(&self) -> u64 {
        (self.in_channels * self.out_channels * 9) as u64
            * (self.out_height * self.out_width) as u64
    }

    pub fn kernel_extents(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, 3, 3]
    }
}

pub fn encoder_slot(level: usize, conv: usize) -> String {
    format!("enc{level}.conv{conv}")
}

pub fn upconv_slot(level: usize) -> String {
    format!("dec{level}.upconv")
}

pub fn head_slot(scale: usize, conv: usize) -> String {
    format!("head{scale}.conv{conv}")
}

/// Every conv layer of `cfg` in execution order (heads after their stage).
pub fn layer_plan(cfg: &ArchConfig) -> Result<Vec<LayerInfo>, ConfigError> {
    let stages = cfg.decoder_stages()?;
    let mut plan = Vec::new();
    let mut in_ch = 3;
    for level in 1..=cfg.levels {
        let (h, w) = (cfg.height >> level, cfg.width >> level);
        let out = cfg.channels[level - 1];
        for k in 1..=cfg.convs_per_block {
            plan.push(LayerInfo {
                slot: encoder_slot(level, k),
                kind: LayerKind::Encoder,
                in_channels: if k == 1 { in_ch } else { out },
                out_channels: out,
                stride: if k == 1 { Stride::Two } else { Stride::One },
                out_height: h,
                out_width: w,
                level,
            });
        }
        in_ch = out;
    }
    for stage in &stages {
        plan.push(LayerInfo {
            slot: upconv_slot(stage.level),
            kind: LayerKind::Upconv,
            in_channels: stage.upconv_in,
            out_channels: stage.upconv_out,
            stride: Stride::One,
            out_height: cfg.height >> stage.level,
            out_width: cfg.width >> stage.level,
            level: stage.level,
        });
        let scale = stage.level - 1;
        if scale < cfg.supervision_scales {
            let (h, w) = (cfg.height >> scale, cfg.width >> scale);
            for (k, out) in [(1, stage.fused), (2, 1)] {
                plan.push(LayerInfo {
                    slot: head_slot(scale, k),
                    kind: LayerKind::Head,
                    in_channels: stage.fused,
                    out_channels: out,
                    stride: Stride::One,
                    out_height: h,
                    out_width: w,
                    level: scale,
                });
            }
        }
    }
    Ok(plan)
}

/// Weight-element count (kernels and biases) of every layer in `cfg`.
pub fn count_params(cfg: &ArchConfig) -> Result<u64, ConfigError> {
    Ok(layer_plan(cfg)?.iter().map(LayerInfo::params).sum())
}

/// Multiply-accumulate count of one forward pass with all of `cfg`'s heads.
pub fn count_flops(cfg: &ArchConfig) -> Result<u64, ConfigError> {
    Ok(layer_plan(cfg)?.iter().map(LayerInfo::macs).sum())
}

#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub info: LayerInfo,
    weights: Option<ConvWeights>,
}

impl ConvLayer {
    fn new(info: LayerInfo) -> Self {
        ConvLayer {
            info,
            weights: None,
        }
    }

    pub fn weights(&self) -> Option<&ConvWeights> {
        self.weights.as_ref()
    }

    pub(crate) fn set_weights(&mut self, w: ConvWeights) {
        debug_assert_eq!(w.out_channels(), self.info.out_channels);
        debug_assert_eq!(w.in_channels(), self.info.in_channels);
        self.weights = Some(w);
    }

    fn run(&self, x: &Tensor, act: Activation) -> Result<Tensor, NetError> {
        let w = self
            .weights
            .as_ref()
            .ok_or_else(|| NetError::Unbound(self.info.slot.clone()))?;
        let mut y = conv2d(x, w, self.info.stride)?;
        activation_inplace(&mut y, act);
        Ok(y)
    }
}

#[derive(Clone, Debug)]
struct DecoderBlock {
    stage: DecoderStage,
    upconv: ConvLayer,
}

#[derive(Clone, Debug)]
struct Head {
    scale: usize,
    hidden: ConvLayer,
    project: ConvLayer,
}

/// Per-scale sigmoid outputs; index `n` holds the map at 1/2^n resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthOutputs {
    scales: Vec<Option<Tensor>>,
}

impl DepthOutputs {
    pub fn new(scales: Vec<Option<Tensor>>) -> Self {
        DepthOutputs { scales }
    }

    /// Full-resolution prediction.
    pub fn d0(&self) -> &Tensor {
        self.scales[0].as_ref().expect("scale 0 is always computed")
    }

    pub fn get(&self, scale: usize) -> Option<&Tensor> {
        self.scales.get(scale).and_then(Option::as_ref)
    }

    /// Number of consecutive scales present, starting at 0.
    pub fn len(&self) -> usize {
        self.scales.iter().take_while(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_d0(mut self) -> Tensor {
        self.scales
            .swap_remove(0)
            .expect("scale 0 is always computed")
    }
}

/// Built graph with named weight slots. Immutable once bound; `forward` takes `&self`.
#[derive(Clone, Debug)]
pub struct Network {
    cfg: ArchConfig,
    encoder: Vec<Vec<ConvLayer>>,
    decoder: Vec<DecoderBlock>,
    heads: Vec<Head>,
    active_heads: usize,
}

impl Network {
    pub fn build(cfg: &ArchConfig) -> Result<Self, ConfigError> {
        let stages = cfg.decoder_stages()?;
        let mut plan = layer_plan(cfg)?.into_iter().map(ConvLayer::new);
        let mut encoder = Vec::with_capacity(cfg.levels);
        for _ in 0..cfg.levels {
            encoder.push(plan.by_ref().take(cfg.convs_per_block).collect());
        }
        let mut decoder = Vec::with_capacity(stages.len());
        let mut heads = Vec::new();
        for stage in stages {
            let upconv = plan.next().expect("plan has one upconv per stage");
            decoder.push(DecoderBlock { stage, upconv });
            let scale = stage.level - 1;
            if scale < cfg.supervision_scales {
                let hidden = plan.next().expect("head conv1");
                let project = plan.next().expect("head conv2");
                heads.push(Head {
                    scale,
                    hidden,
                    project,
                });
            }
        }
        // Deepest stage first means heads come out coarse to fine; index by scale.
        heads.sort_by_key(|h| h.scale);
        Ok(Network {
            cfg: cfg.clone(),
            encoder,
            decoder,
            heads,
            active_heads: cfg.supervision_scales,
        })
    }

    pub fn config(&self) -> &ArchConfig {
        &self.cfg
    }

    pub fn input_dims(&self, batch: usize) -> Dims {
        Dims::new(batch, 3, self.cfg.height, self.cfg.width)
    }

    pub fn active_heads(&self) -> usize {
        self.active_heads
    }

    /// Runs only heads `0..count`; clamped to `1..=supervision_scales`.
    pub fn set_active_heads(&mut self, count: usize) {
        self.active_heads = count.clamp(1, self.cfg.supervision_scales);
    }

    /// Keeps only the full-resolution head, the deployment setting.
    pub fn inference_only(mut self) -> Self {
        self.set_active_heads(1);
        self
    }

    pub fn slots(&self) -> impl Iterator<Item = &ConvLayer> {
        self.encoder
            .iter()
            .flatten()
            .chain(self.decoder.iter().map(|d| &d.upconv))
            .chain(self.heads.iter().flat_map(|h| [&h.hidden, &h.project]))
    }

    pub(crate) fn slots_mut(&mut self) -> impl Iterator<Item = &mut ConvLayer> {
        self.encoder
            .iter_mut()
            .flatten()
            .chain(self.decoder.iter_mut().map(|d| &mut d.upconv))
            .chain(
                self.heads
                    .iter_mut()
                    .flat_map(|h| [&mut h.hidden, &mut h.project]),
            )
    }

    pub fn is_bound(&self) -> bool {
        self.slots().all(|s| s.weights.is_some())
    }

    /// MACs of one forward pass with the currently active heads.
    pub fn active_macs(&self) -> u64 {
        self.slots()
            .filter(|s| s.info.kind != LayerKind::Head || s.info.level < self.active_heads)
            .map(|s| s.info.macs())
            .sum()
    }

    pub fn forward(&self, image: &Tensor) -> Result<DepthOutputs, NetError> {
        self.forward_impl(image, None)
    }

    /// Like `forward`, also recording `(name, extents)` for every intermediate tensor.
    pub fn forward_traced(
        &self,
        image: &Tensor,
    ) -> Result<(DepthOutputs, Vec<(String, Dims)>), NetError> {
        let mut trace = Vec::new();
        let out = self.forward_impl(image, Some(&mut trace))?;
        Ok((out, trace))
    }

    fn forward_impl(
        &self,
        image: &Tensor,
        mut trace: Option<&mut Vec<(String, Dims)>>,
    ) -> Result<DepthOutputs, NetError> {
        let d = image.dims();
        let expected = self.input_dims(d.n);
        if d != expected {
            return Err(NetError::InputShape {
                expected,
                actual: d,
            });
        }
        let mut record = |name: String, t: &Tensor| {
            if let Some(tr) = trace.as_deref_mut() {
                tr.push((name, t.dims()));
            }
        };

        let mut features: Vec<Tensor> = Vec::with_capacity(self.cfg.levels);
        for (i, block) in self.encoder.iter().enumerate() {
            let mut x = block[0].run(features.last().unwrap_or(image), Activation::LeakyRelu)?;
            for conv in &block[1..] {
                x = conv.run(&x, Activation::LeakyRelu)?;
            }
            record(format!("F{}", i + 1), &x);
            features.push(x);
        }

        let mut scales: Vec<Option<Tensor>> = vec![None; self.cfg.supervision_scales];
        let mut x = features.pop().expect("levels >= 2");
        for block in &self.decoder {
            let level = block.stage.level;
            let y = block.upconv.run(&x, Activation::LeakyRelu)?;
            record(format!("dec{level}.conv"), &y);
            x = upsample_nearest2x(&y);
            record(format!("dec{level}.up"), &x);
            if let Some(fusion) = block.stage.fusion {
                let skip = &features[level - 2];
                x = match fusion {
                    Fusion::Add => add(&x, skip)?,
                    Fusion::Concat => concat_channels(&x, skip)?,
                    Fusion::None => x,
                };
                record(format!("dec{level}.fused"), &x);
            }
            let scale = level - 1;
            if scale < self.active_heads {
                let head = &self.heads[scale];
                let hidden = head.hidden.run(&x, Activation::LeakyRelu)?;
                let disp = head.project.run(&hidden, Activation::Sigmoid)?;
                record(format!("D{scale}"), &disp);
                scales[scale] = Some(disp);
            }
        }
        Ok(DepthOutputs { scales })
    }
}

/// Range used to map sigmoid disparity to metric depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthRange {
    pub min_depth: f32,
    pub max_depth: f32,
}

impl Default for DepthRange {
    fn default() -> Self {
        DepthRange {
            min_depth: 0.1,
            max_depth: 100.0,
        }
    }
}

impl DepthRange {
    pub fn depth(&self, disp: f32) -> f32 {
        let min_disp = 1.0 / self.max_depth;
        let max_disp = 1.0 / self.min_depth;
        1.0 / (min_disp + (max_disp - min_disp) * disp)
    }
}

/// `depth = 1 / (1/max + (1/min - 1/max) * disp)`.
pub fn disp_to_depth(disp: &Tensor, range: DepthRange) -> Tensor {
    disp.map(|v| range.depth(v))
}
