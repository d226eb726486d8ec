//! Declarative model specs, the reference architectures, and their runtime form.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{FocalKagnModulation, FocalModulationConfig, SelfKagntention, SelfKagntentionConfig};
use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::layers::{
    scoped, scoped_mut, ActKind, BottleneckKind, Conv2d, ForwardCtx, KanConv, KanConvConfig, Linear, MoEConfig,
    Module, NormKind, ParamKind, Parameter,
};
use crate::regularization::{apply_placement_regularizer, Placement, PlacementReg, RegKind};
use crate::tensor::{Conv2dParams, Real, Tensor};

/// Channel list of the 4-layer baseline.
pub const BASELINE_CHANNELS_4: [usize; 4] = [32, 64, 128, 512];
/// Channel list of the 8-layer baseline as published; the leading 2 is
/// likely meant to be 32.
pub const BASELINE_CHANNELS_8: [usize; 8] = [2, 64, 128, 512, 1024, 1024, 1024, 1024];
/// Slim 8-layer channel list.
pub const SLIM_CHANNELS_8: [usize; 8] = [16, 32, 64, 128, 256, 256, 512, 512];

/// One entry of a sequential trunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    KanConv(KanConvConfig),
    MaxPool { kernel: usize, stride: usize },
    SelfAttention(SelfKagntentionConfig),
    Focal(FocalModulationConfig),
}

impl LayerSpec {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerSpec::KanConv(c) if c.moe.is_some() => "moe_kan_conv",
            LayerSpec::KanConv(c) if c.is_bottleneck() => "bottleneck_kan_conv",
            LayerSpec::KanConv(_) => "kan_conv",
            LayerSpec::MaxPool { .. } => "max_pool",
            LayerSpec::SelfAttention(_) => "self_attention",
            LayerSpec::Focal(_) => "focal_modulation",
        }
    }

    /// Closed-form trainable count.
    pub fn param_count(&self) -> Result<usize> {
        match self {
            LayerSpec::KanConv(c) => c.param_count(),
            LayerSpec::MaxPool { .. } => Ok(0),
            LayerSpec::SelfAttention(c) => c.param_count(),
            LayerSpec::Focal(c) => c.param_count(),
        }
    }

    /// Output channels given the input channels, or an error if they do not compose.
    fn out_channels(&self, input: usize) -> Result<usize> {
        let expect = |c: usize| {
            if c == input {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{} expects {c} input channels but receives {input}",
                    self.type_name()
                )))
            }
        };
        match self {
            LayerSpec::KanConv(c) => expect(c.in_channels).map(|_| c.out_channels),
            LayerSpec::MaxPool { .. } => Ok(input),
            LayerSpec::SelfAttention(c) => expect(c.channels).map(|_| input),
            LayerSpec::Focal(c) => expect(c.channels).map(|_| input),
        }
    }

    pub fn build<T: Real>(&self, rng: &mut ChaCha8Rng) -> Result<Box<dyn Module<T>>> {
        Ok(match self {
            LayerSpec::KanConv(c) => Box::new(KanConv::new(c.clone(), rng)?),
            LayerSpec::MaxPool { kernel, stride } => Box::new(MaxPool {
                kernel: *kernel,
                stride: *stride,
            }),
            LayerSpec::SelfAttention(c) => Box::new(SelfKagntention::new(c.clone(), rng)?),
            LayerSpec::Focal(c) => Box::new(FocalKagnModulation::new(c.clone(), rng)?),
        })
    }

    fn bases_mut(&mut self) -> Vec<&mut BasisSpec> {
        match self {
            LayerSpec::KanConv(c) => vec![&mut c.basis],
            LayerSpec::MaxPool { .. } => vec![],
            LayerSpec::SelfAttention(c) => vec![&mut c.basis],
            LayerSpec::Focal(c) => vec![&mut c.basis],
        }
    }
}

struct MaxPool {
    kernel: usize,
    stride: usize,
}

impl<T: Real> Module<T> for MaxPool {
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        x.maxpool2d(self.kernel, self.stride)
    }

    fn params(&self) -> Vec<(String, &Parameter<T>)> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        Vec::new()
    }
}

/// Global average pooling, optional dropout, and a linear layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub in_features: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub dropout: f64,
}

/// Encoder/decoder segmentation network with KAN convolution blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnetSpec {
    pub base_channels: usize,
    pub depth_levels: usize,
    pub basis: BasisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<PlacementReg>,
}

impl UnetSpec {
    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    fn conv(&self, i: usize, o: usize) -> KanConvConfig {
        KanConvConfig::new(i, o, 3, self.basis.clone()).with_regularizer(self.regularizer)
    }

    /// Convolution configs per block: encoder levels, bottom, decoder levels
    /// (deepest first), each as a pair.
    fn blocks(&self, in_channels: usize) -> Vec<(String, [KanConvConfig; 2])> {
        let mut v = Vec::new();
        let mut c = in_channels;
        for l in 0..self.depth_levels {
            let o = self.level_channels(l);
            v.push((format!("encoder.{l}"), [self.conv(c, o), self.conv(o, o)]));
            c = o;
        }
        let o = self.level_channels(self.depth_levels);
        v.push(("bottom".to_string(), [self.conv(c, o), self.conv(o, o)]));
        for l in (0..self.depth_levels).rev() {
            let skip = self.level_channels(l);
            let up = self.level_channels(l + 1);
            v.push((format!("decoder.{l}"), [self.conv(skip + up, skip), self.conv(skip, skip)]));
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Architecture {
    Classifier { layers: Vec<LayerSpec>, head: HeadSpec },
    Unet(UnetSpec),
}

/// Complete, serializable description of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub in_channels: usize,
    pub num_classes: usize,
    pub width_scale: f64,
    pub degree: usize,
    pub architecture: Architecture,
}

/// Per-layer formula count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCount {
    pub name: String,
    pub kind: String,
    pub formula: usize,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.architecture {
            Architecture::Classifier { layers, head } => {
                let mut c = self.in_channels;
                for l in layers {
                    if let LayerSpec::KanConv(k) = l {
                        k.validate()?;
                    }
                    c = l.out_channels(c)?;
                }
                if head.in_features != c {
                    return Err(Error::Config(format!(
                        "head expects {} features but the trunk ends with {c} channels",
                        head.in_features
                    )));
                }
                if head.num_classes != self.num_classes || head.num_classes == 0 {
                    return Err(Error::Config("head width must equal num_classes".into()));
                }
                if !(0.0..1.0).contains(&head.dropout) {
                    return Err(Error::Config(format!("head dropout {} outside [0, 1)", head.dropout)));
                }
                Ok(())
            }
            Architecture::Unet(u) => {
                if u.depth_levels == 0 || u.base_channels == 0 {
                    return Err(Error::Config("U-Net needs at least one level and channel".into()));
                }
                for (_, pair) in u.blocks(self.in_channels) {
                    for c in pair {
                        c.validate()?;
                    }
                }
                Ok(())
            }
        }
    }

    pub fn build<T: Real>(&self, seed: u64) -> Result<Model<T>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let body = match &self.architecture {
            Architecture::Classifier { layers, head } => {
                let blocks = layers
                    .iter()
                    .map(|l| l.build(&mut rng))
                    .collect::<Result<Vec<_>>>()?;
                Body::Classifier {
                    blocks,
                    dropout: head.dropout,
                    head: Linear::new(head.in_features, head.num_classes, true, ParamKind::Head, &mut rng),
                }
            }
            Architecture::Unet(u) => {
                let blocks = u
                    .blocks(self.in_channels)
                    .into_iter()
                    .map(|(name, [a, b])| Ok((name, [KanConv::new(a, &mut rng)?, KanConv::new(b, &mut rng)?])))
                    .collect::<Result<Vec<_>>>()?;
                Body::Unet {
                    levels: u.depth_levels,
                    blocks,
                    head: Conv2d::new(u.base_channels, 1, 1, Conv2dParams::default(), ParamKind::Head, &mut rng),
                }
            }
        };
        Ok(Model {
            spec: self.clone(),
            body,
        })
    }

    /// Formula counts per layer, with the head last.
    pub fn layer_counts(&self) -> Result<Vec<LayerCount>> {
        let mut v = Vec::new();
        match &self.architecture {
            Architecture::Classifier { layers, head } => {
                for (i, l) in layers.iter().enumerate() {
                    v.push(LayerCount {
                        name: format!("blocks.{i}"),
                        kind: l.type_name().into(),
                        formula: l.param_count()?,
                    });
                }
                v.push(LayerCount {
                    name: "head".into(),
                    kind: "linear".into(),
                    formula: head.in_features * head.num_classes + head.num_classes,
                });
            }
            Architecture::Unet(u) => {
                for (name, pair) in u.blocks(self.in_channels) {
                    for (j, c) in pair.iter().enumerate() {
                        v.push(LayerCount {
                            name: format!("{name}.{j}"),
                            kind: "kan_conv".into(),
                            formula: c.param_count()?,
                        });
                    }
                }
                v.push(LayerCount {
                    name: "head".into(),
                    kind: "conv2d".into(),
                    formula: Conv2d::<f64>::count(u.base_channels, 1, 1, 1),
                });
            }
        }
        Ok(v)
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.layer_counts()?.iter().map(|c| c.formula).sum())
    }

    /// Raises every basis degree to at least `degree`.
    pub fn extend_degree(&mut self, degree: usize) {
        let bases: Vec<&mut BasisSpec> = match &mut self.architecture {
            Architecture::Classifier { layers, .. } => layers.iter_mut().flat_map(|l| l.bases_mut()).collect(),
            Architecture::Unet(u) => vec![&mut u.basis],
        };
        for b in bases {
            b.degree = b.degree.max(degree);
        }
        self.degree = self.degree.max(degree);
    }

    /// All bases used by the model.
    pub fn bases(&self) -> Vec<BasisSpec> {
        let mut s = self.clone();
        match &mut s.architecture {
            Architecture::Classifier { layers, .. } => {
                layers.iter_mut().flat_map(|l| l.bases_mut()).map(|b| b.clone()).collect()
            }
            Architecture::Unet(u) => vec![u.basis.clone()],
        }
    }
}

enum Body<T: Real> {
    Classifier {
        blocks: Vec<Box<dyn Module<T>>>,
        dropout: f64,
        head: Linear<T>,
    },
    Unet {
        levels: usize,
        blocks: Vec<(String, [KanConv<T>; 2])>,
        head: Conv2d<T>,
    },
}

/// A built model: classifier logits `[B, classes]` or mask probabilities `[B, 1, H, W]`.
pub struct Model<T: Real> {
    pub spec: ModelSpec,
    body: Body<T>,
}

impl<T: Real> Model<T> {
    pub fn is_segmentation(&self) -> bool {
        matches!(self.body, Body::Unet { .. })
    }

    /// Parameters grouped by layer, in a fixed order; the head comes last.
    pub fn layers(&self) -> Vec<(String, Vec<(String, &Parameter<T>)>)> {
        match &self.body {
            Body::Classifier { blocks, head, .. } => {
                let mut v: Vec<_> = blocks
                    .iter()
                    .enumerate()
                    .map(|(i, b)| (format!("blocks.{i}"), b.params()))
                    .collect();
                v.push(("head".into(), head.params()));
                v
            }
            Body::Unet { blocks, head, .. } => {
                let mut v = Vec::new();
                for (name, pair) in blocks {
                    for (j, c) in pair.iter().enumerate() {
                        v.push((format!("{name}.{j}"), c.params()));
                    }
                }
                v.push(("head".into(), head.params()));
                v
            }
        }
    }

    /// Enumerated (non-buffer) parameter count per layer, aligned with
    /// [`ModelSpec::layer_counts`].
    pub fn layer_enumeration(&self) -> Vec<(String, usize)> {
        self.layers()
            .into_iter()
            .map(|(name, ps)| {
                let n = ps.iter().filter(|(_, p)| !p.is_buffer()).map(|(_, p)| p.numel()).sum();
                (name, n)
            })
            .collect()
    }

    fn unet_forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        let Body::Unet { levels, blocks, head } = &mut self.body else {
            unreachable!("unet body")
        };
        let levels = *levels;
        let factor = 1usize << levels;
        if x.ndim() != 4 || x.shape()[2] % factor != 0 || x.shape()[3] % factor != 0 {
            return Err(Error::Config(format!(
                "input {:?} must be [B, C, H, W] with H and W divisible by {factor}",
                x.shape()
            )));
        }
        let mut skips = Vec::with_capacity(levels);
        let mut h = x.clone();
        let mut it = blocks.iter_mut();
        for _ in 0..levels {
            let (_, [a, b]) = it.next().expect("encoder block");
            h = b.forward(&a.forward(&h, ctx)?, ctx)?;
            skips.push(h.clone());
            h = h.maxpool2d(2, 2)?;
        }
        let (_, [a, b]) = it.next().expect("bottom block");
        h = b.forward(&a.forward(&h, ctx)?, ctx)?;
        for (_, [a, b]) in it {
            let skip = skips.pop().expect("matching skip");
            let cat = Tensor::concat(&[skip, h.upsample_nearest2d(2)?], 1)?;
            h = b.forward(&a.forward(&cat, ctx)?, ctx)?;
        }
        Ok(head.forward(&h, ctx)?.sigmoid())
    }
}

impl<T: Real> Module<T> for Model<T> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        if x.ndim() != 4 || x.shape()[1] != self.spec.in_channels {
            return Err(Error::Shape {
                op: "model",
                msg: format!("expected [B, {}, H, W] input, got {:?}", self.spec.in_channels, x.shape()),
            });
        }
        match &mut self.body {
            Body::Classifier { blocks, dropout, head } => {
                let mut h = x.clone();
                for b in blocks.iter_mut() {
                    h = b.forward(&h, ctx)?;
                }
                let mut pooled = h.global_avg_pool()?;
                if *dropout > 0.0 {
                    let reg = PlacementReg {
                        kind: RegKind::Dropout,
                        placement: Placement::Full,
                        p: *dropout,
                        alpha: 1.0,
                    };
                    pooled = apply_placement_regularizer(&pooled, &reg, ctx.train, ctx.rng)?;
                }
                head.forward(&pooled, ctx)
            }
            Body::Unet { .. } => self.unet_forward(x, ctx),
        }
    }

    fn params(&self) -> Vec<(String, &Parameter<T>)> {
        self.layers()
            .into_iter()
            .flat_map(|(name, ps)| scoped(&name, ps).collect::<Vec<_>>())
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        let mut v = Vec::new();
        match &mut self.body {
            Body::Classifier { blocks, head, .. } => {
                for (i, b) in blocks.iter_mut().enumerate() {
                    v.extend(scoped_mut(&format!("blocks.{i}"), b.params_mut()));
                }
                v.extend(scoped_mut("head", head.params_mut()));
            }
            Body::Unet { blocks, head, .. } => {
                for (name, pair) in blocks.iter_mut() {
                    for (j, c) in pair.iter_mut().enumerate() {
                        v.extend(scoped_mut(&format!("{name}.{j}"), c.params_mut()));
                    }
                }
                v.extend(scoped_mut("head", head.params_mut()));
            }
        }
        v
    }

    fn kan_convs_mut(&mut self) -> Vec<&mut KanConv<T>> {
        match &mut self.body {
            Body::Classifier { blocks, .. } => blocks.iter_mut().flat_map(|b| b.kan_convs_mut()).collect(),
            Body::Unet { blocks, .. } => blocks.iter_mut().flat_map(|(_, pair)| pair.iter_mut()).collect(),
        }
    }
}

/// Shared knobs of the classifier builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetOptions {
    pub in_channels: usize,
    pub num_classes: usize,
    pub basis: BasisSpec,
    pub width_scale: f64,
    /// Bottleneck reduction ratio; 0 disables it.
    pub bottleneck: usize,
    pub bottleneck_kind: BottleneckKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub moe: Option<MoEConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<PlacementReg>,
    pub head_dropout: f64,
    pub residual: bool,
    pub norm: NormKind,
    pub activation: ActKind,
    /// Stride of the dilated layers of the simple nets; 1 keeps resolution.
    pub downsample_stride: usize,
}

impl Default for NetOptions {
    fn default() -> Self {
        NetOptions {
            in_channels: 1,
            num_classes: 10,
            basis: BasisSpec::gram(3),
            width_scale: 1.0,
            bottleneck: 0,
            bottleneck_kind: BottleneckKind::Linear,
            moe: None,
            regularizer: None,
            head_dropout: crate::harness::config::profile::HEAD_DROPOUT,
            residual: true,
            norm: NormKind::Batch,
            activation: ActKind::Silu,
            downsample_stride: 2,
        }
    }
}

impl NetOptions {
    fn scale(&self, c: usize) -> usize {
        ((c as f64 * self.width_scale).round() as usize).max(1)
    }

    fn conv(&self, i: usize, o: usize, bottleneck: bool) -> KanConvConfig {
        let mut c = KanConvConfig::new(i, o, 3, self.basis.clone())
            .with_residual(self.residual)
            .with_norm(self.norm)
            .with_activation(self.activation)
            .with_regularizer(self.regularizer);
        if bottleneck && self.bottleneck > 0 {
            c = c.with_bottleneck(self.bottleneck, self.bottleneck_kind);
            if let Some(m) = &self.moe {
                c = c.with_moe(m.clone());
            }
        }
        c
    }

    fn head(&self, features: usize) -> HeadSpec {
        HeadSpec {
            in_features: features,
            num_classes: self.num_classes,
            dropout: self.head_dropout,
        }
    }
}

/// 4- or 8-layer KAN conv stack; layers 2, 3 (and 6 for depth 8) are dilated.
pub fn build_simple_net(depth: usize, channels: &[usize], opts: &NetOptions) -> Result<ModelSpec> {
    let dilated: &[usize] = match depth {
        4 => &[2, 3],
        8 => &[2, 3, 6],
        _ => return Err(Error::Config(format!("simple nets have depth 4 or 8, not {depth}"))),
    };
    if channels.len() != depth {
        return Err(Error::Config(format!(
            "depth {depth} needs {depth} channel entries, got {}",
            channels.len()
        )));
    }
    let mut layers = Vec::with_capacity(depth);
    let mut c = opts.in_channels;
    for (i, &raw) in channels.iter().enumerate() {
        let o = opts.scale(raw);
        let mut cfg = opts.conv(c, o, i > 0);
        if dilated.contains(&(i + 1)) {
            cfg = cfg.with_dilation(2).with_stride(opts.downsample_stride);
        }
        layers.push(LayerSpec::KanConv(cfg));
        c = o;
    }
    Ok(ModelSpec {
        name: format!("simple{depth}"),
        in_channels: opts.in_channels,
        num_classes: opts.num_classes,
        width_scale: opts.width_scale,
        degree: opts.basis.degree,
        architecture: Architecture::Classifier {
            layers,
            head: opts.head(c),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VggVariant {
    V2,
    V4,
}

/// Defaults of the VGG11-like builders: RGB input, 1000 classes, degree 5.
pub fn vgg_options() -> NetOptions {
    NetOptions {
        in_channels: 3,
        num_classes: 1000,
        basis: BasisSpec::gram(5),
        ..NetOptions::default()
    }
}

/// VGG11-like ladder: 32, pool, 64, pool, 128×2, pool, 256×2, pool, 256×2
/// (v2) or 512×2 (v4). With `bottleneck`, every layer after the first uses a
/// bottleneck of ratio `opts.bottleneck` (4 when unset).
pub fn build_vgg11_like(variant: VggVariant, bottleneck: bool, self_attention: bool, opts: &NetOptions) -> Result<ModelSpec> {
    let last = match variant {
        VggVariant::V2 => 256,
        VggVariant::V4 => 512,
    };
    let mut o = opts.clone();
    if bottleneck && o.bottleneck == 0 {
        o.bottleneck = 4;
    }
    if !bottleneck {
        o.bottleneck = 0;
    }
    let ladder: [Option<usize>; 12] = [
        Some(32),
        None,
        Some(64),
        None,
        Some(128),
        Some(128),
        None,
        Some(256),
        Some(256),
        None,
        Some(last),
        Some(last),
    ];
    let mut layers = Vec::new();
    let mut c = o.in_channels;
    for (i, step) in ladder.iter().enumerate() {
        match step {
            Some(raw) => {
                let w = o.scale(*raw);
                layers.push(LayerSpec::KanConv(o.conv(c, w, i > 0)));
                c = w;
            }
            None => layers.push(LayerSpec::MaxPool { kernel: 2, stride: 2 }),
        }
    }
    if self_attention {
        layers.push(LayerSpec::SelfAttention(
            SelfKagntentionConfig::new(c, o.basis.clone()).with_default_bottleneck(),
        ));
    }
    let suffix = match variant {
        VggVariant::V2 => "v2",
        VggVariant::V4 => "v4",
    };
    Ok(ModelSpec {
        name: format!("vgg11_{suffix}"),
        in_channels: o.in_channels,
        num_classes: o.num_classes,
        width_scale: o.width_scale,
        degree: o.basis.degree,
        architecture: Architecture::Classifier {
            layers,
            head: o.head(c),
        },
    })
}

/// U-Net with two KAN convs per level and channel doubling; base width `8·width_scale`.
pub fn build_unet_kagn(width_scale: f64, depth_levels: usize, in_channels: usize, basis: BasisSpec) -> Result<ModelSpec> {
    if depth_levels == 0 {
        return Err(Error::Config("U-Net needs at least one level".into()));
    }
    let base = ((8.0 * width_scale).round() as usize).max(1);
    let degree = basis.degree;
    let spec = ModelSpec {
        name: "unet_kagn".into(),
        in_channels,
        num_classes: 1,
        width_scale,
        degree,
        architecture: Architecture::Unet(UnetSpec {
            base_channels: base,
            depth_levels,
            basis,
            regularizer: None,
        }),
    };
    spec.validate()?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_net_shapes_and_counts() {
        let opts = NetOptions::default();
        let spec = build_simple_net(4, &[4, 4, 8, 8], &opts).unwrap();
        let mut m = spec.build::<f64>(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::randn(&[2, 1, 12, 12], 1.0, &mut rng);
        let y = m.forward(&x, &mut ForwardCtx::train(&mut rng)).unwrap();
        assert_eq!(y.shape(), &[2, 10]);
        assert_eq!(m.param_total(), spec.param_count().unwrap());
        assert!(build_simple_net(4, &[4, 4, 8], &opts).is_err());
        assert!(build_simple_net(5, &[4; 5], &opts).is_err());
    }

    #[test]
    fn unet_checks_divisibility() {
        let spec = build_unet_kagn(0.5, 2, 1, BasisSpec::gram(2)).unwrap();
        let mut m = spec.build::<f64>(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::randn(&[2, 1, 8, 8], 1.0, &mut rng);
        let y = m.forward(&x, &mut ForwardCtx::train(&mut rng)).unwrap();
        assert_eq!(y.shape(), &[2, 1, 8, 8]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let bad = Tensor::<f64>::zeros(&[2, 1, 6, 8]);
        assert!(matches!(m.forward(&bad, &mut ForwardCtx::eval(&mut rng)), Err(Error::Config(_))));
        assert_eq!(m.param_total(), spec.param_count().unwrap());
    }

    #[test]
    fn spec_roundtrips_toml_and_json() {
        let spec = build_vgg11_like(VggVariant::V2, true, true, &vgg_options()).unwrap();
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<ModelSpec>(&text).unwrap(), spec);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&json).unwrap(), spec);
    }
}
