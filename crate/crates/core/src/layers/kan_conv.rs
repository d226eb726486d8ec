use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::moe::{moe_forward, MoEConfig};
use super::{scoped, scoped_mut, ActKind, BatchNorm2d, ForwardCtx, Linear, Module, NormKind, ParamKind, Parameter};
use crate::basis::{basis_channels, Basis, BasisSpec};
use crate::error::{Error, Result};
use crate::regularization::{apply_placement_regularizer, Placement, PlacementReg};
use crate::tensor::{Conv2dParams, Real, Tensor};

/// How bottleneck squeeze/expand projections are parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BottleneckKind {
    /// Plain 1×1 convolutions.
    #[default]
    Linear,
    /// 1×1 KAN convolutions with the layer's basis.
    Kan,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// Hyperparameters of one KAN convolution, bottlenecked or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanConvConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default = "one")]
    pub dilation: usize,
    /// `None` selects "same" padding, `dilation·(k−1)/2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default = "one")]
    pub groups: usize,
    pub basis: BasisSpec,
    /// Reduction ratio `r`; 0 disables the bottleneck.
    #[serde(default)]
    pub bottleneck_reduction: usize,
    #[serde(default = "yes")]
    pub use_activation_residual: bool,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default)]
    pub post_activation: ActKind,
    #[serde(default)]
    pub bottleneck_kind: BottleneckKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moe: Option<MoEConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularizer: Option<PlacementReg>,
}

/// Padding that keeps the spatial size at stride 1.
pub fn same_padding(kernel: usize, dilation: usize) -> usize {
    dilation * (kernel.saturating_sub(1)) / 2
}

impl KanConvConfig {
    /// Stride 1, same padding, residual on, batch norm and SiLU.
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, basis: BasisSpec) -> Self {
        KanConvConfig {
            in_channels,
            out_channels,
            kernel_size,
            stride: 1,
            dilation: 1,
            padding: None,
            groups: 1,
            basis,
            bottleneck_reduction: 0,
            use_activation_residual: true,
            norm: NormKind::Batch,
            post_activation: ActKind::Silu,
            bottleneck_kind: BottleneckKind::Linear,
            moe: None,
            regularizer: None,
        }
    }

    /// Same layer without norm and activation, as used inside attention blocks.
    pub fn bare(in_channels: usize, out_channels: usize, kernel_size: usize, basis: BasisSpec) -> Self {
        Self::new(in_channels, out_channels, kernel_size, basis)
            .with_norm(NormKind::None)
            .with_activation(ActKind::None)
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = Some(padding);
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bottleneck(mut self, reduction: usize, kind: BottleneckKind) -> Self {
        self.bottleneck_reduction = reduction;
        self.bottleneck_kind = kind;
        self
    }

    pub fn with_moe(mut self, moe: MoEConfig) -> Self {
        self.moe = Some(moe);
        self
    }

    pub fn with_residual(mut self, on: bool) -> Self {
        self.use_activation_residual = on;
        self
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_activation(mut self, act: ActKind) -> Self {
        self.post_activation = act;
        self
    }

    pub fn with_regularizer(mut self, reg: Option<PlacementReg>) -> Self {
        self.regularizer = reg;
        self
    }

    pub fn conv_params(&self) -> Conv2dParams {
        Conv2dParams {
            stride: self.stride,
            dilation: self.dilation,
            padding: self.padding.unwrap_or_else(|| same_padding(self.kernel_size, self.dilation)),
            groups: self.groups,
        }
    }

    pub fn is_bottleneck(&self) -> bool {
        self.bottleneck_reduction > 0
    }

    /// Squeezed width `d_φ = max(1, ⌊c/r⌋)`.
    pub fn squeeze_width(&self) -> usize {
        (self.in_channels / self.bottleneck_reduction.max(1)).max(1)
    }

    /// Width entering the expand projection, `max(1, ⌊o/r⌋)`.
    pub fn expand_width(&self) -> usize {
        (self.out_channels / self.bottleneck_reduction.max(1)).max(1)
    }

    pub fn output_extent(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let p = self.conv_params();
        Some((p.out_extent(h, self.kernel_size)?, p.out_extent(w, self.kernel_size)?))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel_size == 0 {
            return cfg("channels and kernel size must be positive".into());
        }
        if self.stride == 0 || self.dilation == 0 || self.groups == 0 {
            return cfg("stride, dilation and groups must be positive".into());
        }
        if self.in_channels % self.groups != 0 || self.out_channels % self.groups != 0 {
            return cfg(format!(
                "groups {} must divide channels {} -> {}",
                self.groups, self.in_channels, self.out_channels
            ));
        }
        if self.is_bottleneck() {
            let (d, e) = (self.squeeze_width(), self.expand_width());
            if d % self.groups != 0 || e % self.groups != 0 {
                return cfg(format!(
                    "groups {} must divide bottleneck widths {d} -> {e}",
                    self.groups
                ));
            }
        }
        if let Some(moe) = &self.moe {
            if !self.is_bottleneck() {
                return cfg("mixture of experts requires a bottleneck reduction".into());
            }
            moe.validate()?;
        }
        if let Some(r) = &self.regularizer {
            r.validate()?;
        }
        self.basis.build()?;
        Ok(())
    }

    /// Closed-form number of trainable scalars.
    pub fn param_count(&self) -> Result<usize> {
        let f = self.basis.build()?.feature_count();
        let (c, o, k2, g) = (
            self.in_channels,
            self.out_channels,
            self.kernel_size * self.kernel_size,
            self.groups,
        );
        let mut total = 0;
        if self.is_bottleneck() {
            let (d, e) = (self.squeeze_width(), self.expand_width());
            let proj = match self.bottleneck_kind {
                BottleneckKind::Linear => d * c + o * e,
                BottleneckKind::Kan => (d * c + o * e) * f,
            };
            let inner = e * (d / g) * f * k2;
            total += proj;
            match &self.moe {
                Some(m) => total += m.num_experts * inner + m.num_experts * d,
                None => total += inner,
            }
        } else {
            total += o * (c / g) * f * k2;
        }
        if self.use_activation_residual {
            total += o * (c / g) * k2;
        }
        if self.norm == NormKind::Batch {
            total += 2 * o;
        }
        Ok(total)
    }
}

/// Convolution over basis features: one weight tensor `[o, c/g, k, k]` per
/// feature, so each polynomial degree can be frozen on its own.
#[derive(Debug, Clone)]
pub struct BasisConv<T: Real> {
    pub spec: BasisSpec,
    basis: Arc<dyn Basis>,
    pub weights: Vec<Parameter<T>>,
    pub params: Conv2dParams,
}

impl<T: Real> BasisConv<T> {
    pub fn new(
        spec: &BasisSpec,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        params: Conv2dParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let basis = spec.build()?;
        let f = basis.feature_count();
        let cg = in_channels / params.groups;
        let std = ((cg * kernel * kernel * f) as f64).powf(-0.5);
        let weights = (0..f)
            .map(|n| {
                Parameter::randn(
                    &[out_channels, cg, kernel, kernel],
                    std,
                    ParamKind::Poly { degree: n },
                    rng,
                )
            })
            .collect();
        Ok(BasisConv {
            spec: spec.clone(),
            basis,
            weights,
            params,
        })
    }

    pub fn basis(&self) -> &dyn Basis {
        self.basis.as_ref()
    }

    pub fn feature_count(&self) -> usize {
        self.weights.len()
    }

    /// The stacked kernel `[o, F·c/g, k, k]`, feature-major within each group.
    pub fn stacked_weight(&self) -> Result<Tensor<T>> {
        let parts: Vec<Tensor<T>> = self.weights.iter().map(|p| p.tensor().clone()).collect();
        if parts.len() == 1 {
            return Ok(parts[0].clone());
        }
        // each output row only sees its own group, so per-row (feature, channel) order suffices
        Tensor::concat(&parts, 1)
    }

    pub fn forward(&self, x: &Tensor<T>, reg: Option<&PlacementReg>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        let mut input = x.clone();
        if let Some(r) = reg.filter(|r| r.placement == Placement::Poly) {
            input = apply_placement_regularizer(&input, r, ctx.train, ctx.rng)?;
        }
        let mut feats = basis_channels(&input, self.basis.as_ref(), self.params.groups)?;
        if let Some(r) = reg.filter(|r| r.placement == Placement::Degree) {
            feats = apply_placement_regularizer(&feats, r, ctx.train, ctx.rng)?;
        }
        feats.conv2d(&self.stacked_weight()?, self.params)
    }

    /// Raises the polynomial degree, appending zero-initialized weights.
    pub fn extend_degree(&mut self, new_degree: usize) -> Result<()> {
        if !self.spec.is_polynomial() {
            return Err(Error::Config(format!(
                "basis `{}` is not polynomial and cannot be extended",
                self.spec.kind
            )));
        }
        if new_degree < self.spec.degree {
            return Err(Error::Config(format!(
                "cannot lower degree {} to {new_degree}",
                self.spec.degree
            )));
        }
        let shape = self.weights[0].shape().to_vec();
        for n in self.spec.degree + 1..=new_degree {
            self.weights.push(Parameter::zeros(&shape, ParamKind::Poly { degree: n }));
        }
        self.spec.degree = new_degree;
        self.basis = self.spec.build()?;
        Ok(())
    }

    fn named(&self) -> Vec<(String, &Parameter<T>)> {
        self.weights.iter().enumerate().map(|(n, p)| (format!("poly.{n}"), p)).collect()
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        self.weights.iter_mut().enumerate().map(|(n, p)| (format!("poly.{n}"), p)).collect()
    }
}

/// 1×1 squeeze or expand projection.
#[derive(Debug, Clone)]
pub enum Projection<T: Real> {
    Linear(Parameter<T>),
    Kan(BasisConv<T>),
}

impl<T: Real> Projection<T> {
    fn new(
        kind: BottleneckKind,
        spec: &BasisSpec,
        inputs: usize,
        outputs: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(match kind {
            BottleneckKind::Linear => Projection::Linear(Parameter::randn(
                &[outputs, inputs, 1, 1],
                (inputs as f64).powf(-0.5),
                ParamKind::Projection,
                rng,
            )),
            BottleneckKind::Kan => {
                Projection::Kan(BasisConv::new(spec, inputs, outputs, 1, Conv2dParams::default(), rng)?)
            }
        })
    }

    fn forward(&self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        match self {
            Projection::Linear(w) => x.conv2d(w.tensor(), Conv2dParams::default()),
            Projection::Kan(b) => b.forward(x, None, ctx),
        }
    }

    fn named(&self) -> Vec<(String, &Parameter<T>)> {
        match self {
            Projection::Linear(w) => vec![("weight".into(), w)],
            Projection::Kan(b) => b.named(),
        }
    }

    fn named_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        match self {
            Projection::Linear(w) => vec![("weight".into(), w)],
            Projection::Kan(b) => b.named_mut(),
        }
    }
}

/// Basis path of the layer.
#[derive(Debug, Clone)]
pub enum KanPath<T: Real> {
    Direct(BasisConv<T>),
    Bottleneck {
        squeeze: Projection<T>,
        inner: BasisConv<T>,
        expand: Projection<T>,
    },
    Experts {
        squeeze: Projection<T>,
        experts: Vec<BasisConv<T>>,
        gate: Linear<T>,
        expand: Projection<T>,
    },
}

/// KAN convolution: basis path plus optional `w_b·SiLU(x)` residual, then
/// norm and activation.
#[derive(Debug, Clone)]
pub struct KanConv<T: Real> {
    pub config: KanConvConfig,
    pub path: KanPath<T>,
    pub residual: Option<Parameter<T>>,
    pub norm: Option<BatchNorm2d<T>>,
}

impl<T: Real> KanConv<T> {
    pub fn new(config: KanConvConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (k, g) = (c.kernel_size, c.groups);
        let params = c.conv_params();
        let path = if !c.is_bottleneck() {
            KanPath::Direct(BasisConv::new(&c.basis, c.in_channels, c.out_channels, k, params, rng)?)
        } else {
            let (d, e) = (c.squeeze_width(), c.expand_width());
            let squeeze = Projection::new(c.bottleneck_kind, &c.basis, c.in_channels, d, rng)?;
            match &c.moe {
                None => {
                    let inner = BasisConv::new(&c.basis, d, e, k, params, rng)?;
                    let expand = Projection::new(c.bottleneck_kind, &c.basis, e, c.out_channels, rng)?;
                    KanPath::Bottleneck { squeeze, inner, expand }
                }
                Some(m) => {
                    let experts = (0..m.num_experts)
                        .map(|_| BasisConv::new(&c.basis, d, e, k, params, rng))
                        .collect::<Result<Vec<_>>>()?;
                    let gate = Linear::new(d, m.num_experts, false, ParamKind::Gate, rng);
                    let expand = Projection::new(c.bottleneck_kind, &c.basis, e, c.out_channels, rng)?;
                    KanPath::Experts { squeeze, experts, gate, expand }
                }
            }
        };
        let residual = c.use_activation_residual.then(|| {
            let cg = c.in_channels / g;
            Parameter::randn(
                &[c.out_channels, cg, k, k],
                ((cg * k * k) as f64).powf(-0.5),
                ParamKind::Residual,
                rng,
            )
        });
        let norm = (c.norm == NormKind::Batch).then(|| BatchNorm2d::new(c.out_channels));
        Ok(KanConv {
            config,
            path,
            residual,
            norm,
        })
    }

    /// Every basis convolution in the layer (inner paths, experts, KAN projections).
    pub fn basis_convs_mut(&mut self) -> Vec<&mut BasisConv<T>> {
        fn proj<T: Real>(p: &mut Projection<T>) -> Option<&mut BasisConv<T>> {
            match p {
                Projection::Kan(b) => Some(b),
                Projection::Linear(_) => None,
            }
        }
        match &mut self.path {
            KanPath::Direct(b) => vec![b],
            KanPath::Bottleneck { squeeze, inner, expand } => {
                let mut v: Vec<&mut BasisConv<T>> = proj(squeeze).into_iter().collect();
                v.push(inner);
                v.extend(proj(expand));
                v
            }
            KanPath::Experts { squeeze, experts, expand, .. } => {
                let mut v: Vec<&mut BasisConv<T>> = proj(squeeze).into_iter().collect();
                v.extend(experts.iter_mut());
                v.extend(proj(expand));
                v
            }
        }
    }

    /// Raises the basis degree of every basis convolution; new weights are zero.
    pub fn extend_degree(&mut self, new_degree: usize) -> Result<()> {
        for b in self.basis_convs_mut() {
            b.extend_degree(new_degree)?;
        }
        self.config.basis.degree = new_degree;
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.ndim() != 4 || x.shape()[1] != self.config.in_channels {
            return Err(Error::Shape {
                op: "kan_conv",
                msg: format!(
                    "expected [B, {}, H, W] input, got {:?}",
                    self.config.in_channels,
                    x.shape()
                ),
            });
        }
        Ok(())
    }

    /// Output before norm and activation.
    pub fn pre_norm(&self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let reg = self.config.regularizer.as_ref();
        let mut x = x.clone();
        if let Some(r) = reg.filter(|r| r.placement == Placement::Full) {
            x = apply_placement_regularizer(&x, r, ctx.train, ctx.rng)?;
        }
        let mut out = match &self.path {
            KanPath::Direct(b) => b.forward(&x, reg, ctx)?,
            KanPath::Bottleneck { squeeze, inner, expand } => {
                let s = squeeze.forward(&x, ctx)?;
                let h = inner.forward(&s, reg, ctx)?;
                expand.forward(&h, ctx)?
            }
            KanPath::Experts { squeeze, experts, gate, expand } => {
                let moe = self.config.moe.as_ref().expect("validated moe config");
                let s = squeeze.forward(&x, ctx)?;
                let (h, aux) = moe_forward(&s, experts, gate, moe, reg, ctx)?;
                ctx.aux_losses.push(aux);
                expand.forward(&h, ctx)?
            }
        };
        if let Some(w) = &self.residual {
            out = out.add(&x.silu().conv2d(w.tensor(), self.config.conv_params())?)?;
        }
        Ok(out)
    }
}

impl<T: Real> Module<T> for KanConv<T> {
    fn kan_convs_mut(&mut self) -> Vec<&mut KanConv<T>> {
        vec![self]
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        let mut out = self.pre_norm(x, ctx)?;
        if let Some(n) = &mut self.norm {
            out = n.forward(&out, ctx)?;
        }
        out = self.config.post_activation.apply(&out);
        if ctx.collect_activations {
            ctx.activations.push(out.clone());
        }
        Ok(out)
    }

    fn params(&self) -> Vec<(String, &Parameter<T>)> {
        let mut v: Vec<(String, &Parameter<T>)> = Vec::new();
        match &self.path {
            KanPath::Direct(b) => v.extend(b.named()),
            KanPath::Bottleneck { squeeze, inner, expand } => {
                v.extend(scoped("squeeze", squeeze.named()));
                v.extend(scoped("inner", inner.named()));
                v.extend(scoped("expand", expand.named()));
            }
            KanPath::Experts { squeeze, experts, gate, expand } => {
                v.extend(scoped("squeeze", squeeze.named()));
                for (e, b) in experts.iter().enumerate() {
                    v.extend(scoped(&format!("experts.{e}"), b.named()));
                }
                v.extend(scoped("gate", gate.params()));
                v.extend(scoped("expand", expand.named()));
            }
        }
        if let Some(r) = &self.residual {
            v.push(("residual".into(), r));
        }
        if let Some(n) = &self.norm {
            v.extend(scoped("norm", n.params()));
        }
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        let mut v: Vec<(String, &mut Parameter<T>)> = Vec::new();
        match &mut self.path {
            KanPath::Direct(b) => v.extend(b.named_mut()),
            KanPath::Bottleneck { squeeze, inner, expand } => {
                v.extend(scoped_mut("squeeze", squeeze.named_mut()));
                v.extend(scoped_mut("inner", inner.named_mut()));
                v.extend(scoped_mut("expand", expand.named_mut()));
            }
            KanPath::Experts { squeeze, experts, gate, expand } => {
                v.extend(scoped_mut("squeeze", squeeze.named_mut()));
                for (e, b) in experts.iter_mut().enumerate() {
                    v.extend(scoped_mut(&format!("experts.{e}"), b.named_mut()));
                }
                v.extend(scoped_mut("gate", gate.params_mut()));
                v.extend(scoped_mut("expand", expand.named_mut()));
            }
        }
        if let Some(r) = &mut self.residual {
            v.push(("residual".into(), r));
        }
        if let Some(n) = &mut self.norm {
            v.extend(scoped_mut("norm", n.params_mut()));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn documented_count() {
        let cfg = KanConvConfig::new(3, 32, 3, BasisSpec::gram(3)).with_norm(NormKind::None);
        assert_eq!(cfg.param_count().unwrap(), 4320);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = KanConv::<f32>::new(cfg, &mut rng).unwrap();
        assert_eq!(layer.param_total(), 4320);
    }

    #[test]
    fn stacked_weight_matches_grouped_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = Conv2dParams { groups: 2, ..Default::default() };
        let b = BasisConv::<f64>::new(&BasisSpec::gram(2), 4, 4, 1, p, &mut rng).unwrap();
        let w = b.stacked_weight().unwrap();
        assert_eq!(w.shape(), &[4, 6, 1, 1]);
        // output channel 3 is in group 1; its column 2·f + c holds weights[f][3][c]
        for f in 0..3 {
            for c in 0..2 {
                assert_eq!(w.data()[3 * 6 + f * 2 + c], b.weights[f].tensor().data()[3 * 2 + c]);
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let base = KanConvConfig::new(6, 4, 3, BasisSpec::gram(2));
        assert!(base.clone().with_groups(4).validate().is_err());
        assert!(base.clone().with_moe(MoEConfig::default()).validate().is_err());
        let mut moe = MoEConfig::default();
        moe.active_k = 9;
        assert!(base.clone().with_bottleneck(2, BottleneckKind::Linear).with_moe(moe).validate().is_err());
        assert!(base.with_bottleneck(2, BottleneckKind::Linear).validate().is_ok());
    }
}
