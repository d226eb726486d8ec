//! Self-attention and focal modulation built from KAN convolutions.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::layers::{scoped, scoped_mut, ActKind, Conv2d, ForwardCtx, KanConv, KanConvConfig, Module, ParamKind, Parameter};
use crate::tensor::{Conv2dParams, Real, Tensor};

fn one() -> usize {
    1
}

/// Single-head spatial self-attention with KAN-convolution Q/K/V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfKagntentionConfig {
    pub channels: usize,
    /// Width of the optional 1×1 bottleneck around the attention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner_channels: Option<usize>,
    #[serde(default = "one")]
    pub qkv_kernel_size: usize,
    pub basis: BasisSpec,
}

impl SelfKagntentionConfig {
    pub fn new(channels: usize, basis: BasisSpec) -> Self {
        SelfKagntentionConfig {
            channels,
            inner_channels: None,
            qkv_kernel_size: 1,
            basis,
        }
    }

    /// Bottleneck of half the channels.
    pub fn with_default_bottleneck(mut self) -> Self {
        self.inner_channels = Some((self.channels / 2).max(1));
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.qkv_kernel_size == 0 {
            return Err(Error::Config("attention channels and kernel size must be positive".into()));
        }
        if let Some(i) = self.inner_channels {
            if i == 0 || i > self.channels {
                return Err(Error::Config(format!(
                    "inner_channels {i} must lie in 1..={}",
                    self.channels
                )));
            }
        }
        Ok(())
    }

    fn inner(&self) -> usize {
        self.inner_channels.unwrap_or(self.channels)
    }

    fn qkv_config(&self) -> KanConvConfig {
        let d = self.inner();
        KanConvConfig::bare(d, d, self.qkv_kernel_size, self.basis.clone())
    }

    pub fn param_count(&self) -> Result<usize> {
        let mut n = 3 * self.qkv_config().param_count()? + 1;
        if let Some(i) = self.inner_channels {
            n += Conv2d::<f64>::count(self.channels, i, 1, 1) + Conv2d::<f64>::count(i, self.channels, 1, 1);
        }
        Ok(n)
    }
}

#[derive(Debug, Clone)]
pub struct SelfKagntention<T: Real> {
    pub config: SelfKagntentionConfig,
    pub project_in: Option<Conv2d<T>>,
    pub query: KanConv<T>,
    pub key: KanConv<T>,
    pub value: KanConv<T>,
    pub project_out: Option<Conv2d<T>>,
    /// Learnable gate on the attention branch, initialized to zero.
    pub residual_scale: Parameter<T>,
}

impl<T: Real> SelfKagntention<T> {
    pub fn new(config: SelfKagntentionConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let p = Conv2dParams::default();
        let project_in = config
            .inner_channels
            .map(|i| Conv2d::new(c, i, 1, p, ParamKind::Projection, rng));
        let query = KanConv::new(config.qkv_config(), rng)?;
        let key = KanConv::new(config.qkv_config(), rng)?;
        let value = KanConv::new(config.qkv_config(), rng)?;
        let project_out = config
            .inner_channels
            .map(|i| Conv2d::new(i, c, 1, p, ParamKind::Projection, rng));
        Ok(SelfKagntention {
            config,
            project_in,
            query,
            key,
            value,
            project_out,
            residual_scale: Parameter::zeros(&[1], ParamKind::Auxiliary),
        })
    }

    /// Attention branch before gating, together with the `[B, P, P]` score map.
    pub fn attend(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if x.ndim() != 4 || x.shape()[1] != self.config.channels {
            return Err(Error::Shape {
                op: "self_attention",
                msg: format!("expected [B, {}, H, W], got {:?}", self.config.channels, x.shape()),
            });
        }
        let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let mut z = x.clone();
        if let Some(p) = &mut self.project_in {
            z = p.forward(&z, ctx)?;
        }
        let d = z.shape()[1];
        let flat = |t: Tensor<T>| t.reshape(&[b, d, h * w]);
        let q = flat(self.query.forward(&z, ctx)?)?;
        let k = flat(self.key.forward(&z, ctx)?)?;
        let v = flat(self.value.forward(&z, ctx)?)?;
        let scores = q.attention_probs(&k, 1.0 / (d as f64).sqrt())?;
        // out[:, c, i] = Σ_j v[:, c, j] · scores[:, i, j]
        let mut out = v.bmm(&scores, false, true)?.reshape(&[b, d, h, w])?;
        if let Some(p) = &mut self.project_out {
            out = p.forward(&out, ctx)?;
        }
        Ok((out, scores))
    }
}

impl<T: Real> Module<T> for SelfKagntention<T> {
    fn kan_convs_mut(&mut self) -> Vec<&mut KanConv<T>> {
        vec![&mut self.query, &mut self.key, &mut self.value]
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        let (out, _) = self.attend(x, ctx)?;
        x.add(&out.mul(self.residual_scale.tensor())?)
    }

    fn params(&self) -> Vec<(String, &Parameter<T>)> {
        let mut v = Vec::new();
        if let Some(p) = &self.project_in {
            v.extend(scoped("project_in", p.params()));
        }
        v.extend(scoped("query", self.query.params()));
        v.extend(scoped("key", self.key.params()));
        v.extend(scoped("value", self.value.params()));
        if let Some(p) = &self.project_out {
            v.extend(scoped("project_out", p.params()));
        }
        v.push(("residual_scale".into(), &self.residual_scale));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        let mut v = Vec::new();
        if let Some(p) = &mut self.project_in {
            v.extend(scoped_mut("project_in", p.params_mut()));
        }
        v.extend(scoped_mut("query", self.query.params_mut()));
        v.extend(scoped_mut("key", self.key.params_mut()));
        v.extend(scoped_mut("value", self.value.params_mut()));
        if let Some(p) = &mut self.project_out {
            v.extend(scoped_mut("project_out", p.params_mut()));
        }
        v.push(("residual_scale".into(), &mut self.residual_scale));
        v
    }
}

fn default_levels() -> usize {
    2
}

fn default_base_kernel() -> usize {
    3
}

fn default_growth() -> usize {
    2
}

/// Focal modulation with KAN convolutions throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocalModulationConfig {
    pub channels: usize,
    #[serde(default = "default_levels")]
    pub focal_levels: usize,
    #[serde(default = "default_base_kernel")]
    pub base_kernel: usize,
    #[serde(default = "default_growth")]
    pub kernel_growth: usize,
    pub basis: BasisSpec,
}

impl FocalModulationConfig {
    pub fn new(channels: usize, basis: BasisSpec) -> Self {
        FocalModulationConfig {
            channels,
            focal_levels: default_levels(),
            base_kernel: default_base_kernel(),
            kernel_growth: default_growth(),
            basis,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.focal_levels == 0 || self.base_kernel == 0 {
            return Err(Error::Config("focal modulation needs channels, levels and kernel ≥ 1".into()));
        }
        Ok(())
    }

    pub fn level_kernel(&self, level: usize) -> usize {
        self.base_kernel + self.kernel_growth * (level - 1)
    }

    fn pointwise(&self, out: usize) -> KanConvConfig {
        KanConvConfig::bare(self.channels, out, 1, self.basis.clone())
    }

    fn level_config(&self, level: usize) -> KanConvConfig {
        let c = self.channels;
        KanConvConfig::bare(c, c, self.level_kernel(level), self.basis.clone()).with_groups(c)
    }

    pub fn param_count(&self) -> Result<usize> {
        let c = self.channels;
        let mut n = 3 * self.pointwise(c).param_count()? + self.pointwise(self.focal_levels + 1).param_count()?;
        for l in 1..=self.focal_levels {
            n += self.level_config(l).param_count()?;
        }
        Ok(n)
    }
}

#[derive(Debug, Clone)]
pub struct FocalKagnModulation<T: Real> {
    pub config: FocalModulationConfig,
    pub query: KanConv<T>,
    pub context: KanConv<T>,
    pub levels: Vec<KanConv<T>>,
    pub gates: KanConv<T>,
    pub projection: KanConv<T>,
}

impl<T: Real> FocalKagnModulation<T> {
    pub fn new(config: FocalModulationConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let query = KanConv::new(config.pointwise(c), rng)?;
        let context = KanConv::new(config.pointwise(c), rng)?;
        let levels = (1..=config.focal_levels)
            .map(|l| KanConv::new(config.level_config(l), rng))
            .collect::<Result<Vec<_>>>()?;
        let gates = KanConv::new(config.pointwise(config.focal_levels + 1), rng)?;
        let projection = KanConv::new(config.pointwise(c), rng)?;
        Ok(FocalKagnModulation {
            config,
            query,
            context,
            levels,
            gates,
            projection,
        })
    }

    /// The modulator `Σ_ℓ gate_ℓ ⊙ z^ℓ + gate_{L+1} ⊙ mean(z^L)`.
    pub fn modulator(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        let (b, c) = (x.shape()[0], x.shape()[1]);
        let gates = self.gates.forward(x, ctx)?;
        let mut z = self.context.forward(x, ctx)?;
        let mut acc: Option<Tensor<T>> = None;
        let push = |acc: &mut Option<Tensor<T>>, t: Tensor<T>| -> Result<()> {
            *acc = Some(match acc.take() {
                Some(a) => a.add(&t)?,
                None => t,
            });
            Ok(())
        };
        for (l, level) in self.levels.iter_mut().enumerate() {
            z = ActKind::Gelu.apply(&level.forward(&z, ctx)?);
            push(&mut acc, z.mul(&gates.narrow(1, l, 1)?)?)?;
        }
        let global = z.global_avg_pool()?.reshape(&[b, c, 1, 1])?;
        let l = self.config.focal_levels;
        push(&mut acc, gates.narrow(1, l, 1)?.mul(&global)?)?;
        Ok(acc.expect("at least one level"))
    }
}

impl<T: Real> Module<T> for FocalKagnModulation<T> {
    fn kan_convs_mut(&mut self) -> Vec<&mut KanConv<T>> {
        let mut v = vec![&mut self.query, &mut self.context];
        v.extend(self.levels.iter_mut());
        v.push(&mut self.gates);
        v.push(&mut self.projection);
        v
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>> {
        if x.ndim() != 4 || x.shape()[1] != self.config.channels {
            return Err(Error::Shape {
                op: "focal_modulation",
                msg: format!("expected [B, {}, H, W], got {:?}", self.config.channels, x.shape()),
            });
        }
        let q = self.query.forward(x, ctx)?;
        let m = self.modulator(x, ctx)?;
        self.projection.forward(&q.mul(&m)?, ctx)?.add(x)
    }

    fn params(&self) -> Vec<(String, &Parameter<T>)> {
        let mut v = Vec::new();
        v.extend(scoped("query", self.query.params()));
        v.extend(scoped("context", self.context.params()));
        for (l, level) in self.levels.iter().enumerate() {
            v.extend(scoped(&format!("levels.{l}"), level.params()));
        }
        v.extend(scoped("gates", self.gates.params()));
        v.extend(scoped("projection", self.projection.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Parameter<T>)> {
        let mut v = Vec::new();
        v.extend(scoped_mut("query", self.query.params_mut()));
        v.extend(scoped_mut("context", self.context.params_mut()));
        for (l, level) in self.levels.iter_mut().enumerate() {
            v.extend(scoped_mut(&format!("levels.{l}"), level.params_mut()));
        }
        v.extend(scoped_mut("gates", self.gates.params_mut()));
        v.extend(scoped_mut("projection", self.projection.params_mut()));
        v
    }
}
