//! Trainable building blocks: parameters, the module interface, and the
//! KAN convolution family.

mod basic;
mod kan_conv;
mod moe;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::{Real, Tensor};

pub use basic::{BatchNorm2d, Conv2d, Linear};
pub use kan_conv::{same_padding, BasisConv, BottleneckKind, KanConv, KanConvConfig, KanPath, Projection};
pub use moe::{top_k_indices, MoEConfig, Routing};

/// Role of a parameter tensor; drives freezing, penalties and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParamKind {
    /// Weights of one basis feature (polynomial degree) of a KAN kernel.
    Poly { degree: usize },
    /// `w_b` weights of the SiLU residual branch.
    Residual,
    /// Squeeze/expand and other plain projection weights.
    Projection,
    /// Mixture-of-experts gate.
    Gate,
    /// Batch-norm affine parameters.
    Norm,
    /// Attention mixing scalars and biases of plain convolutions.
    Auxiliary,
    /// Classifier or segmentation head.
    Head,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

impl ParamKind {
    /// Weight tensors belonging to KAN convolutions proper.
    pub fn is_kan_weight(self) -> bool {
        matches!(self, ParamKind::Poly { .. } | ParamKind::Residual | ParamKind::Projection)
    }
}

/// A named state tensor owned by a module.
#[derive(Debug, Clone)]
pub struct Parameter<T: Real> {
    value: Tensor<T>,
    kind: ParamKind,
}

impl<T: Real> Parameter<T> {
    pub fn new(value: Tensor<T>, kind: ParamKind) -> Self {
        let trainable = kind != ParamKind::Buffer;
        Parameter {
            value: value.to_leaf(trainable),
            kind,
        }
    }

    pub fn randn(shape: &[usize], std: f64, kind: ParamKind, rng: &mut ChaCha8Rng) -> Self {
        Self::new(Tensor::randn(shape, std, rng), kind)
    }

    pub fn zeros(shape: &[usize], kind: ParamKind) -> Self {
        Self::new(Tensor::zeros(shape), kind)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn is_buffer(&self) -> bool {
        self.kind == ParamKind::Buffer
    }

    pub fn is_trainable(&self) -> bool {
        self.value.requires_grad()
    }

    /// Freezes or unfreezes the tensor. Buffers stay frozen.
    pub fn set_trainable(&mut self, trainable: bool) {
        let t = trainable && !self.is_buffer();
        if t != self.is_trainable() {
            self.value = self.value.to_leaf(t);
        }
    }

    /// Replaces the values, keeping shape and trainability.
    pub fn set_data(&mut self, data: Vec<T>) -> Result<()> {
        let shape = self.value.shape().to_vec();
        let t = Tensor::new(data, &shape)?;
        self.value = t.to_leaf(self.is_trainable());
        Ok(())
    }

    /// Substitutes `t` itself (not a copy), so gradients reach the caller's
    /// leaf. Used to differentiate through a module with respect to its weights.
    pub fn set_tensor(&mut self, t: Tensor<T>) -> Result<()> {
        if t.shape() != self.shape() {
            return crate::error::shape_err(
                "set_tensor",
                format!("expected {:?}, got {:?}", self.shape(), t.shape()),
            );
        }
        self.value = t;
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.value.grad()
    }
}

/// Per-call state threaded through a forward pass.
pub struct ForwardCtx<'a, T: Real> {
    pub train: bool,
    pub rng: &'a mut ChaCha8Rng,
    /// Whether training-mode batch norm updates its running statistics.
    pub update_norm_stats: bool,
    /// When set, every KAN convolution pushes its output here.
    pub collect_activations: bool,
    pub activations: Vec<Tensor<T>>,
    /// Auxiliary losses (MoE load balancing) for the trainer to add.
    pub aux_losses: Vec<Tensor<T>>,
    /// When set, MoE layers log their gating decisions here.
    pub record_routing: bool,
    pub routing: Vec<Routing>,
}

impl<'a, T: Real> ForwardCtx<'a, T> {
    pub fn train(rng: &'a mut ChaCha8Rng) -> Self {
        Self::new(true, rng)
    }

    pub fn eval(rng: &'a mut ChaCha8Rng) -> Self {
        Self::new(false, rng)
    }

    fn new(train: bool, rng: &'a mut ChaCha8Rng) -> Self {
        ForwardCtx {
            train,
            rng,
            update_norm_stats: true,
            collect_activations: false,
            activations: Vec::new(),
            aux_losses: Vec::new(),
            record_routing: false,
            routing: Vec::new(),
        }
    }
}

/// Anything with parameters and a forward pass over `[B, C, H, W]` or `[B, F]` tensors.
pub trait Module<T: Real> {
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut ForwardCtx<'_, T>) -> Result<Tensor<T>>;

    /// Every state tensor with a dotted name, in a fixed order.
    fn params(&self) -> Vec<(String, &Parameter<T>)>;

    fn params_mut(&mut self) -> Vec<(String, &mut Parameter<T>)>;

    /// KAN convolutions contained in this module, for degree extension.
    fn kan_convs_mut(&mut self) -> Vec<&mut KanConv<T>> {
        Vec::new()
    }

    /// Number of trainable-kind (non-buffer) scalars.
    fn param_total(&self) -> usize {
        self.params()
            .iter()
            .filter(|(_, p)| !p.is_buffer())
            .map(|(_, p)| p.numel())
            .sum()
    }
}

/// Prefixes child parameter names with `prefix.`.
pub(crate) fn scoped<'a, T: Real>(
    prefix: &str,
    items: Vec<(String, &'a Parameter<T>)>,
) -> impl Iterator<Item = (String, &'a Parameter<T>)> + use<'a, T> {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, p)| (format!("{prefix}.{n}"), p))
}

pub(crate) fn scoped_mut<'a, T: Real>(
    prefix: &str,
    items: Vec<(String, &'a mut Parameter<T>)>,
) -> impl Iterator<Item = (String, &'a mut Parameter<T>)> + use<'a, T> {
    let prefix = prefix.to_string();
    items.into_iter().map(move |(n, p)| (format!("{prefix}.{n}"), p))
}

/// Normalization after a KAN convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    #[default]
    Batch,
    None,
}

/// Activation after normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ActKind {
    #[default]
    Silu,
    Gelu,
    None,
}

impl ActKind {
    pub fn apply<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            ActKind::Silu => x.silu(),
            ActKind::Gelu => x.gelu(),
            ActKind::None => x.clone(),
        }
    }
}
