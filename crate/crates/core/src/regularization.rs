//! Dropout and Gaussian noise injection at the three KAN-conv hook points,
//! plus activation and weight penalties.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Module;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegKind {
    Dropout,
    Noise,
}

/// Where inside a KAN convolution the regularizer acts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// On the layer input, before both branches.
    Full,
    /// On the input of the basis expansion only.
    Poly,
    /// On the stacked basis features, before the polynomial weights.
    Degree,
}

/// Regularizer attached to a single layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementReg {
    pub kind: RegKind,
    pub placement: Placement,
    pub p: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl PlacementReg {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("regularizer p = {} outside [0, 1]", self.p)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("noise alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Training-config block: an optional placement regularizer and penalty weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RegConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placement: Option<PlacementReg>,
    #[serde(default)]
    pub l1_activation: f64,
    #[serde(default)]
    pub l2_activation: f64,
    #[serde(default)]
    pub l1_weight: f64,
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.placement {
            p.validate()?;
        }
        for (name, v) in [
            ("l1_activation", self.l1_activation),
            ("l2_activation", self.l2_activation),
            ("l1_weight", self.l1_weight),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn wants_activations(&self) -> bool {
        self.l1_activation > 0.0 || self.l2_activation > 0.0
    }
}

/// Applies dropout or noise injection. Identity in eval mode and for `p = 0`.
pub fn apply_placement_regularizer<T: Real>(
    x: &Tensor<T>,
    reg: &PlacementReg,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    reg.validate()?;
    if !train || reg.p == 0.0 {
        return Ok(x.clone());
    }
    match reg.kind {
        RegKind::Dropout => {
            let keep = 1.0 - reg.p;
            let scale = if keep > 0.0 { T::lit(1.0 / keep) } else { T::zero() };
            let mask: Vec<T> = (0..x.numel())
                .map(|_| if rng.random::<f64>() < reg.p { T::zero() } else { scale })
                .collect();
            x.mul(&Tensor::new(mask, x.shape())?)
        }
        RegKind::Noise => {
            let std = channel_std(x);
            let (_, c, inner) = channel_layout(x.shape());
            let noise: Vec<T> = (0..x.numel())
                .map(|i| {
                    let hit = rng.random::<f64>() < reg.p;
                    let eps: f64 = rng.sample(StandardNormal);
                    if hit {
                        T::lit(reg.alpha * std[(i / inner) % c] * eps)
                    } else {
                        T::zero()
                    }
                })
                .collect();
            x.add(&Tensor::new(noise, x.shape())?)
        }
    }
}

/// (outer, channels, inner) extents when axis 1 is the channel axis.
fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    if shape.len() < 2 {
        return (1, 1, shape.iter().product());
    }
    (shape[0], shape[1], shape[2..].iter().product())
}

/// Per-channel population standard deviation over all other axes, detached.
pub fn channel_std<T: Real>(x: &Tensor<T>) -> Vec<f64> {
    let (outer, c, inner) = channel_layout(x.shape());
    let d = x.data();
    let n = (outer * inner) as f64;
    (0..c)
        .map(|ch| {
            let vals = (0..outer).flat_map(|o| d[(o * c + ch) * inner..(o * c + ch + 1) * inner].iter());
            let mean = vals.clone().map(|v| v.as_f64()).sum::<f64>() / n;
            let var = vals.map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
            var.sqrt()
        })
        .collect()
}

/// `l1·Σ|a| + l2·Σa²` over all collected activations.
pub fn activation_penalty<T: Real>(acts: &[Tensor<T>], l1: f64, l2: f64) -> Tensor<T> {
    let mut total = Tensor::scalar(T::zero());
    for a in acts {
        if l1 > 0.0 {
            total = total.add(&a.abs().sum().scale(l1)).expect("scalar add");
        }
        if l2 > 0.0 {
            total = total.add(&a.square().sum().scale(l2)).expect("scalar add");
        }
    }
    total
}

/// `coef·Σ|w|` over trainable KAN-convolution weights (heads, norms and
/// gates excluded).
pub fn weight_penalty<T: Real>(model: &dyn Module<T>, coef: f64) -> Tensor<T> {
    let mut total = Tensor::scalar(T::zero());
    if coef == 0.0 {
        return total;
    }
    for (_, p) in model.params() {
        if p.is_trainable() && p.kind().is_kan_weight() {
            total = total
                .add(&p.tensor().abs().sum().scale(coef))
                .expect("scalar add");
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn reg(kind: RegKind, p: f64) -> PlacementReg {
        PlacementReg {
            kind,
            placement: Placement::Full,
            p,
            alpha: 1.0,
        }
    }

    #[test]
    fn eval_and_zero_p_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::randn(&[2, 3, 4, 4], 1.0, &mut rng);
        for kind in [RegKind::Dropout, RegKind::Noise] {
            let y = apply_placement_regularizer(&x, &reg(kind, 0.7), false, &mut rng).unwrap();
            assert!(y.bit_eq(&x));
            let y = apply_placement_regularizer(&x, &reg(kind, 0.0), true, &mut rng).unwrap();
            assert!(y.bit_eq(&x));
        }
    }

    #[test]
    fn invalid_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::zeros(&[2, 2]);
        assert!(apply_placement_regularizer(&x, &reg(RegKind::Dropout, 1.5), true, &mut rng).is_err());
        assert!(apply_placement_regularizer(&x, &reg(RegKind::Noise, -0.1), false, &mut rng).is_err());
    }

    #[test]
    fn constant_channels_are_untouched_by_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::new((0..16).map(|i| (i / 4 % 2) as f64).collect(), &[2, 2, 2, 2]).unwrap();
        let y = apply_placement_regularizer(&x, &reg(RegKind::Noise, 1.0), true, &mut rng).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn penalties_by_hand() {
        let a = Tensor::<f64>::new(vec![1.0, -2.0], &[2]).unwrap();
        assert_eq!(activation_penalty(&[a.clone()], 1.0, 0.0).item().unwrap(), 3.0);
        assert_eq!(activation_penalty(&[a.clone()], 0.0, 1.0).item().unwrap(), 5.0);
        assert_eq!(activation_penalty(&[a], 0.0, 0.0).item().unwrap(), 0.0);
        assert_eq!(activation_penalty::<f64>(&[Tensor::zeros(&[3])], 1.0, 1.0).item().unwrap(), 0.0);
    }
}
