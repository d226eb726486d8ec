//! Training objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::data::BatchTarget;
use crate::tensor::{Real, Tensor};

/// Lower/upper clamp applied to probabilities inside the BCE term.
pub const BCE_CLAMP: f64 = 1e-7;
/// Additive smoothing in the Dice numerator and denominator.
pub const DICE_SMOOTH: f64 = 1.0;

fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut d = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::Contract(format!("label {l} out of range for {classes} classes")));
        }
        d[i * classes + l] = T::one();
    }
    Tensor::new(d, &[labels.len(), classes])
}

fn check_logits<T: Real>(op: &'static str, logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    if logits.ndim() != 2 || logits.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::Shape {
            op,
            msg: format!("logits {:?} vs {} labels", logits.shape(), labels.len()),
        });
    }
    Ok(logits.shape()[1])
}

/// Mean cross-entropy against label-smoothed targets
/// `(1 − s)·onehot + s/C`.
pub fn cross_entropy<T: Real>(logits: &Tensor<T>, labels: &[usize], smoothing: f64) -> Result<Tensor<T>> {
    let c = check_logits("cross_entropy", logits, labels)?;
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Config(format!("label smoothing {smoothing} outside [0, 1)")));
    }
    let mut q = one_hot::<T>(labels, c)?;
    if smoothing > 0.0 {
        q = q.scale(1.0 - smoothing).add_scalar(smoothing / c as f64);
    }
    let logp = logits.log_softmax(1)?;
    Ok(q.mul(&logp)?.sum().scale(-1.0 / labels.len() as f64))
}

/// Mean focal loss `−(1 − p_y)^γ · log p_y`; `γ = 0` is plain cross-entropy.
pub fn focal_loss<T: Real>(logits: &Tensor<T>, labels: &[usize], gamma: f64) -> Result<Tensor<T>> {
    let c = check_logits("focal_loss", logits, labels)?;
    if gamma < 0.0 || !gamma.is_finite() {
        return Err(Error::Config(format!("focal gamma {gamma} must be non-negative")));
    }
    let onehot = one_hot::<T>(labels, c)?;
    let logp_y = onehot.mul(&logits.log_softmax(1)?)?.sum_axis(1, false)?;
    let weighted = if gamma == 0.0 {
        logp_y
    } else {
        // Clamp keeps the power differentiable when p_y rounds to 1.
        let w = logp_y.exp().neg().add_scalar(1.0).clamp(0.0, 1.0);
        let w = if gamma < 1.0 { w.clamp(1e-12, 1.0) } else { w };
        w.powf(gamma)?.mul(&logp_y)?
    };
    Ok(weighted.sum().scale(-1.0 / labels.len() as f64))
}

/// Binary cross-entropy plus soft Dice loss on probabilities in `(0, 1)`.
pub fn bce_dice<T: Real>(pred: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    if pred.shape() != mask.shape() {
        return Err(Error::Shape {
            op: "bce_dice",
            msg: format!("pred {:?} vs mask {:?}", pred.shape(), mask.shape()),
        });
    }
    let p = pred.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    let not_m = mask.neg().add_scalar(1.0);
    let bce = mask
        .mul(&p.ln()?)?
        .add(&not_m.mul(&p.neg().add_scalar(1.0).ln()?)?)?
        .mean()
        .neg();
    let inter = pred.mul(mask)?.sum().scale(2.0).add_scalar(DICE_SMOOTH);
    let union = pred.sum().add(&mask.sum())?.add_scalar(DICE_SMOOTH);
    let dice = inter.div(&union)?.neg().add_scalar(1.0);
    bce.add(&dice)
}

/// Task loss selectable from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    CrossEntropy,
    Focal {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    BceDice,
}

fn default_gamma() -> f64 {
    2.0
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec::CrossEntropy
    }
}

impl LossSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LossSpec::CrossEntropy => "cross_entropy",
            LossSpec::Focal { .. } => "focal",
            LossSpec::BceDice => "bce_dice",
        }
    }

    pub fn build<T: Real>(&self, smoothing: f64) -> Box<dyn Loss<T>> {
        match *self {
            LossSpec::CrossEntropy => Box::new(CrossEntropy { smoothing }),
            LossSpec::Focal { gamma } => Box::new(Focal { gamma }),
            LossSpec::BceDice => Box::new(BceDice),
        }
    }

    pub fn is_segmentation(&self) -> bool {
        matches!(self, LossSpec::BceDice)
    }
}

/// A task loss over model outputs and batch targets.
pub trait Loss<T: Real> {
    fn name(&self) -> &str;
    fn compute(&self, output: &Tensor<T>, target: &BatchTarget<T>) -> Result<Tensor<T>>;
}

fn labels_of<T: Real>(name: &str, t: &BatchTarget<T>) -> Result<Vec<usize>> {
    match t {
        BatchTarget::Labels(l) => Ok(l.clone()),
        BatchTarget::Masks(_) => Err(Error::Config(format!("loss `{name}` needs class labels, got masks"))),
    }
}

fn mask_of<'a, T: Real>(name: &str, t: &'a BatchTarget<T>) -> Result<&'a Tensor<T>> {
    match t {
        BatchTarget::Masks(m) => Ok(m),
        BatchTarget::Labels(_) => Err(Error::Config(format!("loss `{name}` needs masks, got class labels"))),
    }
}

struct CrossEntropy {
    smoothing: f64,
}

struct Focal {
    gamma: f64,
}

struct BceDice;

impl<T: Real> Loss<T> for CrossEntropy {
    fn name(&self) -> &str {
        "cross_entropy"
    }
    fn compute(&self, output: &Tensor<T>, target: &BatchTarget<T>) -> Result<Tensor<T>> {
        cross_entropy(output, &labels_of("cross_entropy", target)?, self.smoothing)
    }
}

impl<T: Real> Loss<T> for Focal {
    fn name(&self) -> &str {
        "focal"
    }
    fn compute(&self, output: &Tensor<T>, target: &BatchTarget<T>) -> Result<Tensor<T>> {
        focal_loss(output, &labels_of("focal", target)?, self.gamma)
    }
}

impl<T: Real> Loss<T> for BceDice {
    fn name(&self) -> &str {
        "bce_dice"
    }
    fn compute(&self, output: &Tensor<T>, target: &BatchTarget<T>) -> Result<Tensor<T>> {
        bce_dice(output, mask_of("bce_dice", target)?)
    }
}
