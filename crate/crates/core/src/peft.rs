//! Degree-windowed fine-tuning: only polynomial weights of degrees in
//! `[r_l, r_u]` train, optionally after extending the basis with zero-initialized degrees.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Module, ParamKind};
use crate::models::Model;
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeftPlan {
    pub r_l: usize,
    pub r_u: usize,
    #[serde(default)]
    pub train_residual: bool,
    #[serde(default)]
    pub train_head: bool,
    /// Whether batch-norm running statistics keep updating while fine-tuning.
    #[serde(default)]
    pub update_norm_stats: bool,
}

impl PeftPlan {
    pub fn new(r_l: usize, r_u: usize) -> Self {
        PeftPlan {
            r_l,
            r_u,
            train_residual: false,
            train_head: false,
            update_norm_stats: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_l > self.r_u {
            return Err(Error::Config(format!(
                "degree window [{}, {}] is empty",
                self.r_l, self.r_u
            )));
        }
        Ok(())
    }

    /// Number of degrees appended to a basis of degree `n`.
    pub fn extend_by(&self, n: usize) -> usize {
        self.r_u.saturating_sub(n)
    }

    /// Whether parameters of this kind train under the plan.
    pub fn trains_kind(&self, kind: ParamKind) -> bool {
        match kind {
            ParamKind::Poly { degree } => (self.r_l..=self.r_u).contains(&degree),
            ParamKind::Residual => self.train_residual,
            ParamKind::Head => self.train_head,
            _ => false,
        }
    }
}

/// Trainable and frozen scalar counts of one layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: String,
    pub trainable: usize,
    pub frozen: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainableReport {
    pub layers: Vec<LayerReport>,
    /// Trainable and total polynomial weights outside the head.
    pub poly_trainable: usize,
    pub poly_total: usize,
}

impl TrainableReport {
    pub fn trainable(&self) -> usize {
        self.layers.iter().map(|l| l.trainable).sum()
    }

    pub fn frozen(&self) -> usize {
        self.layers.iter().map(|l| l.frozen).sum()
    }

    pub fn total(&self) -> usize {
        self.trainable() + self.frozen()
    }

    pub fn trainable_fraction(&self) -> f64 {
        self.trainable() as f64 / self.total().max(1) as f64
    }

    pub fn poly_fraction(&self) -> f64 {
        self.poly_trainable as f64 / self.poly_total.max(1) as f64
    }
}

/// Per-layer trainable/frozen counts (buffers excluded).
pub fn trainable_param_report<T: Real>(model: &Model<T>) -> TrainableReport {
    let mut layers = Vec::new();
    let (mut poly_trainable, mut poly_total) = (0, 0);
    for (name, ps) in model.layers() {
        let (mut t, mut f) = (0, 0);
        for (_, p) in ps.iter().filter(|(_, p)| !p.is_buffer()) {
            if p.is_trainable() {
                t += p.numel();
            } else {
                f += p.numel();
            }
            if matches!(p.kind(), ParamKind::Poly { .. }) {
                poly_total += p.numel();
                if p.is_trainable() {
                    poly_trainable += p.numel();
                }
            }
        }
        layers.push(LayerReport {
            layer: name,
            trainable: t,
            frozen: f,
        });
    }
    TrainableReport {
        layers,
        poly_trainable,
        poly_total,
    }
}

/// Extends bases when `r_u` exceeds the current degree, then freezes
/// everything outside the plan. Forward outputs are unchanged.
pub fn apply_peft_plan<T: Real>(model: &mut Model<T>, plan: &PeftPlan) -> Result<TrainableReport> {
    plan.validate()?;
    if let Some(b) = model.spec.bases().iter().find(|b| !b.is_polynomial()) {
        return Err(Error::Config(format!(
            "degree-windowed fine-tuning needs a polynomial basis, found `{}`",
            b.kind
        )));
    }
    for conv in model.kan_convs_mut() {
        if plan.extend_by(conv.config.basis.degree) > 0 {
            conv.extend_degree(plan.r_u)?;
        }
    }
    model.spec.extend_degree(plan.r_u);
    for (_, p) in model.params_mut() {
        let t = plan.trains_kind(p.kind());
        p.set_trainable(t);
    }
    Ok(trainable_param_report(model))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extension_count() {
        let p = PeftPlan::new(4, 6);
        assert_eq!(p.extend_by(5), 1);
        assert_eq!(p.extend_by(6), 0);
        assert_eq!(p.extend_by(8), 0);
        assert!(PeftPlan::new(3, 2).validate().is_err());
    }
}
