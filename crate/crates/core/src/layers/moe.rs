use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BasisConv, ForwardCtx, Linear};
use crate::error::{Error, Result};
use crate::regularization::PlacementReg;
use crate::tensor::{Real, Tensor};

/// Sparse mixture-of-experts gating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoEConfig {
    pub num_experts: usize,
    pub active_k: usize,
    /// Standard deviation of Gaussian logit noise in training mode.
    #[serde(default)]
    pub gate_noise_std: f64,
    #[serde(default)]
    pub load_balance_coef: f64,
}

impl Default for MoEConfig {
    fn default() -> Self {
        MoEConfig {
            num_experts: 8,
            active_k: 2,
            gate_noise_std: 0.0,
            load_balance_coef: 0.0,
        }
    }
}

impl MoEConfig {
    pub fn validate(&self) -> Result<()> {
        if self.active_k == 0 || self.active_k > self.num_experts {
            return Err(Error::Config(format!(
                "active_k {} must lie in 1..={}",
                self.active_k, self.num_experts
            )));
        }
        if !(self.gate_noise_std >= 0.0) || !(self.load_balance_coef >= 0.0) {
            return Err(Error::Config("gate noise and load-balance coefficient must be non-negative".into()));
        }
        Ok(())
    }
}

/// Gating decisions of one MoE forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Routing {
    pub num_experts: usize,
    /// Row-major `[B, E]` logits after noise.
    pub logits: Vec<f64>,
    /// Selected experts per sample, best first.
    pub selected: Vec<Vec<usize>>,
    /// Row-major `[B, E]` gate weights; zero for unselected experts.
    pub gates: Vec<f64>,
}

/// Indices of the `k` largest values, best first; ties go to the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

const MASKED_LOGIT: f64 = -1e30;

/// Routes each sample to its top-k experts and mixes their outputs with a
/// softmax renormalized over the selected logits.
///
/// Returns the mixture `[B, d', H', W']` and the load-balancing loss
/// `coef · CV²` of the per-expert gate mass.
pub(super) fn moe_forward<T: Real>(
    x: &Tensor<T>,
    experts: &[BasisConv<T>],
    gate: &Linear<T>,
    cfg: &MoEConfig,
    reg: Option<&PlacementReg>,
    ctx: &mut ForwardCtx<'_, T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let b = x.shape()[0];
    let e = experts.len();
    let pooled = x.global_avg_pool()?;
    let mut logits = pooled.matmul_t(gate.weight.tensor(), false, true)?;
    if ctx.train && cfg.gate_noise_std > 0.0 {
        let noise: Vec<T> = (0..b * e)
            .map(|_| T::lit(cfg.gate_noise_std * ctx.rng.sample::<f64, _>(StandardNormal)))
            .collect();
        logits = logits.add(&Tensor::new(noise, &[b, e])?)?;
    }
    let raw: Vec<f64> = logits.data().iter().map(|v| v.as_f64()).collect();
    let selected: Vec<Vec<usize>> = raw.chunks_exact(e).map(|row| top_k_indices(row, cfg.active_k)).collect();
    let mut mask = vec![T::lit(MASKED_LOGIT); b * e];
    for (bi, sel) in selected.iter().enumerate() {
        for &j in sel {
            mask[bi * e + j] = T::zero();
        }
    }
    let gates = logits.add(&Tensor::new(mask, &[b, e])?)?.softmax(1)?;

    let mut out: Option<Tensor<T>> = None;
    for (j, expert) in experts.iter().enumerate() {
        let rows: Vec<usize> = (0..b).filter(|&bi| selected[bi].contains(&j)).collect();
        if rows.is_empty() {
            continue;
        }
        let y = expert.forward(&x.select_rows(&rows)?, reg, ctx)?;
        let g = gates.narrow(1, j, 1)?.select_rows(&rows)?.reshape(&[rows.len(), 1, 1, 1])?;
        let part = y.mul(&g)?.scatter_rows(&rows, b)?;
        out = Some(match out {
            Some(acc) => acc.add(&part)?,
            None => part,
        });
    }
    let out = out.expect("every sample selects at least one expert");

    let aux = if cfg.load_balance_coef > 0.0 {
        let importance = gates.sum_axis(0, false)?;
        let mean = importance.mean();
        let var = importance.variance_axis(0, false)?;
        var.div(&mean.square())?.scale(cfg.load_balance_coef)
    } else {
        Tensor::scalar(T::zero())
    };

    if ctx.record_routing {
        ctx.routing.push(Routing {
            num_experts: e,
            logits: raw,
            selected,
            gates: gates.data().iter().map(|v| v.as_f64()).collect(),
        });
    }
    Ok((out, aux))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_prefers_lower_index_on_ties() {
        assert_eq!(top_k_indices(&[1.0, 3.0, 3.0, 2.0], 2), vec![1, 2]);
        assert_eq!(top_k_indices(&[0.0, 0.0, 0.0], 2), vec![0, 1]);
        assert_eq!(top_k_indices(&[-1.0, 5.0, 4.0], 1), vec![1]);
    }

    #[test]
    fn config_bounds() {
        assert!(MoEConfig::default().validate().is_ok());
        let bad = MoEConfig { active_k: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
