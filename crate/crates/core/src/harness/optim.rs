//! AdamW with decoupled weight decay and a warmup + polynomial-decay schedule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Parameter;
use crate::tensor::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl AdamWConfig {
    pub fn new(lr: f64) -> Self {
        AdamWConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (n, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{n} = {b} outside [0, 1)")));
            }
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("eps must be positive and weight decay non-negative".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates of one parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Optimizer state keyed by parameter name; moments are kept in 64-bit.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig::new(1e-3)
    }
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update at learning rate `lr`. Frozen parameters and parameters
    /// without a gradient are left untouched.
    pub fn step<T: Real>(&mut self, params: Vec<(String, &mut Parameter<T>)>, lr: f64) -> Result<()> {
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, p) in params {
            if !p.is_trainable() {
                continue;
            }
            let Some(g) = p.grad() else { continue };
            let st = self.moments.entry(name).or_insert_with(|| Moments {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            if st.m.len() != g.len() {
                return Err(Error::Contract(format!(
                    "optimizer state has {} entries, parameter {}",
                    st.m.len(),
                    g.len()
                )));
            }
            let data: Vec<T> = p
                .tensor()
                .data()
                .iter()
                .zip(&g)
                .zip(st.m.iter_mut().zip(st.v.iter_mut()))
                .map(|((&w, &g), (m, v))| {
                    let (w, g) = (w.as_f64(), g.as_f64());
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let update = (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                    T::lit(w - lr * (update + c.weight_decay * w))
                })
                .collect();
            p.set_data(data)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerConfig {
    #[serde(default)]
    pub warmup_steps: u64,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default)]
    pub end_lr: f64,
}

fn default_power() -> f64 {
    1.0
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            warmup_steps: 0,
            power: default_power(),
            end_lr: 0.0,
        }
    }
}

/// Linear warmup to `base` over `warmup_steps`, then
/// `(base − end)·(1 − progress)^power + end` until `total_steps`.
pub fn poly_lr(step: u64, base: f64, total_steps: u64, cfg: &SchedulerConfig) -> f64 {
    if step < cfg.warmup_steps {
        return base * (step + 1) as f64 / cfg.warmup_steps as f64;
    }
    let span = total_steps.saturating_sub(cfg.warmup_steps).max(1);
    let progress = ((step - cfg.warmup_steps) as f64 / span as f64).min(1.0);
    (base - cfg.end_lr) * (1.0 - progress).powf(cfg.power) + cfg.end_lr
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ParamKind;
    use crate::tensor::Tensor;

    #[test]
    fn warmup_and_decay() {
        let cfg = SchedulerConfig {
            warmup_steps: 10,
            power: 2.0,
            end_lr: 0.0,
        };
        assert_eq!(poly_lr(0, 1.0, 110, &cfg), 0.1);
        assert_eq!(poly_lr(9, 1.0, 110, &cfg), 1.0);
        assert_eq!(poly_lr(10, 1.0, 110, &cfg), 1.0);
        assert!((poly_lr(60, 1.0, 110, &cfg) - 0.25).abs() < 1e-15);
        assert_eq!(poly_lr(500, 1.0, 110, &cfg), 0.0);
    }

    #[test]
    fn frozen_param_is_untouched() {
        let mut p = Parameter::new(Tensor::<f64>::new(vec![1.0, 2.0], &[2]).unwrap(), ParamKind::Residual);
        p.set_trainable(false);
        let mut opt = AdamW::new(AdamWConfig::new(0.1));
        for _ in 0..5 {
            opt.step(vec![("w".to_string(), &mut p)], 0.1).unwrap();
        }
        assert_eq!(p.tensor().data(), &[1.0, 2.0]);
        assert!(opt.moments.is_empty());
    }
}
