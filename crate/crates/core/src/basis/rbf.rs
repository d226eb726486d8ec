use std::sync::Arc;

use super::{Basis, BasisSpec, Normalization};
use crate::error::{Error, Result};

/// Gaussian bumps `exp(−γ·(u − c_i)²)` on evenly spaced centers.
#[derive(Debug, Clone)]
pub struct RadialBasis {
    centers: Vec<f64>,
    gamma: f64,
    normalization: Normalization,
}

impl RadialBasis {
    pub fn new(count: usize, range: (f64, f64), gamma: f64, normalization: Normalization) -> Result<Self> {
        if count == 0 {
            return Err(Error::Config("rbf basis needs at least one center".into()));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::Config(format!("rbf gamma must be positive, got {gamma}")));
        }
        let (lo, hi) = range;
        if !(lo < hi) {
            return Err(Error::Config(format!("rbf range ({lo}, {hi}) is empty")));
        }
        let centers = if count == 1 {
            vec![0.5 * (lo + hi)]
        } else {
            (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect()
        };
        Ok(RadialBasis {
            centers,
            gamma,
            normalization,
        })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }
}

pub(super) fn build(spec: &BasisSpec) -> Result<Arc<dyn Basis>> {
    Ok(Arc::new(RadialBasis::new(
        spec.degree,
        spec.rbf_range.unwrap_or((-2.0, 2.0)),
        spec.rbf_gamma.unwrap_or(1.0),
        spec.normalization,
    )?))
}

impl Basis for RadialBasis {
    fn name(&self) -> &str {
        "rbf"
    }

    fn feature_count(&self) -> usize {
        self.centers.len()
    }

    fn is_polynomial(&self) -> bool {
        false
    }

    fn normalization(&self) -> Normalization {
        self.normalization
    }

    fn eval(&self, u: f64, values: &mut [f64], derivs: Option<&mut [f64]>) {
        for (v, &c) in values.iter_mut().zip(&self.centers) {
            *v = (-self.gamma * (u - c) * (u - c)).exp();
        }
        if let Some(d) = derivs {
            for ((d, &v), &c) in d.iter_mut().zip(values.iter()).zip(&self.centers) {
                *d = -2.0 * self.gamma * (u - c) * v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let r = RadialBasis::new(8, (-2.0, 2.0), 1.0, Normalization::None).unwrap();
        assert_eq!(r.centers().len(), 8);
        assert_eq!(r.centers()[0], -2.0);
        assert_eq!(r.centers()[7], 2.0);
        let mut v = vec![0.0; 8];
        r.eval(2.0, &mut v, None);
        assert_eq!(v[7], 1.0);
    }

    #[test]
    fn invalid_configs() {
        assert!(RadialBasis::new(0, (-1.0, 1.0), 1.0, Normalization::None).is_err());
        assert!(RadialBasis::new(4, (-1.0, 1.0), 0.0, Normalization::None).is_err());
        assert!(RadialBasis::new(4, (-1.0, 1.0), -2.0, Normalization::None).is_err());
        assert!(RadialBasis::new(4, (1.0, 1.0), 1.0, Normalization::None).is_err());
    }
}
