use std::sync::Arc;

use super::{Basis, BasisSpec, Normalization};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThreeTermFamily {
    /// Legendre-form recurrence, registered as the Gram kernel.
    Gram,
    Legendre,
    Chebyshev,
}

/// Polynomials generated by a three-term recurrence starting at `1, u`.
///
/// Gram and Legendre kinds share
/// `P_{n+1} = ((2n+1)·u·P_n − n·P_{n−1}) / (n+1)`;
/// Chebyshev uses `T_{n+1} = 2u·T_n − T_{n−1}`.
#[derive(Debug, Clone)]
pub struct ThreeTermPolynomial {
    family: ThreeTermFamily,
    degree: usize,
    normalization: Normalization,
}

impl ThreeTermPolynomial {
    pub fn new(family: ThreeTermFamily, degree: usize, normalization: Normalization) -> Self {
        ThreeTermPolynomial {
            family,
            degree,
            normalization,
        }
    }

    /// Coefficients `(a, c)` of `t_{n+1} = a·u·t_n − c·t_{n−1}`.
    fn coefficients(&self, n: usize) -> (f64, f64) {
        match self.family {
            ThreeTermFamily::Chebyshev => (2.0, 1.0),
            ThreeTermFamily::Gram | ThreeTermFamily::Legendre => {
                let nf = n as f64;
                ((2.0 * nf + 1.0) / (nf + 1.0), nf / (nf + 1.0))
            }
        }
    }
}

pub(super) fn build(spec: &BasisSpec, family: ThreeTermFamily) -> Result<Arc<dyn Basis>> {
    Ok(Arc::new(ThreeTermPolynomial::new(
        family,
        spec.degree,
        spec.normalization,
    )))
}

impl Basis for ThreeTermPolynomial {
    fn name(&self) -> &str {
        match self.family {
            ThreeTermFamily::Gram => "gram",
            ThreeTermFamily::Legendre => "legendre",
            ThreeTermFamily::Chebyshev => "chebyshev",
        }
    }

    fn feature_count(&self) -> usize {
        self.degree + 1
    }

    fn is_polynomial(&self) -> bool {
        true
    }

    fn normalization(&self) -> Normalization {
        self.normalization
    }

    fn eval(&self, u: f64, values: &mut [f64], derivs: Option<&mut [f64]>) {
        let f = self.feature_count();
        values[0] = 1.0;
        if f > 1 {
            values[1] = u;
        }
        for n in 1..f.saturating_sub(1) {
            let (a, c) = self.coefficients(n);
            values[n + 1] = a * u * values[n] - c * values[n - 1];
        }
        if let Some(d) = derivs {
            d[0] = 0.0;
            if f > 1 {
                d[1] = 1.0;
            }
            for n in 1..f.saturating_sub(1) {
                let (a, c) = self.coefficients(n);
                d[n + 1] = a * (values[n] + u * d[n]) - c * d[n - 1];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn values(kind: ThreeTermFamily, degree: usize, u: f64) -> Vec<f64> {
        let p = ThreeTermPolynomial::new(kind, degree, Normalization::None);
        let mut v = vec![0.0; degree + 1];
        p.eval(u, &mut v, None);
        v
    }

    #[test]
    fn legendre_form_is_one_at_one() {
        for kind in [ThreeTermFamily::Gram, ThreeTermFamily::Legendre] {
            for v in values(kind, 5, 1.0) {
                assert!((v - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hand_values() {
        assert_eq!(values(ThreeTermFamily::Chebyshev, 2, 0.5)[2], -0.5);
        assert!((values(ThreeTermFamily::Legendre, 2, 0.5)[2] + 0.125).abs() < 1e-15);
        assert_eq!(values(ThreeTermFamily::Gram, 0, 0.3), vec![1.0]);
        assert_eq!(values(ThreeTermFamily::Chebyshev, 0, -0.9), vec![1.0]);
    }

    #[test]
    fn derivative_matches_central_difference() {
        for kind in [ThreeTermFamily::Gram, ThreeTermFamily::Chebyshev] {
            let p = ThreeTermPolynomial::new(kind, 6, Normalization::None);
            let (mut v, mut d) = (vec![0.0; 7], vec![0.0; 7]);
            let (mut vp, mut vm) = (vec![0.0; 7], vec![0.0; 7]);
            for &u in &[-0.8, -0.1, 0.35, 0.9] {
                p.eval(u, &mut v, Some(&mut d));
                p.eval(u + 1e-6, &mut vp, None);
                p.eval(u - 1e-6, &mut vm, None);
                for n in 0..7 {
                    let fd = (vp[n] - vm[n]) / 2e-6;
                    assert!((fd - d[n]).abs() < 1e-6, "{kind:?} n={n} u={u}");
                }
            }
        }
    }
}
