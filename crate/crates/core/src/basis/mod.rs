//! Univariate basis families used inside KAN kernels.
//!
//! Each family implements [`Basis`] and is registered by name in a
//! [`BasisRegistry`]; layers look their basis up from a serializable
//! [`BasisSpec`] at construction time.

mod ops;
mod poly;
mod rbf;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ops::{basis_channels, evaluate_basis};
pub use poly::{ThreeTermFamily, ThreeTermPolynomial};
pub use rbf::RadialBasis;

/// How raw inputs are mapped into the basis domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// `u = tanh(x)`, keeps polynomial kinds inside `[-1, 1]`.
    #[default]
    Tanh,
    /// `u = x`; polynomial kinds then require `|x| ≤ 1`.
    None,
}

impl Normalization {
    pub fn apply(self, x: f64) -> (f64, f64) {
        match self {
            Normalization::Tanh => {
                let u = x.tanh();
                (u, 1.0 - u * u)
            }
            Normalization::None => (x, 1.0),
        }
    }
}

/// Declarative description of a basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    /// Registry name: `gram`, `chebyshev`, `legendre` or `rbf`.
    pub kind: String,
    /// Highest polynomial degree; for `rbf`, the number of centers.
    pub degree: usize,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbf_range: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rbf_gamma: Option<f64>,
}

impl BasisSpec {
    pub fn gram(degree: usize) -> Self {
        Self::polynomial("gram", degree)
    }

    pub fn chebyshev(degree: usize) -> Self {
        Self::polynomial("chebyshev", degree)
    }

    pub fn legendre(degree: usize) -> Self {
        Self::polynomial("legendre", degree)
    }

    fn polynomial(kind: &str, degree: usize) -> Self {
        BasisSpec {
            kind: kind.into(),
            degree,
            normalization: Normalization::Tanh,
            rbf_range: None,
            rbf_gamma: None,
        }
    }

    /// Radial basis with `centers` evenly spaced on [-2, 2], gamma 1.
    pub fn rbf(centers: usize) -> Self {
        BasisSpec {
            kind: "rbf".into(),
            degree: centers,
            normalization: Normalization::None,
            rbf_range: Some((-2.0, 2.0)),
            rbf_gamma: Some(1.0),
        }
    }

    pub fn with_normalization(mut self, n: Normalization) -> Self {
        self.normalization = n;
        self
    }

    pub fn build(&self) -> Result<Arc<dyn Basis>> {
        BasisRegistry::global().build(self)
    }

    pub fn is_polynomial(&self) -> bool {
        matches!(self.kind.as_str(), "gram" | "chebyshev" | "legendre")
    }
}

/// Number of features a spec produces.
pub fn basis_feature_count(spec: &BasisSpec) -> Result<usize> {
    Ok(spec.build()?.feature_count())
}

/// A family of univariate functions `t_0..t_{F-1}` evaluated on normalized input.
pub trait Basis: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    fn feature_count(&self) -> usize;

    /// Polynomial kinds are defined on `[-1, 1]` only.
    fn is_polynomial(&self) -> bool;

    fn normalization(&self) -> Normalization;

    /// Writes `t_n(u)` into `values` and, when given, `dt_n/du` into `derivs`.
    fn eval(&self, u: f64, values: &mut [f64], derivs: Option<&mut [f64]>);

    /// Normalizes `x`, checks the domain, and evaluates every feature.
    /// `derivs` receives derivatives with respect to the raw input `x`.
    fn eval_raw(&self, x: f64, values: &mut [f64], derivs: Option<&mut [f64]>) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("non-finite basis input {x}")));
        }
        let (u, du) = self.normalization().apply(x);
        if self.is_polynomial() && u.abs() > 1.0 {
            return Err(Error::Domain(format!(
                "{} basis input {x} outside [-1, 1] without normalization",
                self.name()
            )));
        }
        match derivs {
            Some(d) => {
                self.eval(u, values, Some(d));
                d.iter_mut().for_each(|v| *v *= du);
            }
            None => self.eval(u, values, None),
        }
        Ok(())
    }
}

pub type BasisFactory = fn(&BasisSpec) -> Result<Arc<dyn Basis>>;

/// Name → constructor table for basis families.
#[derive(Clone)]
pub struct BasisRegistry {
    factories: BTreeMap<String, BasisFactory>,
}

impl fmt::Debug for BasisRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl BasisRegistry {
    pub fn empty() -> Self {
        BasisRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register("gram", |s| poly::build(s, ThreeTermFamily::Gram));
        r.register("legendre", |s| poly::build(s, ThreeTermFamily::Legendre));
        r.register("chebyshev", |s| poly::build(s, ThreeTermFamily::Chebyshev));
        r.register("rbf", rbf::build);
        r
    }

    pub fn global() -> &'static BasisRegistry {
        static REGISTRY: OnceLock<BasisRegistry> = OnceLock::new();
        REGISTRY.get_or_init(BasisRegistry::with_defaults)
    }

    pub fn register(&mut self, name: &str, factory: BasisFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, spec: &BasisSpec) -> Result<Arc<dyn Basis>> {
        let factory = self.factories.get(&spec.kind).ok_or_else(|| Error::Unknown {
            what: "basis kind",
            name: spec.kind.clone(),
        })?;
        factory(spec)
    }
}
