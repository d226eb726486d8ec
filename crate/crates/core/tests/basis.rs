mod common;

use common::{chebyshev_closed, legendre_closed};
use kagn::basis::{BasisSpec, Normalization};
use proptest::prelude::*;

fn values(spec: &BasisSpec, x: f64) -> Vec<f64> {
    let b = spec.build().unwrap();
    let mut v = vec![0.0; b.feature_count()];
    b.eval_raw(x, &mut v, None).unwrap();
    v
}

fn grid(n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
}

#[test]
fn recurrence_matches_closed_forms_at_1000_points() {
    let mut worst = 0.0f64;
    for kind in ["gram", "legendre", "chebyshev"] {
        let spec = BasisSpec {
            kind: kind.into(),
            degree: 5,
            normalization: Normalization::None,
            rbf_range: None,
            rbf_gamma: None,
        };
        for u in grid(1000) {
            let v = values(&spec, u);
            for (n, got) in v.iter().enumerate() {
                let want = if kind == "chebyshev" { chebyshev_closed(n, u) } else { legendre_closed(n, u) };
                worst = worst.max((got - want).abs());
            }
        }
    }
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn tanh_normalization_composes_with_the_closed_form() {
    let spec = BasisSpec::gram(5);
    for i in 0..200 {
        let x = -6.0 + 12.0 * i as f64 / 199.0;
        for (n, got) in values(&spec, x).iter().enumerate() {
            assert!((got - legendre_closed(n, x.tanh())).abs() < 1e-12);
        }
    }
}

#[test]
fn legendre_family_is_orthogonal_on_the_interval() {
    // 2048-point trapezoid rule on [-1, 1]
    let n = 2048;
    let h = 2.0 / (n - 1) as f64;
    let spec = BasisSpec::legendre(5).with_normalization(Normalization::None);
    let rows: Vec<Vec<f64>> = grid(n).map(|u| values(&spec, u)).collect();
    for a in 0..=5 {
        for b in 0..=5 {
            let mut s = 0.0;
            for (i, r) in rows.iter().enumerate() {
                let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
                s += w * r[a] * r[b];
            }
            s *= h;
            if a == b {
                assert!((s - 2.0 / (2 * a + 1) as f64).abs() < 1e-3, "norm of P{a}: {s}");
            } else {
                assert!(s.abs() < 1e-3, "<P{a}, P{b}> = {s}");
            }
        }
    }
}

#[test]
fn rbf_features_peak_at_their_centers() {
    let spec = BasisSpec::rbf(5);
    for (j, c) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
        let v = values(&spec, *c);
        assert!((v[j] - 1.0).abs() < 1e-15);
        assert!(v.iter().all(|&f| f > 0.0 && f <= 1.0));
    }
}

proptest! {
    #[test]
    fn polynomial_features_stay_in_unit_range(x in -1e6f64..1e6, degree in 0usize..9) {
        for spec in [BasisSpec::gram(degree), BasisSpec::chebyshev(degree), BasisSpec::legendre(degree)] {
            for v in values(&spec, x) {
                prop_assert!(v.abs() <= 1.0 + 1e-12, "{} degree {degree} at {x}: {v}", spec.kind);
            }
        }
    }

    #[test]
    fn unnormalized_polynomials_reject_inputs_outside_the_interval(x in 1.0001f64..100.0) {
        let b = BasisSpec::gram(3).with_normalization(Normalization::None).build().unwrap();
        let mut v = vec![0.0; 4];
        prop_assert!(b.eval_raw(x, &mut v, None).is_err());
        prop_assert!(b.eval_raw(-x, &mut v, None).is_err());
    }
}
