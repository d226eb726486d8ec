//! Differentiable basis expansion of tensors.

use super::Basis;
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Evaluates all basis features at every point: shape `[..., F]`.
pub fn evaluate_basis<T: Real>(x: &Tensor<T>, basis: &dyn Basis) -> Result<Tensor<T>> {
    let f = basis.feature_count();
    let n = x.numel();
    let track = x.requires_grad();
    let mut values = vec![T::zero(); n * f];
    let mut derivs = if track { vec![T::zero(); n * f] } else { Vec::new() };
    let mut v = vec![0.0; f];
    let mut d = vec![0.0; f];
    for (i, &xi) in x.data().iter().enumerate() {
        basis.eval_raw(xi.as_f64(), &mut v, track.then_some(&mut d[..]))?;
        for k in 0..f {
            values[i * f + k] = T::lit(v[k]);
            if track {
                derivs[i * f + k] = T::lit(d[k]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape.push(f);
    Ok(Tensor::from_op(
        values,
        shape,
        "basis",
        vec![x.clone()],
        Box::new(move |g, _| {
            let gx = g
                .chunks_exact(f)
                .zip(derivs.chunks_exact(f))
                .map(|(g, d)| g.iter().zip(d).map(|(&a, &b)| a * b).sum())
                .collect();
            vec![Some(gx)]
        }),
    ))
}

/// Expands `[B, C, H, W]` into basis feature maps `[B, F·C, H, W]`.
///
/// Channels are laid out as `(group, feature, channel-within-group)`, so a
/// grouped convolution over the result sees, per group, the `F` feature maps
/// of exactly its own input channels, with feature-major order.
pub fn basis_channels<T: Real>(x: &Tensor<T>, basis: &dyn Basis, groups: usize) -> Result<Tensor<T>> {
    if x.ndim() != 4 {
        return shape_err("basis_channels", format!("expected [B, C, H, W], got {:?}", x.shape()));
    }
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if groups == 0 || c % groups != 0 {
        return Err(Error::Config(format!(
            "{c} channels cannot be split into {groups} groups"
        )));
    }
    let f = basis.feature_count();
    let cg = c / groups;
    let hw = h * w;
    let out_c = f * c;
    let track = x.requires_grad();
    let mut values = vec![T::zero(); b * out_c * hw];
    let mut derivs = if track { vec![T::zero(); b * out_c * hw] } else { Vec::new() };
    let mut v = vec![0.0; f];
    let mut d = vec![0.0; f];
    let out_channel = move |ch: usize, k: usize| (ch / cg) * f * cg + k * cg + ch % cg;
    let xs = x.data();
    for bi in 0..b {
        for ch in 0..c {
            let src = (bi * c + ch) * hw;
            for p in 0..hw {
                basis.eval_raw(xs[src + p].as_f64(), &mut v, track.then_some(&mut d[..]))?;
                for k in 0..f {
                    let dst = (bi * out_c + out_channel(ch, k)) * hw + p;
                    values[dst] = T::lit(v[k]);
                    if track {
                        derivs[dst] = T::lit(d[k]);
                    }
                }
            }
        }
    }
    Ok(Tensor::from_op(
        values,
        vec![b, out_c, h, w],
        "basis_channels",
        vec![x.clone()],
        Box::new(move |g, _| {
            let mut gx = vec![T::zero(); b * c * hw];
            for bi in 0..b {
                for ch in 0..c {
                    let dst = (bi * c + ch) * hw;
                    for k in 0..f {
                        let src = (bi * out_c + out_channel(ch, k)) * hw;
                        for p in 0..hw {
                            gx[dst + p] += g[src + p] * derivs[src + p];
                        }
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::BasisSpec;
    use crate::gradcheck::{check_gradients, random_projection, GradCheckOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_is_group_feature_channel() {
        let basis = BasisSpec::chebyshev(2)
            .with_normalization(crate::basis::Normalization::None)
            .build()
            .unwrap();
        // 4 channels, 2 groups, one pixel each
        let x = Tensor::<f64>::new(vec![0.1, 0.2, 0.3, 0.4], &[1, 4, 1, 1]).unwrap();
        let y = basis_channels(&x, basis.as_ref(), 2).unwrap();
        let t2 = |u: f64| 2.0 * u * u - 1.0;
        let expect = [1.0, 1.0, 0.1, 0.2, t2(0.1), t2(0.2), 1.0, 1.0, 0.3, 0.4, t2(0.3), t2(0.4)];
        for (a, b) in y.data().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_bad_groups() {
        let basis = BasisSpec::gram(2).build().unwrap();
        let x = Tensor::<f64>::zeros(&[1, 3, 2, 2]);
        assert!(basis_channels(&x, basis.as_ref(), 2).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in [BasisSpec::gram(4), BasisSpec::chebyshev(3), BasisSpec::rbf(5)] {
            let basis = spec.build().unwrap();
            let x = Tensor::<f64>::randn(&[2, 4, 3, 3], 1.0, &mut rng);
            let r = check_gradients(
                "basis_channels",
                &[x],
                |t| random_projection(&basis_channels(&t[0], basis.as_ref(), 2)?, 11),
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passes(1e-6), "{}: {r:?}", spec.kind);
            let x = Tensor::<f64>::randn(&[3, 2], 1.0, &mut rng);
            let r = check_gradients(
                "evaluate_basis",
                &[x],
                |t| random_projection(&evaluate_basis(&t[0], basis.as_ref())?, 12),
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(r.passes(1e-6), "{}: {r:?}", spec.kind);
        }
    }

    #[test]
    fn polynomial_without_normalization_checks_domain() {
        let basis = BasisSpec::gram(3)
            .with_normalization(crate::basis::Normalization::None)
            .build()
            .unwrap();
        let x = Tensor::<f64>::new(vec![0.5, 1.5], &[2]).unwrap();
        assert!(matches!(
            evaluate_basis(&x, basis.as_ref()),
            Err(Error::Domain(_))
        ));
    }
}
