use super::{Real, Tensor};
use crate::error::{shape_err, Result};

/// (outer, extent, inner) split of a shape around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return shape_err(op, format!("axis {axis} out of range for {shape:?}"));
    }
    Ok(())
}

fn reduced_shape(shape: &[usize], axis: usize, keepdim: bool) -> Vec<usize> {
    let mut s = shape.to_vec();
    if keepdim || s.len() == 1 {
        s[axis] = 1;
    } else {
        s.remove(axis);
    }
    s
}

impl<T: Real> Tensor<T> {
    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![total],
            vec![1],
            "sum",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    pub fn sum_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        check_axis("sum_axis", self.shape(), axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            reduced_shape(self.shape(), axis, keepdim),
            "sum_axis",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        d[(o * len + l) * inner..(o * len + l + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        check_axis("mean_axis", self.shape(), axis)?;
        let len = self.shape()[axis];
        Ok(self.sum_axis(axis, keepdim)?.scale(1.0 / len as f64))
    }

    /// Population (biased) variance along `axis`.
    pub fn variance_axis(&self, axis: usize, keepdim: bool) -> Result<Tensor<T>> {
        let mean = self.mean_axis(axis, true)?;
        let centered = self.sub(&mean)?;
        centered.square().mean_axis(axis, keepdim)
    }

    /// Softmax along `axis` (max-shifted).
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("softmax", self.shape(), axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| x[at(l)]).fold(T::neg_infinity(), T::max);
                let mut z = T::zero();
                for l in 0..len {
                    let e = (x[at(l)] - m).exp();
                    y[at(l)] = e;
                    z += e;
                }
                for l in 0..len {
                    y[at(l)] /= z;
                }
            }
        }
        let ys = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            "softmax",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: T = (0..len).map(|l| g[at(l)] * ys[at(l)]).sum();
                        for l in 0..len {
                            d[at(l)] = ys[at(l)] * (g[at(l)] - dot);
                        }
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("log_softmax", self.shape(), axis)?;
        let (outer, len, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let m = (0..len).map(|l| x[at(l)]).fold(T::neg_infinity(), T::max);
                let lse = m + (0..len).map(|l| (x[at(l)] - m).exp()).sum::<T>().ln();
                for l in 0..len {
                    y[at(l)] = x[at(l)] - lse;
                }
            }
        }
        let ys = y.clone();
        Ok(Tensor::from_op(
            y,
            self.shape().to_vec(),
            "log_softmax",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let gs: T = (0..len).map(|l| g[at(l)]).sum();
                        for l in 0..len {
                            d[at(l)] = g[at(l)] - ys[at(l)].exp() * gs;
                        }
                    }
                }
                vec![Some(d)]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_sums_to_one() {
        let x = Tensor::<f64>::new(vec![0.3, -1.2, 2.5, 0.0], &[4]).unwrap();
        let y = x.softmax(0).unwrap();
        let s: f64 = y.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_out_of_range() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        assert!(x.softmax(2).is_err());
        assert!(x.sum_axis(5, false).is_err());
    }

    #[test]
    fn variance_matches_hand_value() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 4]).unwrap();
        let v = x.variance_axis(1, false).unwrap();
        assert!((v.data()[0] - 1.25).abs() < 1e-15);
    }

    #[test]
    fn sum_axis_shapes() {
        let x = Tensor::<f64>::ones(&[2, 3, 4]);
        assert_eq!(x.sum_axis(1, false).unwrap().shape(), &[2, 4]);
        assert_eq!(x.sum_axis(1, true).unwrap().shape(), &[2, 1, 4]);
        assert_eq!(x.sum_axis(2, false).unwrap().data(), &[4.0; 6]);
    }
}
