use super::reduce::axis_split;
use super::{numel, strides, Real, Tensor};
use crate::error::{shape_err, Result};

impl<T: Real> Tensor<T> {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return shape_err(
                "reshape",
                format!("cannot view {:?} as {:?}", self.shape(), shape),
            );
        }
        Ok(Tensor::from_op(
            self.data().to_vec(),
            shape.to_vec(),
            "reshape",
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        ))
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let n = self.ndim();
        let mut seen = vec![false; n];
        if axes.len() != n || axes.iter().any(|&a| a >= n || std::mem::replace(&mut seen[a], true)) {
            return shape_err("permute", format!("{axes:?} is not a permutation of {n} axes"));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let map = permute_map(&in_shape, axes);
        let x = self.data();
        let data = map.iter().map(|&i| x[i]).collect();
        Ok(Tensor::from_op(
            data,
            out_shape,
            "permute",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); g.len()];
                for (gi, &src) in g.iter().zip(&map) {
                    d[src] = *gi;
                }
                vec![Some(d)]
            }),
        ))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor<T>> {
        let mut axes: Vec<usize> = (0..self.ndim()).collect();
        if a >= axes.len() || b >= axes.len() {
            return shape_err("transpose", format!("axes {a},{b} out of range"));
        }
        axes.swap(a, b);
        self.permute(&axes)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let Some(first) = parts.first() else {
            return shape_err("concat", "no tensors to concatenate");
        };
        if axis >= first.ndim() {
            return shape_err("concat", format!("axis {axis} out of range"));
        }
        for p in parts {
            let ok = p.ndim() == first.ndim()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return shape_err(
                    "concat",
                    format!("{:?} incompatible with {:?} on axis {axis}", p.shape(), first.shape()),
                );
            }
        }
        if parts.len() == 1 {
            return Ok(first.clone());
        }
        let (outer, _, inner) = axis_split(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                out.extend_from_slice(&p.data()[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            out,
            shape,
            "concat",
            parts.to_vec(),
            Box::new(move |g, needs| {
                let mut offset = 0;
                let mut grads = Vec::with_capacity(lens.len());
                for (&l, &need) in lens.iter().zip(needs) {
                    if need {
                        let mut d = Vec::with_capacity(outer * l * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            d.extend_from_slice(&g[start..start + l * inner]);
                        }
                        grads.push(Some(d));
                    } else {
                        grads.push(None);
                    }
                    offset += l;
                }
                grads
            }),
        ))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        if axis >= self.ndim() || len == 0 || start + len > self.shape()[axis] {
            return shape_err(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {:?}", start + len, self.shape()),
            );
        }
        let (outer, full, inner) = axis_split(self.shape(), axis);
        let x = self.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            out.extend_from_slice(&x[s..s + len * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = len;
        Ok(Tensor::from_op(
            out,
            shape,
            "narrow",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let s = (o * full + start) * inner;
                    d[s..s + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Zero padding of the last two axes of a 4-D tensor.
    pub fn pad2d(&self, pad: usize) -> Result<Tensor<T>> {
        if self.ndim() != 4 {
            return shape_err("pad2d", format!("expected 4-D input, got {:?}", self.shape()));
        }
        if pad == 0 {
            return Ok(self.clone());
        }
        let (bc, h, w) = (self.shape()[0] * self.shape()[1], self.shape()[2], self.shape()[3]);
        let (ho, wo) = (h + 2 * pad, w + 2 * pad);
        let x = self.data();
        let mut out = vec![T::zero(); bc * ho * wo];
        for p in 0..bc {
            for i in 0..h {
                let src = &x[(p * h + i) * w..(p * h + i + 1) * w];
                let dst = (p * ho + i + pad) * wo + pad;
                out[dst..dst + w].copy_from_slice(src);
            }
        }
        let shape = vec![self.shape()[0], self.shape()[1], ho, wo];
        Ok(Tensor::from_op(
            out,
            shape,
            "pad2d",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); bc * h * w];
                for p in 0..bc {
                    for i in 0..h {
                        let src = (p * ho + i + pad) * wo + pad;
                        d[(p * h + i) * w..(p * h + i + 1) * w].copy_from_slice(&g[src..src + w]);
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Nearest-neighbour upsampling of the last two axes by an integer factor.
    pub fn upsample_nearest2d(&self, factor: usize) -> Result<Tensor<T>> {
        if self.ndim() != 4 || factor == 0 {
            return shape_err("upsample_nearest2d", format!("4-D input and factor ≥ 1 required, got {:?}", self.shape()));
        }
        let (bc, h, w) = (self.shape()[0] * self.shape()[1], self.shape()[2], self.shape()[3]);
        let (ho, wo) = (h * factor, w * factor);
        let x = self.data();
        let mut out = vec![T::zero(); bc * ho * wo];
        for p in 0..bc {
            for i in 0..ho {
                for j in 0..wo {
                    out[(p * ho + i) * wo + j] = x[(p * h + i / factor) * w + j / factor];
                }
            }
        }
        let shape = vec![self.shape()[0], self.shape()[1], ho, wo];
        Ok(Tensor::from_op(
            out,
            shape,
            "upsample_nearest2d",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); bc * h * w];
                for p in 0..bc {
                    for i in 0..ho {
                        for j in 0..wo {
                            d[(p * h + i / factor) * w + j / factor] += g[(p * ho + i) * wo + j];
                        }
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Rows of axis 0 picked by `indices` (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let rows = self.shape()[0];
        if indices.is_empty() || indices.iter().any(|&i| i >= rows) {
            return shape_err("select_rows", format!("indices out of range for {rows} rows"));
        }
        let row = self.numel() / rows;
        let x = self.data();
        let mut out = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            out.extend_from_slice(&x[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = indices.len();
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            out,
            shape,
            "select_rows",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); rows * row];
                for (k, &i) in idx.iter().enumerate() {
                    for (a, &b) in d[i * row..(i + 1) * row].iter_mut().zip(&g[k * row..(k + 1) * row]) {
                        *a += b;
                    }
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Inverse of [`Tensor::select_rows`]: row `k` is added into output row
    /// `indices[k]` of a zero tensor with `rows` rows.
    pub fn scatter_rows(&self, indices: &[usize], rows: usize) -> Result<Tensor<T>> {
        if indices.len() != self.shape()[0] || indices.iter().any(|&i| i >= rows) {
            return shape_err("scatter_rows", "index list does not match source rows");
        }
        let row = self.numel() / self.shape()[0];
        let x = self.data();
        let mut out = vec![T::zero(); rows * row];
        for (k, &i) in indices.iter().enumerate() {
            for (a, &b) in out[i * row..(i + 1) * row].iter_mut().zip(&x[k * row..(k + 1) * row]) {
                *a += b;
            }
        }
        let mut shape = self.shape().to_vec();
        shape[0] = rows;
        let idx = indices.to_vec();
        Ok(Tensor::from_op(
            out,
            shape,
            "scatter_rows",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = Vec::with_capacity(idx.len() * row);
                for &i in &idx {
                    d.extend_from_slice(&g[i * row..(i + 1) * row]);
                }
                vec![Some(d)]
            }),
        ))
    }
}

/// Flat source index for every flat output index of a permutation.
fn permute_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let eff: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = out_shape.len();
    let total = numel(&out_shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut flat = 0usize;
    for _ in 0..total {
        map.push(flat);
        for ax in (0..n).rev() {
            idx[ax] += 1;
            flat += eff[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            flat -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: &[usize]) -> Tensor<f64> {
        Tensor::new((0..numel(shape)).map(|v| v as f64).collect(), shape).unwrap()
    }

    #[test]
    fn permute_transposes_matrix() {
        let x = iota(&[2, 3]);
        let y = x.permute(&[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        assert!(x.permute(&[0, 0]).is_err());
    }

    #[test]
    fn concat_then_narrow_roundtrip() {
        let a = iota(&[2, 2, 3]);
        let b = iota(&[2, 1, 3]).add_scalar(100.0);
        let c = Tensor::concat(&[a.clone(), b.clone()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3, 3]);
        assert!(c.narrow(1, 0, 2).unwrap().bit_eq(&a));
        assert!(c.narrow(1, 2, 1).unwrap().bit_eq(&b));
        assert!(c.narrow(1, 2, 2).is_err());
    }

    #[test]
    fn pad_and_upsample_shapes() {
        let x = iota(&[1, 2, 3, 3]);
        let p = x.pad2d(2).unwrap();
        assert_eq!(p.shape(), &[1, 2, 7, 7]);
        assert_eq!(p.data()[2 * 7 + 2], 0.0 + x.data()[0]);
        assert_eq!(p.data()[0], 0.0);
        let u = x.upsample_nearest2d(2).unwrap();
        assert_eq!(u.shape(), &[1, 2, 6, 6]);
        assert_eq!(u.data()[7], x.data()[0]);
    }

    #[test]
    fn select_scatter_inverse() {
        let x = iota(&[4, 3]);
        let s = x.select_rows(&[2, 0]).unwrap();
        assert_eq!(s.data(), &[6.0, 7.0, 8.0, 0.0, 1.0, 2.0]);
        let back = s.scatter_rows(&[2, 0], 4).unwrap();
        assert_eq!(&back.data()[6..9], &[6.0, 7.0, 8.0]);
        assert_eq!(&back.data()[3..6], &[0.0; 3]);
    }
}
