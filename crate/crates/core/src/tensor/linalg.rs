use super::{Real, Tensor};
use crate::error::{shape_err, Result};

/// Strided read-only matrix view into a slice.
#[derive(Clone, Copy)]
pub(crate) struct View<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> View<'a, T> {
    pub fn row_major(data: &'a [T], offset: usize, rows: usize, cols: usize) -> Self {
        View {
            data,
            offset,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn last_index(&self) -> usize {
        self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
    }
}

/// Strided writable matrix view.
pub(crate) struct ViewMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

/// `c = alpha·a·b + beta·c`, bounds-checked.
pub(crate) fn gemm<T: Real>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: ViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.offset + (m - 1) * c.rs + (n - 1) * c.cs < c.data.len(), "gemm c bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let v = &mut c.data[c.offset + i * c.rs + j * c.cs];
                *v = if beta == T::zero() { T::zero() } else { *v * beta };
            }
        }
        return;
    }
    assert!(a.last_index() < a.data.len(), "gemm a bounds");
    assert!(b.last_index() < b.data.len(), "gemm b bounds");
    // SAFETY: all three index ranges were checked above, strides are
    // non-negative, and `c` is a unique borrow so it cannot alias `a`/`b`.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

fn op_view<T>(data: &[T], bi: usize, r: usize, c: usize, t: bool) -> View<'_, T> {
    let v = View::row_major(data, bi * r * c, r, c);
    if t {
        v.t()
    } else {
        v
    }
}

impl<T: Real> Tensor<T> {
    /// 2-D matrix product with optional transposes of either operand.
    pub fn matmul_t(&self, other: &Tensor<T>, trans_a: bool, trans_b: bool) -> Result<Tensor<T>> {
        if self.ndim() != 2 || other.ndim() != 2 {
            return shape_err("matmul", "operands must be 2-D");
        }
        let a3 = self.reshape(&[1, self.shape()[0], self.shape()[1]])?;
        let b3 = other.reshape(&[1, other.shape()[0], other.shape()[1]])?;
        let out = a3.bmm(&b3, trans_a, trans_b)?;
        let s = out.shape().to_vec();
        out.reshape(&[s[1], s[2]])
    }

    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.matmul_t(other, false, false)
    }

    /// Batched product `op(a)·op(b)` over `[B, M, K]` operands.
    pub fn bmm(&self, other: &Tensor<T>, trans_a: bool, trans_b: bool) -> Result<Tensor<T>> {
        if self.ndim() != 3 || other.ndim() != 3 {
            return shape_err("bmm", "operands must be 3-D");
        }
        let (ab, ar, ac) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (bb, br, bc) = (other.shape()[0], other.shape()[1], other.shape()[2]);
        if ab != bb {
            return shape_err("bmm", format!("batch {ab} vs {bb}"));
        }
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return shape_err(
                "bmm",
                format!("inner dimensions differ: {:?} x {:?}", self.shape(), other.shape()),
            );
        }
        let mut out = vec![T::zero(); ab * m * n];
        for bi in 0..ab {
            gemm(
                T::one(),
                op_view(self.data(), bi, ar, ac, trans_a),
                op_view(other.data(), bi, br, bc, trans_b),
                T::zero(),
                ViewMut {
                    data: &mut out,
                    offset: bi * m * n,
                    rs: n,
                    cs: 1,
                },
            );
        }
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            out,
            vec![ab, m, n],
            "bmm",
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let mut ga = None;
                let mut gb = None;
                if needs[0] {
                    // d op(a) = g · op(b)^T, written through op's transpose.
                    let mut d = vec![T::zero(); a.numel()];
                    for bi in 0..ab {
                        let (rs, cs) = if trans_a { (1, ac) } else { (ac, 1) };
                        gemm(
                            T::one(),
                            View::row_major(g, bi * m * n, m, n),
                            op_view(b.data(), bi, br, bc, trans_b).t(),
                            T::zero(),
                            ViewMut {
                                data: &mut d,
                                offset: bi * ar * ac,
                                rs,
                                cs,
                            },
                        );
                    }
                    ga = Some(d);
                }
                if needs[1] {
                    // d op(b) = op(a)^T · g
                    let mut d = vec![T::zero(); b.numel()];
                    for bi in 0..ab {
                        let (rs, cs) = if trans_b { (1, bc) } else { (bc, 1) };
                        gemm(
                            T::one(),
                            op_view(a.data(), bi, ar, ac, trans_a).t(),
                            View::row_major(g, bi * m * n, m, n),
                            T::zero(),
                            ViewMut {
                                data: &mut d,
                                offset: bi * br * bc,
                                rs,
                                cs,
                            },
                        );
                    }
                    gb = Some(d);
                }
                vec![ga, gb]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect();
        let ta = Tensor::new(a.clone(), &[2, 3]).unwrap();
        let tb = Tensor::new(b.clone(), &[3, 4]).unwrap();
        let c = ta.matmul(&tb).unwrap();
        let expect = naive(&a, &b, 2, 3, 4);
        for (x, y) in c.data().iter().zip(&expect) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn transposed_operands() {
        let a = Tensor::<f64>::new((0..6).map(|v| v as f64).collect(), &[3, 2]).unwrap();
        let b = Tensor::<f64>::new((0..8).map(|v| v as f64 - 3.0).collect(), &[4, 2]).unwrap();
        // a^T (2x3) · ? needs 3xN; use a^T · a and a · b^T.
        let ata = a.matmul_t(&a, true, false).unwrap();
        assert_eq!(ata.shape(), &[2, 2]);
        assert_eq!(ata.data(), &[20.0, 26.0, 26.0, 35.0]);
        let abt = a.matmul_t(&b, false, true).unwrap();
        assert_eq!(abt.shape(), &[3, 4]);
        assert_eq!(abt.data()[0], 0.0 * -3.0 + 1.0 * -2.0);
    }

    #[test]
    fn inner_mismatch_errors() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        assert!(a.matmul(&b).is_err());
    }
}
