use super::{numel, strides, Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Numpy-style broadcast of two shapes (right-aligned).
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat output index, the flat index into a broadcast operand.
pub(crate) fn broadcast_index_map(src: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let src_strides = strides(src);
    let mut eff = vec![0usize; n];
    for i in 0..src.len() {
        let oi = i + n - src.len();
        eff[oi] = if src[i] == 1 { 0 } else { src_strides[i] };
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    let mut flat = 0usize;
    for _ in 0..total {
        map.push(flat);
        for ax in (0..n).rev() {
            idx[ax] += 1;
            flat += eff[ax];
            if idx[ax] < out[ax] {
                break;
            }
            flat -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    map
}

fn reduce_to<T: Real>(src_len: usize, map: Option<&[usize]>, g: &[T]) -> Vec<T> {
    match map {
        None => g.to_vec(),
        Some(m) => {
            let mut out = vec![T::zero(); src_len];
            for (gi, &si) in g.iter().zip(m) {
                out[si] += *gi;
            }
            out
        }
    }
}

impl<T: Real> Tensor<T> {
    fn binary(
        &self,
        other: &Tensor<T>,
        name: &'static str,
        f: fn(T, T) -> T,
        // (d out/d a, d out/d b) at (a, b)
        df: fn(T, T) -> (T, T),
    ) -> Result<Tensor<T>> {
        let shape = broadcast_shape(self.shape(), other.shape()).ok_or_else(|| Error::Shape {
            op: name,
            msg: format!("cannot broadcast {:?} with {:?}", self.shape(), other.shape()),
        })?;
        let map_a = (self.shape() != shape.as_slice()).then(|| broadcast_index_map(self.shape(), &shape));
        let map_b = (other.shape() != shape.as_slice()).then(|| broadcast_index_map(other.shape(), &shape));
        let (ad, bd) = (self.data(), other.data());
        let data: Vec<T> = match (&map_a, &map_b) {
            (None, None) => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            _ => (0..numel(&shape))
                .map(|i| {
                    let x = ad[map_a.as_ref().map_or(i, |m| m[i])];
                    let y = bd[map_b.as_ref().map_or(i, |m| m[i])];
                    f(x, y)
                })
                .collect(),
        };
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            shape,
            name,
            vec![self.clone(), other.clone()],
            Box::new(move |g, needs| {
                let (ad, bd) = (a.data(), b.data());
                let mut ga = vec![T::zero(); g.len()];
                let mut gb = vec![T::zero(); g.len()];
                for i in 0..g.len() {
                    let x = ad[map_a.as_ref().map_or(i, |m| m[i])];
                    let y = bd[map_b.as_ref().map_or(i, |m| m[i])];
                    let (dx, dy) = df(x, y);
                    ga[i] = g[i] * dx;
                    gb[i] = g[i] * dy;
                }
                vec![
                    needs[0].then(|| reduce_to(a.numel(), map_a.as_deref(), &ga)),
                    needs[1].then(|| reduce_to(b.numel(), map_b.as_deref(), &gb)),
                ]
            }),
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "add", |x, y| x + y, |_, _| (T::one(), T::one()))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "sub", |x, y| x - y, |_, _| (T::one(), -T::one()))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, "mul", |x, y| x * y, |x, y| (y, x))
    }

    /// Elementwise quotient. Division by an exact zero is a domain error.
    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if other.data().iter().any(|v| *v == T::zero()) {
            return Err(Error::Domain("division by zero".into()));
        }
        self.binary(other, "div", |x, y| x / y, |x, y| (T::one() / y, -x / (y * y)))
    }

    /// Broadcasts to `shape` (gradient sums over the expanded axes).
    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor<T>> {
        match broadcast_shape(self.shape(), shape) {
            Some(s) if s == shape => {}
            _ => {
                return shape_err(
                    "broadcast_to",
                    format!("{:?} does not broadcast to {:?}", self.shape(), shape),
                )
            }
        }
        if self.shape() == shape {
            return Ok(self.clone());
        }
        let map = broadcast_index_map(self.shape(), shape);
        let src = self.data();
        let data = map.iter().map(|&i| src[i]).collect();
        let n = self.numel();
        Ok(Tensor::from_op(
            data,
            shape.to_vec(),
            "broadcast_to",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(reduce_to(n, Some(&map), g))]),
        ))
    }

    /// Pointwise map with derivative expressed through input `x` and output `y`.
    fn unary(&self, name: &'static str, f: impl Fn(T) -> T, df: fn(T, T) -> T) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        let y = data.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            name,
            vec![self.clone()],
            Box::new(move |g, _| {
                let xs = x.data();
                vec![Some(
                    g.iter()
                        .zip(xs)
                        .zip(&y)
                        .map(|((&g, &x), &y)| g * df(x, y))
                        .collect(),
                )]
            }),
        )
    }

    pub fn neg(&self) -> Tensor<T> {
        self.scale(-1.0)
    }

    pub fn scale(&self, s: f64) -> Tensor<T> {
        let s = T::lit(s);
        let data = self.data().iter().map(|&x| x * s).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            "scale",
            vec![self.clone()],
            Box::new(move |g, _| vec![Some(g.iter().map(|&v| v * s).collect())]),
        )
    }

    pub fn add_scalar(&self, s: f64) -> Tensor<T> {
        let s = T::lit(s);
        let data = self.data().iter().map(|&x| x + s).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            "add_scalar",
            vec![self.clone()],
            Box::new(|g, _| vec![Some(g.to_vec())]),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary("exp", |x| x.exp(), |_, y| y)
    }

    /// Natural log; non-positive inputs are a domain error.
    pub fn ln(&self) -> Result<Tensor<T>> {
        if self.data().iter().any(|&v| v <= T::zero()) {
            return Err(Error::Domain("ln of a non-positive value".into()));
        }
        Ok(self.unary("ln", |x| x.ln(), |x, _| T::one() / x))
    }

    /// Square root; negative inputs are a domain error. The gradient at an
    /// exact zero is infinite, so callers keep the argument positive.
    pub fn sqrt(&self) -> Result<Tensor<T>> {
        if self.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Domain("sqrt of a negative value".into()));
        }
        Ok(self.unary("sqrt", |x| x.sqrt(), |_, y| T::lit(0.5) / y))
    }

    /// `x^e` for non-negative `x`. At `x = 0` the gradient is taken as 0
    /// for `e > 1`, 1 for `e = 1`, and rejected for `e < 1`.
    pub fn powf(&self, e: f64) -> Result<Tensor<T>> {
        if self.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Domain("powf of a negative value".into()));
        }
        if e < 1.0 && e != 0.0 && self.data().iter().any(|&v| v == T::zero()) {
            return Err(Error::Domain(format!("powf({e}) is not differentiable at 0")));
        }
        let et = T::lit(e);
        let data = self.data().iter().map(|&x| x.powf(et)).collect();
        let x = self.clone();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            "powf",
            vec![self.clone()],
            Box::new(move |g, _| {
                let d = g
                    .iter()
                    .zip(x.data())
                    .map(|(&g, &x)| {
                        if e == 0.0 {
                            T::zero()
                        } else if x == T::zero() {
                            if e == 1.0 { g } else { T::zero() }
                        } else {
                            g * et * x.powf(et - T::one())
                        }
                    })
                    .collect();
                vec![Some(d)]
            }),
        ))
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary("square", |x| x * x, |x, _| x + x)
    }

    /// Absolute value, subgradient 0 at 0.
    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            "abs",
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn tanh(&self) -> Tensor<T> {
        self.unary("tanh", |x| x.tanh(), |_, y| T::one() - y * y)
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary("sigmoid", sigmoid, |_, y| y * (T::one() - y))
    }

    /// `x · sigmoid(x)`.
    pub fn silu(&self) -> Tensor<T> {
        self.unary("silu", silu, silu_grad)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            "relu",
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        self.unary("gelu", gelu, gelu_grad)
    }

    /// Clamp to `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor<T> {
        let (l, h) = (T::lit(lo), T::lit(hi));
        let data: Vec<T> = self.data().iter().map(|&x| x.max(l).min(h)).collect();
        let x = self.clone();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            "clamp",
            vec![self.clone()],
            Box::new(move |g, _| {
                vec![Some(
                    g.iter()
                        .zip(x.data())
                        .map(|(&g, &x)| if x > l && x < h { g } else { T::zero() })
                        .collect(),
                )]
            }),
        )
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn silu<T: Real>(x: T) -> T {
    x * sigmoid(x)
}

pub(crate) fn silu_grad<T: Real>(x: T, _y: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu<T: Real>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

fn gelu_grad<T: Real>(x: T, _y: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_K) * x * x * x);
    let t = inner.tanh();
    let dinner = T::lit(GELU_C) * (T::one() + T::lit(3.0 * GELU_K) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}
