use super::linalg::{gemm, View, ViewMut};
use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

/// Per-channel statistics of one training-mode batch-norm call.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    /// Values per channel.
    pub count: usize,
}

fn dims4<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => shape_err(op, format!("expected [B, C, H, W], got {:?}", x.shape())),
    }
}

impl<T: Real> Tensor<T> {
    /// Max pooling without padding; ties route the gradient to the first max.
    pub fn maxpool2d(&self, kernel: usize, stride: usize) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4("maxpool2d", self)?;
        if kernel == 0 || stride == 0 || kernel > h || kernel > w {
            return shape_err("maxpool2d", format!("kernel {kernel} stride {stride} on {h}x{w}"));
        }
        let (ho, wo) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let x = self.data();
        let mut out = vec![T::zero(); b * c * ho * wo];
        let mut arg = vec![0usize; out.len()];
        for p in 0..b * c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut at = 0;
                    for a in 0..kernel {
                        for bb in 0..kernel {
                            let idx = (p * h + i * stride + a) * w + j * stride + bb;
                            if x[idx] > best {
                                best = x[idx];
                                at = idx;
                            }
                        }
                    }
                    let o = (p * ho + i) * wo + j;
                    out[o] = best;
                    arg[o] = at;
                }
            }
        }
        let n = self.numel();
        Ok(Tensor::from_op(
            out,
            vec![b, c, ho, wo],
            "maxpool2d",
            vec![self.clone()],
            Box::new(move |g, _| {
                let mut d = vec![T::zero(); n];
                for (gi, &a) in g.iter().zip(&arg) {
                    d[a] += *gi;
                }
                vec![Some(d)]
            }),
        ))
    }

    /// Spatial mean of a `[B, C, H, W]` tensor, shape `[B, C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4("global_avg_pool", self)?;
        self.reshape(&[b, c, h * w])?.mean_axis(2, false)
    }

    /// Training-mode batch normalization over batch and spatial axes.
    ///
    /// Returns the normalized output together with the batch statistics so
    /// the caller can update running averages.
    pub fn batch_norm_train(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        eps: f64,
    ) -> Result<(Tensor<T>, BatchStats<T>)> {
        let (b, c, h, w) = dims4("batch_norm", self)?;
        if gamma.shape() != [c] || beta.shape() != [c] {
            return shape_err("batch_norm", format!("affine parameters must have shape [{c}]"));
        }
        if b < 2 {
            return Err(Error::Contract(
                "training-mode batch norm needs a batch of at least 2".into(),
            ));
        }
        let hw = h * w;
        let count = b * hw;
        let x = self.data();
        let nf = T::lit(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for bi in 0..b {
                s += x[(bi * c + ch) * hw..(bi * c + ch + 1) * hw].iter().copied().sum::<T>();
            }
            let m = s / nf;
            let mut v = T::zero();
            for bi in 0..b {
                for &xv in &x[(bi * c + ch) * hw..(bi * c + ch + 1) * hw] {
                    v += (xv - m) * (xv - m);
                }
            }
            mean[ch] = m;
            var[ch] = v / nf;
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + T::lit(eps)).sqrt()).collect();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let (gm, bt) = (gamma.data(), beta.data());
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                for ((xh, o), &xv) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&x[r]) {
                    *xh = (xv - mean[ch]) * inv_std[ch];
                    *o = gm[ch] * *xh + bt[ch];
                }
            }
        }
        let g_data = gamma.clone();
        let stats = BatchStats { mean, var, count };
        let y = Tensor::from_op(
            out,
            self.shape().to_vec(),
            "batch_norm",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, needs| {
                let gm = g_data.data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                        for (&gv, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                            dgamma[ch] += gv * xh;
                            dbeta[ch] += gv;
                        }
                    }
                }
                let dx = needs[0].then(|| {
                    // dx = γ·inv_std/N · (N·g − Σg − x̂·Σ(g·x̂))
                    let mut dx = vec![T::zero(); b * c * hw];
                    for bi in 0..b {
                        for ch in 0..c {
                            let k = gm[ch] * inv_std[ch] / nf;
                            let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                            for ((d, &gv), &xh) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                                *d = k * (nf * gv - dbeta[ch] - xh * dgamma[ch]);
                            }
                        }
                    }
                    dx
                });
                vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
            }),
        );
        Ok((y, stats))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4("batch_norm", self)?;
        if gamma.shape() != [c] || beta.shape() != [c] || running_mean.len() != c || running_var.len() != c {
            return shape_err("batch_norm", format!("statistics must have {c} channels"));
        }
        let hw = h * w;
        let scale: Vec<T> = running_var.iter().map(|&v| T::one() / (v + T::lit(eps)).sqrt()).collect();
        let x = self.data();
        let (gm, bt) = (gamma.data(), beta.data());
        let mut out = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                for ((o, xh), &xv) in out[r.clone()].iter_mut().zip(&mut xhat[r.clone()]).zip(&x[r]) {
                    *xh = (xv - running_mean[ch]) * scale[ch];
                    *o = gm[ch] * *xh + bt[ch];
                }
            }
        }
        let g_data = gamma.clone();
        Ok(Tensor::from_op(
            out,
            self.shape().to_vec(),
            "batch_norm_eval",
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, needs| {
                let gm = g_data.data();
                let mut dx = vec![T::zero(); g.len()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for bi in 0..b {
                    for ch in 0..c {
                        let r = (bi * c + ch) * hw..(bi * c + ch + 1) * hw;
                        for ((d, &gv), &xh) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                            *d = gv * gm[ch] * scale[ch];
                            dgamma[ch] += gv * xh;
                            dbeta[ch] += gv;
                        }
                    }
                }
                vec![needs[0].then_some(dx), needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
            }),
        ))
    }

    /// Attention probabilities `softmax_j(scale · Σ_c q[b,c,i]·k[b,c,j])` for
    /// `[B, D, P]` queries and keys, shape `[B, P, P]`.
    ///
    /// The logits are softmaxed in place, so the forward pass allocates a
    /// single `P×P` map per batch element.
    pub fn attention_probs(&self, keys: &Tensor<T>, scale: f64) -> Result<Tensor<T>> {
        if self.ndim() != 3 || self.shape() != keys.shape() {
            return shape_err(
                "attention_probs",
                format!("queries {:?} and keys {:?} must both be [B, D, P]", self.shape(), keys.shape()),
            );
        }
        let (b, d, p) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let s = T::lit(scale);
        let mut probs = vec![T::zero(); b * p * p];
        for bi in 0..b {
            gemm(
                s,
                View::row_major(self.data(), bi * d * p, d, p).t(),
                View::row_major(keys.data(), bi * d * p, d, p),
                T::zero(),
                ViewMut {
                    data: &mut probs,
                    offset: bi * p * p,
                    rs: p,
                    cs: 1,
                },
            );
        }
        for row in probs.chunks_mut(p) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let saved = probs.clone();
        let (q, k) = (self.clone(), keys.clone());
        Ok(Tensor::from_op(
            probs,
            vec![b, p, p],
            "attention_probs",
            vec![self.clone(), keys.clone()],
            Box::new(move |g, needs| {
                // dlogits = S ⊙ (g − rowsum(g ⊙ S)), then scaled.
                let mut dl = vec![T::zero(); g.len()];
                for ((drow, grow), srow) in dl.chunks_mut(p).zip(g.chunks(p)).zip(saved.chunks(p)) {
                    let dot: T = grow.iter().zip(srow).map(|(&a, &b)| a * b).sum();
                    for ((d, &gv), &sv) in drow.iter_mut().zip(grow).zip(srow) {
                        *d = sv * (gv - dot);
                    }
                }
                let mut dq = needs[0].then(|| vec![T::zero(); b * d * p]);
                let mut dk = needs[1].then(|| vec![T::zero(); b * d * p]);
                for bi in 0..b {
                    let dlv = View::row_major(&dl, bi * p * p, p, p);
                    if let Some(dq) = dq.as_mut() {
                        // dQ[D,P] = scale · K[D,P] · dLᵀ[P,P]
                        gemm(
                            s,
                            View::row_major(k.data(), bi * d * p, d, p),
                            dlv.t(),
                            T::zero(),
                            ViewMut { data: dq, offset: bi * d * p, rs: p, cs: 1 },
                        );
                    }
                    if let Some(dk) = dk.as_mut() {
                        // dK[D,P] = scale · Q[D,P] · dL[P,P]
                        gemm(
                            s,
                            View::row_major(q.data(), bi * d * p, d, p),
                            dlv,
                            T::zero(),
                            ViewMut { data: dk, offset: bi * d * p, rs: p, cs: 1 },
                        );
                    }
                }
                vec![dq, dk]
            }),
        ))
    }
}
