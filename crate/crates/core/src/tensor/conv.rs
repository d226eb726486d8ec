//! 2-D convolution via im2col + GEMM.
//!
//! Column matrices are laid out `[C_g·kh·kw, B·H'·W']` so one GEMM per group
//! covers the whole batch. Accumulation order is channel-major, then kernel
//! row, then kernel column, for every call.

use serde::{Deserialize, Serialize};

use super::linalg::{gemm, View, ViewMut};
use super::{Real, Tensor};
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dParams {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Conv2dParams {
            stride: 1,
            dilation: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dParams {
    /// Output extent along one spatial axis, `None` if the dilated kernel
    /// does not fit in the padded input.
    pub fn out_extent(&self, n: usize, k: usize) -> Option<usize> {
        let span = self.dilation * (k - 1) + 1;
        let padded = n + 2 * self.padding;
        (padded >= span && self.stride > 0).then(|| (padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    dilation: usize,
    padding: usize,
}

impl Geometry {
    fn pixels(&self) -> usize {
        self.ho * self.wo
    }
}

/// Fill `cols` (`[cg·kh·kw, B·P]`) with patches of channels `c0..c0+cg`.
fn im2col<T: Real>(x: &[T], g: &Geometry, c0: usize, cg: usize, cols: &mut [T]) {
    let p = g.pixels();
    let n = g.batch * p;
    for ci in 0..cg {
        for a in 0..g.kh {
            for b in 0..g.kw {
                let r = (ci * g.kh + a) * g.kw + b;
                let row = &mut cols[r * n..(r + 1) * n];
                for bi in 0..g.batch {
                    let base = (bi * g.channels + c0 + ci) * g.h * g.w;
                    for i in 0..g.ho {
                        let dst = &mut row[bi * p + i * g.wo..bi * p + (i + 1) * g.wo];
                        let y = (i * g.stride + a * g.dilation) as isize - g.padding as isize;
                        if y < 0 || y >= g.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &x[base + y as usize * g.w..base + (y as usize + 1) * g.w];
                        let off = (b * g.dilation) as isize - g.padding as isize;
                        for (j, d) in dst.iter_mut().enumerate() {
                            let xc = (j * g.stride) as isize + off;
                            *d = if xc >= 0 && xc < g.w as isize {
                                src[xc as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of a column matrix back onto the input layout.
fn col2im<T: Real>(cols: &[T], g: &Geometry, c0: usize, cg: usize, dx: &mut [T]) {
    let p = g.pixels();
    let n = g.batch * p;
    for ci in 0..cg {
        for a in 0..g.kh {
            for b in 0..g.kw {
                let r = (ci * g.kh + a) * g.kw + b;
                let row = &cols[r * n..(r + 1) * n];
                for bi in 0..g.batch {
                    let base = (bi * g.channels + c0 + ci) * g.h * g.w;
                    for i in 0..g.ho {
                        let y = (i * g.stride + a * g.dilation) as isize - g.padding as isize;
                        if y < 0 || y >= g.h as isize {
                            continue;
                        }
                        let src = &row[bi * p + i * g.wo..bi * p + (i + 1) * g.wo];
                        let dst = &mut dx[base + y as usize * g.w..base + (y as usize + 1) * g.w];
                        let off = (b * g.dilation) as isize - g.padding as isize;
                        for (j, &v) in src.iter().enumerate() {
                            let xc = (j * g.stride) as isize + off;
                            if xc >= 0 && xc < g.w as isize {
                                dst[xc as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tensor<T> {
    /// Cross-correlation of `[B, C, H, W]` input with `[O, C/groups, kh, kw]`
    /// weights. Differentiable with respect to both operands.
    pub fn conv2d(&self, weight: &Tensor<T>, params: Conv2dParams) -> Result<Tensor<T>> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 {
            return shape_err(
                "conv2d",
                format!("input {xs:?} and weight {ws:?} must both be 4-D"),
            );
        }
        let Conv2dParams {
            stride,
            dilation,
            padding,
            groups,
        } = params;
        if stride == 0 || dilation == 0 || groups == 0 {
            return Err(Error::Config(format!(
                "stride, dilation and groups must be positive: {params:?}"
            )));
        }
        let (batch, channels, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (out_ch, cg, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if channels % groups != 0 || out_ch % groups != 0 {
            return Err(Error::Config(format!(
                "groups {groups} must divide input channels {channels} and output channels {out_ch}"
            )));
        }
        if channels / groups != cg {
            return shape_err(
                "conv2d",
                format!("weight expects {} input channels, input has {channels}", cg * groups),
            );
        }
        let (Some(ho), Some(wo)) = (params.out_extent(h, kh), params.out_extent(w, kw)) else {
            return shape_err(
                "conv2d",
                format!("dilated {kh}x{kw} kernel (dilation {dilation}) does not fit {h}x{w} input with padding {padding}"),
            );
        };
        let geo = Geometry {
            batch,
            channels,
            h,
            w,
            kh,
            kw,
            ho,
            wo,
            stride,
            dilation,
            padding,
        };
        let og = out_ch / groups;
        let rows = cg * kh * kw;
        let p = ho * wo;
        let n = batch * p;
        let mut out = vec![T::zero(); batch * out_ch * p];
        let mut cols = vec![T::zero(); rows * n];
        let mut tmp = vec![T::zero(); og * n];
        for gi in 0..groups {
            im2col(self.data(), &geo, gi * cg, cg, &mut cols);
            gemm(
                T::one(),
                View::row_major(weight.data(), gi * og * rows, og, rows),
                View::row_major(&cols, 0, rows, n),
                T::zero(),
                ViewMut {
                    data: &mut tmp,
                    offset: 0,
                    rs: n,
                    cs: 1,
                },
            );
            for o in 0..og {
                for bi in 0..batch {
                    let dst = (bi * out_ch + gi * og + o) * p;
                    out[dst..dst + p].copy_from_slice(&tmp[o * n + bi * p..o * n + (bi + 1) * p]);
                }
            }
        }
        let (x, wt) = (self.clone(), weight.clone());
        Ok(Tensor::from_op(
            out,
            vec![batch, out_ch, ho, wo],
            "conv2d",
            vec![self.clone(), weight.clone()],
            Box::new(move |g, needs| {
                let mut dx = needs[0].then(|| vec![T::zero(); x.numel()]);
                let mut dw = needs[1].then(|| vec![T::zero(); wt.numel()]);
                let mut gg = vec![T::zero(); og * n];
                let mut cols = vec![T::zero(); rows * n];
                for gi in 0..groups {
                    for o in 0..og {
                        for bi in 0..batch {
                            let src = (bi * out_ch + gi * og + o) * p;
                            gg[o * n + bi * p..o * n + (bi + 1) * p].copy_from_slice(&g[src..src + p]);
                        }
                    }
                    if let Some(dw) = dw.as_mut() {
                        im2col(x.data(), &geo, gi * cg, cg, &mut cols);
                        gemm(
                            T::one(),
                            View::row_major(&gg, 0, og, n),
                            View::row_major(&cols, 0, rows, n).t(),
                            T::zero(),
                            ViewMut {
                                data: dw,
                                offset: gi * og * rows,
                                rs: rows,
                                cs: 1,
                            },
                        );
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(
                            T::one(),
                            View::row_major(wt.data(), gi * og * rows, og, rows).t(),
                            View::row_major(&gg, 0, og, n),
                            T::zero(),
                            ViewMut {
                                data: &mut cols,
                                offset: 0,
                                rs: n,
                                cs: 1,
                            },
                        );
                        col2im(&cols, &geo, gi * cg, cg, dx);
                    }
                }
                vec![dx, dw]
            }),
        ))
    }
}
