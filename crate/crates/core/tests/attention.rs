mod common;

use common::{gelu_tanh, kan_conv_oracle, rng};
use kagn::attention::{FocalKagnModulation, FocalModulationConfig, SelfKagntention, SelfKagntentionConfig};
use kagn::basis::BasisSpec;
use kagn::layers::{Conv2d, ForwardCtx, Module};
use kagn::Tensor;

fn eval<M: Module<f64>>(m: &mut M, x: &Tensor<f64>) -> Tensor<f64> {
    let mut r = rng(0);
    let mut ctx = ForwardCtx::eval(&mut r);
    m.forward(x, &mut ctx).unwrap()
}

/// 1×1 convolution with bias, by hand. `x` is `[c, p]`, the result `[o, p]`.
fn pointwise(conv: &Conv2d<f64>, x: &[f64], c: usize, p: usize) -> Vec<f64> {
    let (w, b) = (conv.weight.tensor().data(), conv.bias.tensor().data());
    let o = b.len();
    let mut out = vec![0.0; o * p];
    for oc in 0..o {
        for i in 0..p {
            out[oc * p + i] = b[oc] + (0..c).map(|ic| w[oc * c + ic] * x[ic * p + i]).sum::<f64>();
        }
    }
    out
}

/// `x + scale · attention(x)` for one sample, written out as matrix products.
fn attention_oracle(att: &SelfKagntention<f64>, x: &Tensor<f64>, scale: f64) -> Vec<f64> {
    let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let p = h * w;
    let z = match &att.project_in {
        Some(conv) => pointwise(conv, x.data(), c, p),
        None => x.data().to_vec(),
    };
    let d = z.len() / p;
    let zt = Tensor::new(z, &[1, d, h, w]).unwrap();
    let q = kan_conv_oracle(&att.query, &zt).0;
    let k = kan_conv_oracle(&att.key, &zt).0;
    let v = kan_conv_oracle(&att.value, &zt).0;
    let mut scores = vec![0.0; p * p];
    for i in 0..p {
        let row: Vec<f64> = (0..p)
            .map(|j| (0..d).map(|ch| q[ch * p + i] * k[ch * p + j]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = row.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = row.iter().map(|s| (s - m).exp()).collect();
        let total: f64 = e.iter().sum();
        for j in 0..p {
            scores[i * p + j] = e[j] / total;
        }
    }
    let mut out = vec![0.0; d * p];
    for ch in 0..d {
        for i in 0..p {
            out[ch * p + i] = (0..p).map(|j| v[ch * p + j] * scores[i * p + j]).sum();
        }
    }
    if let Some(conv) = &att.project_out {
        out = pointwise(conv, &out, d, p);
    }
    x.data().iter().zip(&out).map(|(a, b)| a + scale * b).collect()
}

#[test]
fn attention_matches_the_spelled_out_matrix_calculation() {
    for bottleneck in [false, true] {
        let mut cfg = SelfKagntentionConfig::new(4, BasisSpec::gram(2));
        if bottleneck {
            cfg = cfg.with_default_bottleneck();
        }
        let mut att = SelfKagntention::<f64>::new(cfg, &mut rng(1)).unwrap();
        att.residual_scale.set_data(vec![0.7]).unwrap();
        let x = Tensor::randn(&[1, 4, 2, 2], 1.0, &mut rng(2));
        let want = attention_oracle(&att, &x, 0.7);
        let got = eval(&mut att, &x);
        let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "bottleneck {bottleneck}: {err:e}");
    }
}

#[test]
fn attention_is_equivariant_to_spatial_permutations() {
    let mut att = SelfKagntention::<f64>::new(
        SelfKagntentionConfig::new(4, BasisSpec::gram(3)).with_default_bottleneck(),
        &mut rng(3),
    )
    .unwrap();
    att.residual_scale.set_data(vec![1.3]).unwrap();
    let (b, c, h, w) = (2, 4, 3, 3);
    let p = h * w;
    let perm = [4usize, 7, 0, 2, 8, 1, 6, 3, 5];
    let permute = |t: &Tensor<f64>| {
        let mut v = vec![0.0; t.numel()];
        for bc in 0..b * c {
            for (i, &src) in perm.iter().enumerate() {
                v[bc * p + i] = t.data()[bc * p + src];
            }
        }
        Tensor::new(v, t.shape()).unwrap()
    };
    let x = Tensor::randn(&[b, c, h, w], 1.0, &mut rng(4));
    let a = permute(&eval(&mut att, &x));
    let bb = eval(&mut att, &permute(&x));
    assert!(a.max_abs_diff(&bb) < 1e-12, "{:e}", a.max_abs_diff(&bb));
}

/// Focal modulation with every sub-layer evaluated by the literal-sum oracle.
fn focal_oracle(f: &FocalKagnModulation<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let p = h * w;
    let t = |v: Vec<f64>, ch: usize| Tensor::new(v, &[b, ch, h, w]).unwrap();
    let q = kan_conv_oracle(&f.query, x).0;
    let gates = kan_conv_oracle(&f.gates, x).0;
    let levels = f.levels.len();
    let mut z = kan_conv_oracle(&f.context, x).0;
    let mut m = vec![0.0; b * c * p];
    for (l, level) in f.levels.iter().enumerate() {
        z = kan_conv_oracle(level, &t(z, c)).0.into_iter().map(gelu_tanh).collect();
        for n in 0..b {
            for ch in 0..c {
                for i in 0..p {
                    m[(n * c + ch) * p + i] += gates[(n * (levels + 1) + l) * p + i] * z[(n * c + ch) * p + i];
                }
            }
        }
    }
    for n in 0..b {
        for ch in 0..c {
            let mean = z[(n * c + ch) * p..(n * c + ch + 1) * p].iter().sum::<f64>() / p as f64;
            for i in 0..p {
                m[(n * c + ch) * p + i] += gates[(n * (levels + 1) + levels) * p + i] * mean;
            }
        }
    }
    let qm: Vec<f64> = q.iter().zip(&m).map(|(a, b)| a * b).collect();
    let out = kan_conv_oracle(&f.projection, &t(qm, c)).0;
    out.iter().zip(x.data()).map(|(a, b)| a + b).collect()
}

#[test]
fn focal_modulation_matches_loop_oracle() {
    for levels in [1, 2] {
        let mut cfg = FocalModulationConfig::new(3, BasisSpec::chebyshev(3));
        cfg.focal_levels = levels;
        let mut f = FocalKagnModulation::<f64>::new(cfg, &mut rng(5)).unwrap();
        let x = Tensor::randn(&[2, 3, 5, 4], 1.0, &mut rng(6));
        let want = focal_oracle(&f, &x);
        let got = eval(&mut f, &x);
        let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "L={levels}: {err:e}");
    }
}

#[test]
fn zero_gates_leave_input_plus_constant_projection() {
    let mut f = FocalKagnModulation::<f64>::new(FocalModulationConfig::new(3, BasisSpec::gram(2)), &mut rng(7)).unwrap();
    for (_, p) in f.gates.params_mut() {
        let n = p.numel();
        p.set_data(vec![0.0; n]).unwrap();
    }
    let x = Tensor::randn(&[1, 3, 4, 4], 1.0, &mut rng(8));
    let y = eval(&mut f, &x);
    // projection of a zero map is one constant per channel; with zero weights it vanishes
    let zero = eval(&mut f.projection, &Tensor::zeros(&[1, 3, 4, 4]));
    assert!(y.sub(&x).unwrap().max_abs_diff(&zero) < 1e-12);
    for (_, p) in f.projection.params_mut() {
        let n = p.numel();
        p.set_data(vec![0.0; n]).unwrap();
    }
    assert!(eval(&mut f, &x).bit_eq(&x));
}
