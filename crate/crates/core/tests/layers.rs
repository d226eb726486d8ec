mod common;

use common::{enumerate_trainable, kan_conv_oracle, random_any_config, random_direct_config, rng};
use kagn::attention::{FocalKagnModulation, FocalModulationConfig, SelfKagntention, SelfKagntentionConfig};
use kagn::basis::BasisSpec;
use kagn::layers::{
    BottleneckKind, Conv2d, ForwardCtx, KanConv, KanConvConfig, KanPath, MoEConfig, Module, Projection,
};
use kagn::models::{build_simple_net, build_unet_kagn, NetOptions};
use kagn::Tensor;
use proptest::prelude::*;

fn eval_forward(layer: &mut KanConv<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut r = rng(0);
    let mut ctx = ForwardCtx::eval(&mut r);
    layer.forward(x, &mut ctx).unwrap()
}

#[test]
fn literal_sum_oracle_on_random_configs() {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let cfg = random_direct_config(&mut r);
        let mut layer = KanConv::<f64>::new(cfg.clone(), &mut r).unwrap();
        let x = Tensor::randn(&[2, cfg.in_channels, 8, 8], 1.5, &mut r);
        let (expect, shape) = kan_conv_oracle(&layer, &x);
        let got = eval_forward(&mut layer, &x);
        assert_eq!(got.shape(), &shape, "{cfg:?}");
        let err = got.data().iter().zip(&expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst = worst.max(err);
        assert!(err < 1e-10, "seed {seed}: {err:e} for {cfg:?}");
    }
    println!("worst abs err {worst:e}");
}

#[test]
fn degree_zero_is_affine_in_silu_and_one() {
    let mut r = rng(3);
    let cfg = KanConvConfig::bare(2, 3, 3, BasisSpec::gram(0));
    let mut layer = KanConv::<f64>::new(cfg.clone(), &mut r).unwrap();
    let x = Tensor::randn(&[2, 2, 5, 5], 1.0, &mut r);
    let KanPath::Direct(bc) = &layer.path else { unreachable!() };
    let p = cfg.conv_params();
    let ones = Tensor::ones(x.shape());
    let expect = ones
        .conv2d(bc.weights[0].tensor(), p)
        .unwrap()
        .add(&x.silu().conv2d(layer.residual.as_ref().unwrap().tensor(), p).unwrap())
        .unwrap();
    let got = eval_forward(&mut layer, &x);
    assert!(got.max_abs_diff(&expect) < 1e-12);
}

#[test]
fn zero_poly_weights_leave_the_silu_branch() {
    let mut r = rng(4);
    let mut layer = KanConv::<f64>::new(KanConvConfig::bare(3, 3, 1, BasisSpec::gram(3)), &mut r).unwrap();
    for (name, p) in layer.params_mut() {
        let n = p.numel();
        let v = if name == "residual" {
            // identity 1×1 kernel
            (0..n).map(|i| f64::from(i % 4 == 0)).collect()
        } else {
            vec![0.0; n]
        };
        p.set_data(v).unwrap();
    }
    let x = Tensor::randn(&[2, 3, 4, 4], 1.0, &mut r);
    assert!(eval_forward(&mut layer, &x).bit_eq(&x.silu()));
}

fn identity_1x1(c: usize) -> Vec<f64> {
    (0..c * c).map(|i| f64::from(i / c == i % c)).collect()
}

#[test]
fn unit_bottleneck_with_identity_projections_is_the_plain_layer() {
    let mut r = rng(5);
    let base = KanConvConfig::bare(4, 4, 3, BasisSpec::gram(3));
    let mut plain = KanConv::<f64>::new(base.clone(), &mut r).unwrap();
    let mut bott = KanConv::<f64>::new(base.with_bottleneck(1, BottleneckKind::Linear), &mut r).unwrap();
    let KanPath::Direct(src) = plain.path.clone() else { unreachable!() };
    let KanPath::Bottleneck { squeeze, inner, expand } = &mut bott.path else { unreachable!() };
    for (dst, s) in inner.weights.iter_mut().zip(&src.weights) {
        dst.set_data(s.tensor().to_vec()).unwrap();
    }
    for proj in [squeeze, expand] {
        let Projection::Linear(w) = proj else { unreachable!() };
        w.set_data(identity_1x1(4)).unwrap();
    }
    bott.residual
        .as_mut()
        .unwrap()
        .set_data(plain.residual.as_ref().unwrap().tensor().to_vec())
        .unwrap();
    let x = Tensor::randn(&[2, 4, 6, 6], 1.0, &mut r);
    let a = eval_forward(&mut plain, &x);
    let b = eval_forward(&mut bott, &x);
    assert!(a.bit_eq(&b), "max diff {:e}", a.max_abs_diff(&b));
}

#[test]
fn zero_expand_leaves_only_the_residual() {
    let mut r = rng(6);
    let cfg = KanConvConfig::bare(8, 8, 3, BasisSpec::gram(3)).with_bottleneck(4, BottleneckKind::Linear);
    let mut layer = KanConv::<f64>::new(cfg.clone(), &mut r).unwrap();
    let KanPath::Bottleneck { expand: Projection::Linear(w), .. } = &mut layer.path else { unreachable!() };
    w.set_data(vec![0.0; w.numel()]).unwrap();
    let x = Tensor::randn(&[2, 8, 5, 5], 1.0, &mut r);
    let expect = x
        .silu()
        .conv2d(layer.residual.as_ref().unwrap().tensor(), cfg.conv_params())
        .unwrap();
    assert!(eval_forward(&mut layer, &x).max_abs_diff(&expect) < 1e-12);
}

#[test]
fn param_count_matches_enumeration_on_random_configs() {
    for seed in 0..10 {
        let mut r = rng(200 + seed);
        let cfg = random_any_config(&mut r);
        let layer = KanConv::<f64>::new(cfg.clone(), &mut r).unwrap();
        assert_eq!(cfg.param_count().unwrap(), enumerate_trainable(&layer.params()), "{cfg:?}");
    }
}

#[test]
fn param_count_matches_enumeration_for_blocks_and_models() {
    let mut r = rng(9);
    for c in [2, 4, 6] {
        let att = SelfKagntentionConfig::new(c, BasisSpec::gram(2)).with_default_bottleneck();
        let m = SelfKagntention::<f64>::new(att.clone(), &mut r).unwrap();
        assert_eq!(att.param_count().unwrap(), enumerate_trainable(&m.params()));
        let mut fc = FocalModulationConfig::new(c, BasisSpec::chebyshev(3));
        fc.focal_levels = c / 2;
        let m = FocalKagnModulation::<f64>::new(fc.clone(), &mut r).unwrap();
        assert_eq!(fc.param_count().unwrap(), enumerate_trainable(&m.params()));
    }
    let opts = NetOptions {
        bottleneck: 2,
        moe: Some(MoEConfig::default()),
        ..NetOptions::default()
    };
    for spec in [
        build_simple_net(4, &[8, 16, 32, 64], &NetOptions::default()).unwrap(),
        build_simple_net(4, &[8, 16, 16, 16], &opts).unwrap(),
        build_unet_kagn(0.5, 2, 1, BasisSpec::gram(5)).unwrap(),
    ] {
        let model = spec.build::<f64>(0).unwrap();
        let per_layer: Vec<usize> = spec.layer_counts().unwrap().iter().map(|c| c.formula).collect();
        let enumerated: Vec<usize> = model.layer_enumeration().iter().map(|(_, n)| *n).collect();
        assert_eq!(per_layer, enumerated, "{}", spec.name);
        assert_eq!(spec.param_count().unwrap(), enumerate_trainable(&model.params()));
    }
}

#[test]
fn documented_counts() {
    assert_eq!(Conv2d::<f64>::count(3, 32, 3, 1), 896);
    let cfg = KanConvConfig::bare(3, 32, 3, BasisSpec::gram(3));
    assert_eq!(cfg.param_count().unwrap(), 4320);
    // r equal to the input width squeezes to a single channel
    let c = KanConvConfig::bare(16, 16, 3, BasisSpec::gram(3)).with_bottleneck(16, BottleneckKind::Linear);
    assert_eq!(c.squeeze_width(), 1);
    assert_eq!(c.param_count().unwrap(), 16 + 16 + 4 * 9 + 16 * 16 * 9);
}

#[test]
fn bottleneck_r8_is_smaller_from_16_channels() {
    for c in [16, 32, 64, 128, 256] {
        for o in [16, 64, 256] {
            let plain = KanConvConfig::new(c, o, 3, BasisSpec::gram(3));
            let b = plain.clone().with_bottleneck(8, BottleneckKind::Linear);
            let (p, q) = (plain.param_count().unwrap(), b.param_count().unwrap());
            assert!(q < p, "{c}->{o}: bottleneck {q} vs plain {p}");
        }
    }
}

fn moe_layer(seed: u64, coef: f64, noise: f64) -> KanConv<f64> {
    let cfg = KanConvConfig::bare(8, 8, 3, BasisSpec::gram(3))
        .with_bottleneck(2, BottleneckKind::Linear)
        .with_moe(MoEConfig {
            num_experts: 8,
            active_k: 2,
            gate_noise_std: noise,
            load_balance_coef: coef,
        });
    KanConv::new(cfg, &mut rng(seed)).unwrap()
}

#[test]
fn moe_routes_two_of_eight_and_matches_hand_gating() {
    let mut layer = moe_layer(11, 0.01, 0.0);
    let x = Tensor::randn(&[6, 8, 4, 4], 1.0, &mut rng(12));
    let mut r = rng(0);
    let mut ctx = ForwardCtx::eval(&mut r);
    ctx.record_routing = true;
    layer.forward(&x, &mut ctx).unwrap();
    let routing = &ctx.routing[0];

    // recompute the gate logits: squeeze 1×1, global average pool, linear map
    let KanPath::Experts { squeeze: Projection::Linear(sq), gate, .. } = &layer.path else { unreachable!() };
    let (sq, gw) = (sq.tensor().data(), gate.weight.tensor().data());
    let (d, e, hw) = (4, 8, 16);
    for s in 0..6 {
        let pooled: Vec<f64> = (0..d)
            .map(|k| {
                (0..hw)
                    .map(|p| (0..8).map(|c| sq[k * 8 + c] * x.data()[(s * 8 + c) * hw + p]).sum::<f64>())
                    .sum::<f64>()
                    / hw as f64
            })
            .collect();
        let logits: Vec<f64> = (0..e).map(|j| (0..d).map(|k| gw[j * d + k] * pooled[k]).sum()).collect();
        for (a, b) in logits.iter().zip(&routing.logits[s * e..(s + 1) * e]) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut order: Vec<(f64, usize)> = logits.iter().copied().zip(0..).collect();
        order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let top: Vec<usize> = order[..2].iter().map(|p| p.1).collect();
        assert_eq!(routing.selected[s], top);

        let gates = &routing.gates[s * e..(s + 1) * e];
        assert_eq!(gates.iter().filter(|&&g| g > 0.0).count(), 2);
        assert!((gates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let z = (logits[top[0]] - logits[top[1]]).exp();
        assert!((gates[top[0]] - z / (1.0 + z)).abs() < 1e-12);
    }
}

#[test]
fn identical_experts_match_a_single_bottleneck() {
    let mut moe = moe_layer(21, 0.0, 0.0);
    let mut single = KanConv::<f64>::new(
        KanConvConfig::bare(8, 8, 3, BasisSpec::gram(3)).with_bottleneck(2, BottleneckKind::Linear),
        &mut rng(22),
    )
    .unwrap();
    let KanPath::Experts { squeeze, experts, expand, .. } = &mut moe.path else { unreachable!() };
    let first = experts[0].clone();
    for ex in experts.iter_mut() {
        for (w, s) in ex.weights.iter_mut().zip(&first.weights) {
            w.set_data(s.tensor().to_vec()).unwrap();
        }
    }
    let KanPath::Bottleneck { squeeze: s2, inner, expand: e2 } = &mut single.path else { unreachable!() };
    for (w, s) in inner.weights.iter_mut().zip(&first.weights) {
        w.set_data(s.tensor().to_vec()).unwrap();
    }
    for (dst, src) in [(s2, &*squeeze), (e2, &*expand)] {
        let (Projection::Linear(d), Projection::Linear(s)) = (dst, src) else { unreachable!() };
        d.set_data(s.tensor().to_vec()).unwrap();
    }
    single
        .residual
        .as_mut()
        .unwrap()
        .set_data(moe.residual.as_ref().unwrap().tensor().to_vec())
        .unwrap();
    let x = Tensor::randn(&[5, 8, 4, 4], 1.0, &mut rng(23));
    let a = eval_forward(&mut moe, &x);
    let b = eval_forward(&mut single, &x);
    assert!(a.max_abs_diff(&b) < 1e-6, "{:e}", a.max_abs_diff(&b));
}

#[test]
fn zero_coefficient_means_zero_aux_and_determinism() {
    let x = Tensor::randn(&[4, 8, 4, 4], 1.0, &mut rng(31));
    let run = |noise: f64| {
        let mut layer = moe_layer(30, 0.0, noise);
        let mut r = rng(32);
        let mut ctx = ForwardCtx::train(&mut r);
        ctx.update_norm_stats = false;
        let y = layer.forward(&x, &mut ctx).unwrap();
        assert_eq!(ctx.aux_losses.len(), 1);
        assert_eq!(ctx.aux_losses[0].data(), &[0.0]);
        y
    };
    assert!(run(0.0).bit_eq(&run(0.0)));
    run(1.0);
    // a positive coefficient does produce a penalty
    let mut layer = moe_layer(30, 0.5, 0.0);
    let mut r = rng(32);
    let mut ctx = ForwardCtx::train(&mut r);
    layer.forward(&x, &mut ctx).unwrap();
    assert!(ctx.aux_losses[0].data()[0] > 0.0);
}

fn conv_extent(n: usize, k: usize, s: usize, d: usize, p: usize) -> Option<usize> {
    (n + 2 * p).checked_sub(d * (k - 1) + 1).map(|v| v / s + 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_extent_follows_the_conv_rule(
        h in 3usize..9, w in 3usize..9, k in prop::sample::select(vec![1usize, 3, 5]),
        s in 1usize..3, d in 1usize..3, p in 0usize..3,
    ) {
        let cfg = KanConvConfig::bare(1, 2, k, BasisSpec::gram(1)).with_stride(s).with_dilation(d).with_padding(p);
        let mut layer = KanConv::<f64>::new(cfg, &mut rng(1)).unwrap();
        let x = Tensor::randn(&[1, 1, h, w], 1.0, &mut rng(2));
        let mut r = rng(0);
        let mut ctx = ForwardCtx::eval(&mut r);
        match (conv_extent(h, k, s, d, p), conv_extent(w, k, s, d, p)) {
            (Some(ho), Some(wo)) => {
                let y = layer.forward(&x, &mut ctx).unwrap();
                prop_assert_eq!(y.shape(), &[1, 2, ho, wo]);
            }
            _ => prop_assert!(layer.forward(&x, &mut ctx).is_err()),
        }
    }
}

#[test]
fn channel_mismatch_is_rejected() {
    let mut layer = KanConv::<f64>::new(KanConvConfig::bare(3, 2, 3, BasisSpec::gram(2)), &mut rng(0)).unwrap();
    let x = Tensor::randn(&[1, 2, 4, 4], 1.0, &mut rng(1));
    let mut r = rng(0);
    let mut ctx = ForwardCtx::eval(&mut r);
    assert!(matches!(layer.forward(&x, &mut ctx), Err(kagn::Error::Shape { .. })));
}
