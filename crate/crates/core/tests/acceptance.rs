//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Needs MNIST under `data/mnist` (or
//! `KAGN_DATA_DIR`); takes roughly a quarter of an hour on one core.

mod common;

use std::time::{Duration, Instant};

use common::{
    chebyshev_closed, data_dir, enumerate_trainable, kan_conv_oracle, legendre_closed, peft_scenario,
    random_any_config, random_direct_config, rng,
};
use kagn::basis::{BasisSpec, Normalization};
use kagn::harness::{ExperimentConfig, GradSuite, Trainer, GRAD_TOLERANCE};
use kagn::layers::{BottleneckKind, ForwardCtx, KanConv, KanConvConfig, KanPath, MoEConfig, Module, Projection};
use kagn::models::build_simple_net;
use kagn::models::NetOptions;
use kagn::regularization::{apply_placement_regularizer, channel_std, Placement, PlacementReg, RegKind};
use kagn::Tensor;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn minutes(d: Duration) -> f64 {
    d.as_secs_f64() / 60.0
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let suite = GradSuite::global();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for (name, _) in suite.cases() {
        let reports = suite.run(&name, 0).map_err(|e| format!("{name}: {e}"))?;
        for r in reports {
            worst = worst.max(r.max_rel_err);
            if !r.passes(GRAD_TOLERANCE) {
                failed.push(r.name);
            }
        }
    }
    let took = t.elapsed();
    check(
        failed.is_empty() && took < Duration::from_secs(300),
        format!("{} cases, worst rel err {worst:.2e}, {:.2} min, failing {failed:?}", suite.cases().len(), minutes(took)),
    )
}

fn formula_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let cfg = random_direct_config(&mut r);
        let mut layer = KanConv::<f64>::new(cfg.clone(), &mut r).map_err(|e| e.to_string())?;
        let x = Tensor::randn(&[2, cfg.in_channels, 8, 8], 1.5, &mut r);
        let (want, shape) = kan_conv_oracle(&layer, &x);
        let mut rr = rng(0);
        let got = layer.forward(&x, &mut ForwardCtx::eval(&mut rr)).map_err(|e| e.to_string())?;
        if got.shape() != shape {
            return Err(format!("shape {:?} vs {shape:?}", got.shape()));
        }
        worst = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    check(worst < 1e-10, format!("10 configs, max abs err {worst:.2e}"))
}

fn basis_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for kind in ["gram", "legendre", "chebyshev"] {
        let b = BasisSpec {
            kind: kind.into(),
            degree: 5,
            normalization: Normalization::None,
            rbf_range: None,
            rbf_gamma: None,
        }
        .build()
        .map_err(|e| e.to_string())?;
        let mut v = vec![0.0; 6];
        for i in 0..1000 {
            let u = -1.0 + 2.0 * i as f64 / 999.0;
            b.eval_raw(u, &mut v, None).map_err(|e| e.to_string())?;
            for (n, got) in v.iter().enumerate() {
                let want = if kind == "chebyshev" { chebyshev_closed(n, u) } else { legendre_closed(n, u) };
                worst = worst.max((got - want).abs());
            }
        }
    }
    check(worst < 1e-12, format!("3 families, degrees 0..=5, 1000 points, max abs err {worst:.2e}"))
}

fn param_accounting() -> Outcome {
    for seed in 0..10 {
        let mut r = rng(200 + seed);
        let cfg = random_any_config(&mut r);
        let layer = KanConv::<f64>::new(cfg.clone(), &mut r).map_err(|e| e.to_string())?;
        let (formula, counted) = (cfg.param_count().map_err(|e| e.to_string())?, enumerate_trainable(&layer.params()));
        if formula != counted {
            return Err(format!("config {seed}: formula {formula}, enumerated {counted}"));
        }
    }
    let mut tested = 0;
    for c in [16, 32, 64, 128, 256] {
        for o in [16, 64, 256] {
            let plain = KanConvConfig::new(c, o, 3, BasisSpec::gram(3));
            let b = plain.clone().with_bottleneck(8, BottleneckKind::Linear);
            let (p, q) = (plain.param_count().unwrap(), b.param_count().unwrap());
            if q >= p {
                return Err(format!("{c}->{o}: r=8 has {q}, plain {p}"));
            }
            tested += 1;
        }
    }
    Ok(format!("10 random configs exact, r=8 smaller on {tested} widths >= 16"))
}

fn mnist() -> Outcome {
    let cfg = ExperimentConfig::mnist_small();
    let dir = data_dir().join("mnist");
    let (train, test) = cfg.data.load(Some(&dir)).map_err(|e| format!("{e} (looked in {})", dir.display()))?;
    let model = cfg.model_spec().and_then(|s| s.build::<f32>(cfg.train.seed)).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(model, cfg.train.clone()).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let h = t.fit(&train, Some(&test), |_, _| Ok(())).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let acc = h.epochs.last().map_or(0.0, |r| r.eval["top1"]);
    check(
        acc >= 0.97 && took < Duration::from_secs(30 * 60),
        format!("top-1 {:.2}% after {} epochs, {:.1} min", 100.0 * acc, h.epochs.len(), minutes(took)),
    )
}

fn peft() -> Outcome {
    let o = peft_scenario(100);
    check(
        o.steps == 100 && o.step0_identical && o.frozen_identical && o.window_changed && o.poly_fraction < 0.5,
        format!(
            "step-0 identical {}, frozen identical after {} steps {}, trainable poly fraction {:.3}",
            o.step0_identical, o.steps, o.frozen_identical, o.poly_fraction
        ),
    )
}

fn regularizers() -> Outcome {
    let x = Tensor::<f64>::randn(&[2, 3, 5, 5], 1.0, &mut rng(3));
    for kind in [RegKind::Dropout, RegKind::Noise] {
        for placement in [Placement::Full, Placement::Poly, Placement::Degree] {
            let r = PlacementReg { kind, placement, p: 0.5, alpha: 0.8 };
            let zero = PlacementReg { p: 0.0, ..r };
            let eval = apply_placement_regularizer(&x, &r, false, &mut rng(4)).map_err(|e| e.to_string())?;
            let p0 = apply_placement_regularizer(&x, &zero, true, &mut rng(4)).map_err(|e| e.to_string())?;
            if !eval.bit_eq(&x) || !p0.bit_eq(&x) {
                return Err(format!("{kind:?}/{placement:?} is not the identity"));
            }
            let cfg = KanConvConfig::bare(3, 4, 3, BasisSpec::gram(3));
            let mut plain = KanConv::<f64>::new(cfg.clone(), &mut rng(1)).unwrap();
            let mut reg = KanConv::<f64>::new(cfg.with_regularizer(Some(r)), &mut rng(1)).unwrap();
            let (mut r1, mut r2) = (rng(2), rng(2));
            let a = plain.forward(&x, &mut ForwardCtx::eval(&mut r1)).unwrap();
            let b = reg.forward(&x, &mut ForwardCtx::eval(&mut r2)).unwrap();
            if !a.bit_eq(&b) {
                return Err(format!("{kind:?}/{placement:?} changes an eval-mode layer"));
            }
        }
    }
    let ones = Tensor::<f64>::full(&[10, 10, 100, 100], 1.0);
    let mut worst_drop = 0.0f64;
    for p in [0.05, 0.1, 0.3, 0.5] {
        let r = PlacementReg { kind: RegKind::Dropout, placement: Placement::Full, p, alpha: 1.0 };
        let y = apply_placement_regularizer(&ones, &r, true, &mut rng(7)).unwrap();
        let frac = y.data().iter().filter(|&&v| v == 0.0).count() as f64 / y.numel() as f64;
        worst_drop = worst_drop.max((frac - p).abs());
    }
    let per = 250 * 250;
    let mut v = Tensor::<f64>::randn(&[4, 3, 250, 250], 1.0, &mut rng(8)).to_vec();
    for (i, e) in v.iter_mut().enumerate() {
        *e *= [1.0, 2.0, 0.5][(i / per) % 3];
    }
    let x = Tensor::new(v, &[4, 3, 250, 250]).unwrap();
    let sigma = channel_std(&x);
    let alpha = 0.8;
    let r = PlacementReg { kind: RegKind::Noise, placement: Placement::Full, p: 1.0, alpha };
    let y = apply_placement_regularizer(&x, &r, true, &mut rng(9)).unwrap();
    let mut worst_var = 0.0f64;
    for (c, s) in sigma.iter().enumerate() {
        let added: Vec<f64> = (0..4)
            .flat_map(|n| (0..per).map(move |i| (n * 3 + c) * per + i))
            .map(|i| y.data()[i] - x.data()[i])
            .collect();
        let m = added.iter().sum::<f64>() / added.len() as f64;
        let var = added.iter().map(|a| (a - m).powi(2)).sum::<f64>() / added.len() as f64;
        worst_var = worst_var.max((var / (alpha * alpha * s * s) - 1.0).abs());
    }
    check(
        worst_drop <= 0.005 && worst_var < 0.1,
        format!("identities bit-exact, dropout fraction off by {worst_drop:.4}, noise variance off by {:.1}%", 100.0 * worst_var),
    )
}

fn moe_layer(seed: u64, coef: f64) -> KanConv<f64> {
    let cfg = KanConvConfig::bare(8, 8, 3, BasisSpec::gram(3))
        .with_bottleneck(2, BottleneckKind::Linear)
        .with_moe(MoEConfig {
            num_experts: 8,
            active_k: 2,
            gate_noise_std: 0.0,
            load_balance_coef: coef,
        });
    KanConv::new(cfg, &mut rng(seed)).unwrap()
}

fn moe() -> Outcome {
    let x = Tensor::randn(&[6, 8, 4, 4], 1.0, &mut rng(12));
    let mut layer = moe_layer(11, 0.0);
    let mut r = rng(0);
    let mut ctx = ForwardCtx::train(&mut r);
    ctx.record_routing = true;
    ctx.update_norm_stats = false;
    layer.forward(&x, &mut ctx).map_err(|e| e.to_string())?;
    let routing = &ctx.routing[0];
    let two_each = (0..6).all(|s| {
        routing.selected[s].len() == 2 && routing.gates[s * 8..(s + 1) * 8].iter().filter(|&&g| g > 0.0).count() == 2
    });
    let aux = ctx.aux_losses[0].data()[0];

    let mut moe = moe_layer(21, 0.0);
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
    let wb = moe.residual.as_ref().unwrap().tensor().to_vec();
    single.residual.as_mut().unwrap().set_data(wb).unwrap();
    let x = Tensor::randn(&[5, 8, 4, 4], 1.0, &mut rng(23));
    let (mut r1, mut r2) = (rng(0), rng(0));
    let a = moe.forward(&x, &mut ForwardCtx::eval(&mut r1)).unwrap();
    let b = single.forward(&x, &mut ForwardCtx::eval(&mut r2)).unwrap();
    let diff = a.max_abs_diff(&b);
    check(
        two_each && diff < 1e-6 && aux == 0.0,
        format!("2 of 8 per sample {two_each}, identical experts differ by {diff:.2e}, aux at zero coefficient {aux}"),
    )
}

fn segmentation() -> Outcome {
    let cfg = ExperimentConfig::shapes_unet();
    let (train, test) = cfg.data.load(None).map_err(|e| e.to_string())?;
    let model = cfg.model_spec().and_then(|s| s.build::<f32>(cfg.train.seed)).map_err(|e| e.to_string())?;
    let mut t = Trainer::new(model, cfg.train.clone()).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let h = t.fit(&train, Some(&test), |_, _| Ok(())).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let best = h.epochs.iter().map(|r| r.eval["iou"]).fold(0.0, f64::max);
    let last = h.epochs.last().map_or(0.0, |r| r.eval["iou"]);
    check(
        best >= 0.90 && took < Duration::from_secs(20 * 60),
        format!("IoU {last:.4} after {} epochs (best {best:.4}), {:.1} min", h.epochs.len(), minutes(took)),
    )
}

fn determinism() -> Outcome {
    let dir = data_dir().join("mnist");
    let load = |split| kagn::harness::data::load_mnist(&dir, split).map_err(|e| e.to_string());
    let train = load(kagn::harness::Split::Train)?.take(512);
    let test = load(kagn::harness::Split::Test)?.take(256);
    let fresh = || {
        let mut cfg = ExperimentConfig::mnist_small();
        cfg.train.batch_size = 64;
        let opts = NetOptions {
            regularizer: cfg.train.reg.placement,
            ..NetOptions::default()
        };
        let model = build_simple_net(4, &[4, 8, 8, 8], &opts).unwrap().build::<f32>(5).unwrap();
        Trainer::new(model, cfg.train).unwrap()
    };
    let run = |mut t: Trainer<f32>| t.fit(&train, Some(&test), |_, _| Ok(())).map(|h| (h, t));
    let (a, ta) = run(fresh()).map_err(|e| e.to_string())?;
    let (b, _) = run(fresh()).map_err(|e| e.to_string())?;

    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = tmp.path().join("mid.ckpt");
    let mut c = fresh();
    c.train_epoch(&train, Some(&test)).map_err(|e| e.to_string())?;
    c.save(&path).map_err(|e| e.to_string())?;
    drop(c);
    let resumed = Trainer::<f32>::resume(&path).map_err(|e| e.to_string())?;
    let (r, tr) = run(resumed).map_err(|e| e.to_string())?;
    let weights_equal = ta.model.params().iter().zip(tr.model.params()).all(|((_, p), (_, q))| p.tensor().bit_eq(q.tensor()));
    check(
        a == b && a == r && weights_equal,
        format!(
            "repeat run identical {}, resumed run identical {} ({} steps), weights identical {weights_equal}",
            a == b,
            a == r,
            a.step_losses.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradients),
        ("formula oracle", formula_oracle),
        ("basis oracle", basis_oracle),
        ("parameter accounting", param_accounting),
        ("MNIST desk-scale", mnist),
        ("PEFT integrity", peft),
        ("regularizer contracts", regularizers),
        ("MoE contracts", moe),
        ("segmentation desk-scale", segmentation),
        ("determinism", determinism),
    ];
    let only = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if only.as_deref().is_some_and(|o| !name.contains(o)) {
            continue;
        }
        match f() {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
