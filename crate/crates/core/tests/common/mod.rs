//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use kagn::basis::{BasisSpec, Normalization};
use kagn::layers::{BottleneckKind, KanConv, KanConvConfig, KanPath, MoEConfig};
use kagn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Closed-form Legendre polynomials up to degree 5.
pub fn legendre_closed(n: usize, u: f64) -> f64 {
    let u2 = u * u;
    match n {
        0 => 1.0,
        1 => u,
        2 => (3.0 * u2 - 1.0) / 2.0,
        3 => (5.0 * u2 * u - 3.0 * u) / 2.0,
        4 => (35.0 * u2 * u2 - 30.0 * u2 + 3.0) / 8.0,
        5 => (63.0 * u2 * u2 * u - 70.0 * u2 * u + 15.0 * u) / 8.0,
        _ => panic!("closed form only up to degree 5"),
    }
}

/// Closed-form Chebyshev polynomials of the first kind up to degree 5.
pub fn chebyshev_closed(n: usize, u: f64) -> f64 {
    let u2 = u * u;
    match n {
        0 => 1.0,
        1 => u,
        2 => 2.0 * u2 - 1.0,
        3 => 4.0 * u2 * u - 3.0 * u,
        4 => 8.0 * u2 * u2 - 8.0 * u2 + 1.0,
        5 => 16.0 * u2 * u2 * u - 20.0 * u2 * u + 5.0 * u,
        _ => panic!("closed form only up to degree 5"),
    }
}

/// `t_n(x)` for a polynomial basis spec, normalization included.
pub fn basis_value(spec: &BasisSpec, n: usize, x: f64) -> f64 {
    let u = match spec.normalization {
        Normalization::Tanh => x.tanh(),
        Normalization::None => x,
    };
    match spec.kind.as_str() {
        "gram" | "legendre" => legendre_closed(n, u),
        "chebyshev" => chebyshev_closed(n, u),
        k => panic!("no closed form for `{k}`"),
    }
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

pub fn gelu_tanh(v: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
}

/// Pre-norm output of a non-bottleneck KAN convolution as the literal sum
/// `Σ_{a,b,d} φ_{a,b,d}(y_{d, i+a, j+b})` with
/// `φ(v) = Σ_n w_n·t_n(v) + w_b·silu(v)`. Taps that fall in the padding
/// contribute nothing.
pub fn kan_conv_oracle(layer: &KanConv<f64>, x: &Tensor<f64>) -> (Vec<f64>, [usize; 4]) {
    let KanPath::Direct(bc) = &layer.path else {
        panic!("oracle covers the direct path only")
    };
    let cfg = &layer.config;
    let p = bc.params;
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k, g) = (cfg.out_channels, cfg.kernel_size, p.groups);
    let (cg, og) = (c / g, o / g);
    let ho = (h + 2 * p.padding - p.dilation * (k - 1) - 1) / p.stride + 1;
    let wo = (w + 2 * p.padding - p.dilation * (k - 1) - 1) / p.stride + 1;
    let xd = x.data();
    let weights: Vec<&[f64]> = bc.weights.iter().map(|q| q.tensor().data()).collect();
    let wb = layer.residual.as_ref().map(|r| r.tensor().data());
    let widx = |oc: usize, d: usize, a: usize, bb: usize| ((oc * cg + d) * k + a) * k + bb;
    let mut out = vec![0.0; b * o * ho * wo];
    for n in 0..b {
        for oc in 0..o {
            let grp = oc / og;
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = 0.0;
                    for d in 0..cg {
                        let ch = grp * cg + d;
                        for a in 0..k {
                            for bb in 0..k {
                                let yi = (i * p.stride + a * p.dilation) as isize - p.padding as isize;
                                let yj = (j * p.stride + bb * p.dilation) as isize - p.padding as isize;
                                if yi < 0 || yj < 0 || yi >= h as isize || yj >= w as isize {
                                    continue;
                                }
                                let y = xd[((n * c + ch) * h + yi as usize) * w + yj as usize];
                                let mut phi = 0.0;
                                for (deg, wn) in weights.iter().enumerate() {
                                    phi += wn[widx(oc, d, a, bb)] * basis_value(&cfg.basis, deg, y);
                                }
                                if let Some(wb) = wb {
                                    phi += wb[widx(oc, d, a, bb)] * silu(y);
                                }
                                s += phi;
                            }
                        }
                    }
                    out[((n * o + oc) * ho + i) * wo + j] = s;
                }
            }
        }
    }
    (out, [b, o, ho, wo])
}

/// Random polynomial-basis layer config whose input fits `[2, c, 8, 8]`.
pub fn random_direct_config(rng: &mut ChaCha8Rng) -> KanConvConfig {
    let groups = [1, 1, 2][rng.random_range(0..3)];
    let c = groups * rng.random_range(1..=3);
    let o = groups * rng.random_range(1..=3);
    let k = [1, 3, 5][rng.random_range(0..3)];
    let basis = match rng.random_range(0..3) {
        0 => BasisSpec::gram(rng.random_range(0..=5)),
        1 => BasisSpec::legendre(rng.random_range(0..=5)),
        _ => BasisSpec::chebyshev(rng.random_range(0..=5)),
    };
    let mut cfg = KanConvConfig::bare(c, o, k, basis)
        .with_groups(groups)
        .with_stride(rng.random_range(1..=2))
        .with_dilation(rng.random_range(1..=2))
        .with_residual(rng.random_bool(0.7));
    if rng.random_bool(0.3) {
        cfg = cfg.with_padding(rng.random_range(0..=2));
    }
    cfg
}

/// Random config over every layer family: plain, bottlenecked, KAN
/// projections, mixture of experts, grouped.
pub fn random_any_config(rng: &mut ChaCha8Rng) -> KanConvConfig {
    let groups = [1, 2, 4][rng.random_range(0..3)];
    let c = groups * rng.random_range(2..=8);
    let o = groups * rng.random_range(2..=8);
    let basis = match rng.random_range(0..4) {
        0 => BasisSpec::gram(rng.random_range(0..=6)),
        1 => BasisSpec::chebyshev(rng.random_range(0..=6)),
        2 => BasisSpec::legendre(rng.random_range(0..=6)),
        _ => BasisSpec::rbf(rng.random_range(2..=8)),
    };
    let mut cfg = KanConvConfig::new(c, o, [1, 3, 5][rng.random_range(0..3)], basis)
        .with_residual(rng.random_bool(0.5))
        .with_groups(groups);
    if rng.random_bool(0.5) {
        cfg = cfg.with_norm(kagn::layers::NormKind::None);
    }
    if rng.random_bool(0.6) {
        // keep squeezed widths divisible by the group count
        let r = [1, 2][rng.random_range(0..2)];
        let kind = if rng.random_bool(0.5) { BottleneckKind::Linear } else { BottleneckKind::Kan };
        cfg = cfg.with_groups(1).with_bottleneck(r, kind);
        if rng.random_bool(0.5) {
            cfg = cfg.with_moe(MoEConfig {
                num_experts: rng.random_range(2..=8),
                active_k: 1,
                gate_noise_std: 0.0,
                load_balance_coef: 0.01,
            });
        }
    }
    cfg
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Number of trainable scalars as enumerated from the built layer.
pub fn enumerate_trainable(params: &[(String, &kagn::layers::Parameter<f64>)]) -> usize {
    params.iter().filter(|(_, p)| p.is_trainable()).map(|(_, p)| p.numel()).sum()
}

/// Workspace `data/` directory unless `KAGN_DATA_DIR` is set.
pub fn data_dir() -> std::path::PathBuf {
    match std::env::var_os("KAGN_DATA_DIR") {
        Some(d) => d.into(),
        None => std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"),
    }
}

/// Outcome of fine-tuning a degree-5 U-Net checkpoint under the plan `[4, 6]`.
#[derive(Debug)]
pub struct PeftOutcome {
    pub step0_identical: bool,
    pub frozen_identical: bool,
    pub window_changed: bool,
    pub poly_fraction: f64,
    pub steps: u64,
}

pub fn peft_scenario(steps: u64) -> PeftOutcome {
    use kagn::harness::{predict, synth_shapes, Checkpoint, LossSpec, Trainer, TrainConfig};
    use kagn::layers::Module;
    use kagn::models::build_unet_kagn;
    use kagn::peft::{trainable_param_report, PeftPlan};
    use kagn::regularization::RegConfig;

    let train = synth_shapes(64, 16, 1);
    let test = synth_shapes(8, 16, 2);
    let base_cfg = TrainConfig {
        batch_size: 8,
        loss: LossSpec::BceDice,
        label_smoothing: 0.0,
        reg: RegConfig::default(),
        max_steps: Some(4),
        ..TrainConfig::default()
    };
    let spec = build_unet_kagn(0.5, 2, 1, BasisSpec::gram(5)).unwrap();
    let mut base = Trainer::<f32>::new(spec.build(0).unwrap(), base_cfg.clone()).unwrap();
    base.train_epoch(&train, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("base.ckpt");
    base.save(&path).unwrap();

    let mut model = Checkpoint::read(&path).unwrap().model::<f32>().unwrap();
    let images = test.batch::<f32>(&(0..test.len()).collect::<Vec<_>>(), false, &mut rng(0)).unwrap().images;
    let before = predict(&mut model, &images).unwrap();

    let cfg = TrainConfig {
        epochs: steps.div_ceil(8) as usize,
        max_steps: Some(steps),
        peft: Some(PeftPlan::new(4, 6)),
        ..base_cfg
    };
    let mut t = Trainer::new(model, cfg).unwrap();
    let step0 = predict(&mut t.model, &images).unwrap();
    let snapshot: Vec<(String, bool, Vec<f32>)> = t
        .model
        .params()
        .into_iter()
        .map(|(n, p)| (n, p.is_trainable(), p.tensor().to_vec()))
        .collect();
    t.fit(&train, None, |_, _| Ok(())).unwrap();
    let after = t.model.params();
    let frozen_identical = snapshot
        .iter()
        .zip(&after)
        .filter(|(s, _)| !s.1)
        .all(|(s, (_, p))| s.2.iter().zip(p.tensor().data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    let window_changed = snapshot
        .iter()
        .zip(&after)
        .filter(|(s, _)| s.1)
        .all(|(s, (_, p))| s.2 != p.tensor().data());
    PeftOutcome {
        step0_identical: before.bit_eq(&step0),
        frozen_identical,
        window_changed,
        poly_fraction: trainable_param_report(&t.model).poly_fraction(),
        steps: t.step,
    }
}
