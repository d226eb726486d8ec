//! Named finite-difference gradient cases, each differentiating a layer or
//! loss with respect to its input and all of its trainable weights.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{FocalKagnModulation, FocalModulationConfig, SelfKagntention, SelfKagntentionConfig};
use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients, random_projection, GradCheckOptions, GradCheckReport};
use crate::harness::loss::{bce_dice, cross_entropy, focal_loss};
use crate::layers::{BottleneckKind, ForwardCtx, KanConv, KanConvConfig, MoEConfig, Module, ParamKind};
use crate::regularization::{apply_placement_regularizer, Placement, PlacementReg, RegKind};
use crate::tensor::Tensor;

/// Relative-error bound every case must meet.
pub const GRAD_TOLERANCE: f64 = 1e-4;

type CaseFn = Arc<dyn Fn(u64) -> Result<Vec<GradCheckReport>> + Send + Sync>;

/// Name → gradient case. Each case returns one report per checked function.
pub struct GradSuite {
    cases: RwLock<BTreeMap<String, (String, CaseFn)>>,
}

impl GradSuite {
    pub fn with_defaults() -> Self {
        let s = GradSuite {
            cases: RwLock::new(BTreeMap::new()),
        };
        s.register("kagn-conv", "Gram KAN convolution, plain and grouped/dilated/strided", kagn_conv_case);
        s.register("bottleneck", "bottleneck KAN convolution, linear and KAN projections", bottleneck_case);
        s.register("moe", "mixture-of-experts bottleneck, gate noise off", moe_case);
        s.register("self-attention", "Self-KAGNtention with inner projections", attention_case);
        s.register("focal", "focal KAN modulation, two levels", focal_case);
        s.register("noise-eval", "noise injection and dropout in eval mode", noise_eval_case);
        s.register("losses", "cross-entropy, focal loss and BCE + Dice", losses_case);
        s.register("bases", "Chebyshev, Legendre and RBF basis layers", bases_case);
        s
    }

    pub fn global() -> &'static GradSuite {
        static S: OnceLock<GradSuite> = OnceLock::new();
        S.get_or_init(GradSuite::with_defaults)
    }

    pub fn register(
        &self,
        name: &str,
        description: &str,
        f: impl Fn(u64) -> Result<Vec<GradCheckReport>> + Send + Sync + 'static,
    ) {
        self.cases
            .write()
            .expect("suite lock")
            .insert(name.to_string(), (description.to_string(), Arc::new(f)));
    }

    /// `(name, description)` pairs in name order.
    pub fn cases(&self) -> Vec<(String, String)> {
        self.cases
            .read()
            .expect("suite lock")
            .iter()
            .map(|(k, (d, _))| (k.clone(), d.clone()))
            .collect()
    }

    pub fn run(&self, name: &str, seed: u64) -> Result<Vec<GradCheckReport>> {
        let f = self
            .cases
            .read()
            .expect("suite lock")
            .get(name)
            .map(|(_, f)| f.clone())
            .ok_or_else(|| Error::Unknown {
                what: "gradient case",
                name: name.to_string(),
            })?;
        f(seed)
    }
}

/// Checks `module` (in training mode, fresh fixed-seed RNG per call) with
/// respect to `x` and every trainable weight. Scalar auxiliary weights are set
/// to 0.5 first so that zero-initialized gates do not mask upstream gradients.
pub fn check_module<M: Module<f64>>(name: &str, mut module: M, x: Tensor<f64>, seed: u64) -> Result<GradCheckReport> {
    for (_, p) in module.params_mut() {
        if p.kind() == ParamKind::Auxiliary && p.numel() == 1 {
            p.set_data(vec![0.5])?;
        }
    }
    // Fixed up front: substituting a constant probe makes a weight look frozen.
    let trainable: Vec<usize> = module
        .params()
        .iter()
        .enumerate()
        .filter(|(_, (_, p))| p.is_trainable())
        .map(|(i, _)| i)
        .collect();
    let mut inputs = vec![x];
    let params = module.params();
    inputs.extend(trainable.iter().map(|&i| params[i].1.tensor().detach()));
    drop(params);
    check_gradients(
        name,
        &inputs,
        |ins| {
            let mut all = module.params_mut();
            for (&i, t) in trainable.iter().zip(&ins[1..]) {
                all[i].1.set_tensor(t.clone())?;
            }
            drop(all);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut ctx = ForwardCtx::train(&mut rng);
            ctx.update_norm_stats = false;
            let out = module.forward(&ins[0], &mut ctx)?;
            let mut total = random_projection(&out, seed)?;
            for a in &ctx.aux_losses {
                total = total.add(&a.reshape(&[1])?)?;
            }
            Ok(total)
        },
        GradCheckOptions::default(),
    )
}

fn input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    Tensor::randn(shape, 1.0, &mut rng)
}

fn conv_case(name: &str, cfg: KanConvConfig, x_shape: &[usize], seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conv = KanConv::<f64>::new(cfg, &mut rng)?;
    check_module(name, conv, input(x_shape, seed), seed)
}

fn kagn_conv_case(seed: u64) -> Result<Vec<GradCheckReport>> {
    let g = BasisSpec::gram(3);
    Ok(vec![
        conv_case("kagn_conv", KanConvConfig::new(3, 4, 3, g.clone()), &[2, 3, 6, 6], seed)?,
        conv_case(
            "kagn_conv_grouped_dilated_strided",
            KanConvConfig::new(4, 4, 3, g).with_groups(2).with_dilation(2).with_stride(2),
            &[2, 4, 7, 7],
            seed,
        )?,
    ])
}

fn bottleneck_case(seed: u64) -> Result<Vec<GradCheckReport>> {
    let g = BasisSpec::gram(3);
    Ok(vec![
        conv_case(
            "bottleneck_linear",
            KanConvConfig::new(8, 8, 3, g.clone()).with_bottleneck(4, BottleneckKind::Linear),
            &[2, 8, 5, 5],
            seed,
        )?,
        conv_case(
            "bottleneck_kan",
            KanConvConfig::new(8, 6, 3, g).with_bottleneck(2, BottleneckKind::Kan),
            &[2, 8, 4, 4],
            seed,
        )?,
    ])
}

fn moe_case(seed: u64) -> Result<Vec<GradCheckReport>> {
    let moe = MoEConfig {
        num_experts: 8,
        active_k: 2,
        gate_noise_std: 0.0,
        load_balance_coef: 0.01,
    };
    let cfg = KanConvConfig::new(8, 8, 3, BasisSpec::gram(2))
        .with_bottleneck(2, BottleneckKind::Linear)
        .with_moe(moe);
    Ok(vec![conv_case("moe_bottleneck", cfg, &[4, 8, 4, 4], seed)?])
}

fn attention_case(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SelfKagntentionConfig::new(4, BasisSpec::gram(2)).with_default_bottleneck();
    let m = SelfKagntention::<f64>::new(cfg, &mut rng)?;
    Ok(vec![check_module("self_kagntention", m, input(&[2, 4, 3, 3], seed), seed)?])
}

fn focal_case(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = FocalKagnModulation::<f64>::new(FocalModulationConfig::new(4, BasisSpec::gram(2)), &mut rng)?;
    Ok(vec![check_module("focal_modulation", m, input(&[2, 4, 5, 5], seed), seed)?])
}

fn reg_check(name: &str, reg: PlacementReg, train: bool, seed: u64) -> Result<GradCheckReport> {
    check_gradients(
        name,
        &[input(&[2, 3, 4, 4], seed)],
        |ins| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y = apply_placement_regularizer(&ins[0], &reg, train, &mut rng)?;
            random_projection(&y.tanh(), seed)
        },
        GradCheckOptions::default(),
    )
}

fn noise_eval_case(seed: u64) -> Result<Vec<GradCheckReport>> {
    let noise = PlacementReg {
        kind: RegKind::Noise,
        placement: Placement::Full,
        p: 0.5,
        alpha: 1.0,
    };
    let dropout = PlacementReg {
        kind: RegKind::Dropout,
        ..noise
    };
    let mut v = vec![
        reg_check("noise_eval", noise, false, seed)?,
        reg_check("dropout_eval", dropout, false, seed)?,
    ];
    // The regularizer inside a layer, at each placement, in eval mode.
    for placement in [Placement::Full, Placement::Poly, Placement::Degree] {
        let cfg = KanConvConfig::new(2, 3, 3, BasisSpec::gram(2)).with_regularizer(Some(PlacementReg { placement, ..noise }));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = KanConv::<f64>::new(cfg, &mut rng)?;
        let x = input(&[2, 2, 4, 4], seed);
        v.push(check_gradients(
            &format!("noise_eval_in_layer_{placement:?}").to_lowercase(),
            &[x],
            |ins| {
                let mut c = conv.clone();
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                let mut ctx = ForwardCtx::eval(&mut r);
                random_projection(&c.forward(&ins[0], &mut ctx)?, seed)
            },
            GradCheckOptions::default(),
        )?);
    }
    Ok(v)
}

fn losses_case(seed: u64) -> Result<Vec<GradCheckReport>> {
    let labels = [0usize, 3, 1, 4, 2];
    let logits = input(&[5, 5], seed).scale(2.0);
    let opts = GradCheckOptions::default();
    let mut v = vec![
        check_gradients("cross_entropy", &[logits.clone()], |x| cross_entropy(&x[0], &labels, 0.0), opts)?,
        check_gradients("cross_entropy_smoothed", &[logits.clone()], |x| cross_entropy(&x[0], &labels, 0.18), opts)?,
        check_gradients("focal_gamma2", &[logits.clone()], |x| focal_loss(&x[0], &labels, 2.0), opts)?,
        check_gradients("focal_gamma0", &[logits], |x| focal_loss(&x[0], &labels, 0.0), opts)?,
    ];
    let z = input(&[2, 1, 4, 4], seed + 1);
    let mask = Tensor::new(
        input(&[2, 1, 4, 4], seed + 2).data().iter().map(|&v| f64::from(v > 0.0)).collect(),
        &[2, 1, 4, 4],
    )?;
    v.push(check_gradients("bce_dice", &[z], |x| bce_dice(&x[0].sigmoid(), &mask), opts)?);
    Ok(v)
}

fn bases_case(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut v = Vec::new();
    for (name, b) in [
        ("chebyshev_conv", BasisSpec::chebyshev(3)),
        ("legendre_conv", BasisSpec::legendre(4)),
        ("rbf_conv", BasisSpec::rbf(5)),
    ] {
        v.push(conv_case(name, KanConvConfig::new(2, 3, 3, b), &[2, 2, 4, 4], seed)?);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_case() {
        assert!(matches!(GradSuite::global().run("nope", 0), Err(Error::Unknown { .. })));
        assert!(GradSuite::global().cases().len() >= 8);
    }

    #[test]
    fn losses_pass() {
        for r in GradSuite::global().run("losses", 1).unwrap() {
            assert!(r.passes(GRAD_TOLERANCE), "{r:?}");
        }
    }
}
