//! Experiment configuration: model preset, training knobs and data source,
//! stored as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::harness::data::{self, Dataset, Split};
use crate::harness::loss::LossSpec;
use crate::harness::optim::{AdamWConfig, SchedulerConfig};
use crate::models::{
    build_simple_net, build_unet_kagn, build_vgg11_like, vgg_options, Architecture, ModelSpec, NetOptions, VggVariant,
};
use crate::peft::PeftPlan;
use crate::regularization::{Placement, PlacementReg, RegConfig, RegKind};

/// Tuned hyperparameters used as training defaults.
pub mod profile {
    pub const DEGREE: usize = 3;
    pub const LABEL_SMOOTHING: f64 = 0.1823706816166831;
    pub const WEIGHT_DECAY: f64 = 6.579785489783022e-6;
    pub const LR: f64 = 0.000779538356958937;
    pub const LR_POWER: f64 = 1.1275350538654738;
    pub const END_LR: f64 = 1e-7;
    pub const HEAD_DROPOUT: f64 = 0.1456351951990277;
    pub const NOISE_P: f64 = 0.05;
    pub const L1_ACTIVATION: f64 = 1e-7;
    pub const L2_ACTIVATION: f64 = 1e-6;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "one")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: AdamWConfig,
    #[serde(default = "default_scheduler")]
    pub scheduler: SchedulerConfig,
    #[serde(default = "default_smoothing")]
    pub label_smoothing: f64,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default = "default_reg")]
    pub reg: RegConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peft: Option<PeftPlan>,
    /// Random horizontal flips of training images.
    #[serde(default)]
    pub hflip: bool,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    /// Stops training after this many optimizer steps in total.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<u64>,
}

fn one() -> usize {
    1
}
fn default_batch() -> usize {
    32
}
fn default_eval_batch() -> usize {
    256
}
fn default_smoothing() -> f64 {
    profile::LABEL_SMOOTHING
}
fn default_optimizer() -> AdamWConfig {
    AdamWConfig {
        weight_decay: profile::WEIGHT_DECAY,
        ..AdamWConfig::new(profile::LR)
    }
}
fn default_scheduler() -> SchedulerConfig {
    SchedulerConfig {
        warmup_steps: 0,
        power: profile::LR_POWER,
        end_lr: profile::END_LR,
    }
}
fn default_reg() -> RegConfig {
    RegConfig {
        placement: Some(PlacementReg {
            kind: RegKind::Noise,
            placement: Placement::Full,
            p: profile::NOISE_P,
            alpha: 1.0,
        }),
        l1_activation: profile::L1_ACTIVATION,
        l2_activation: profile::L2_ACTIVATION,
        l1_weight: 0.0,
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: default_batch(),
            seed: 0,
            optimizer: default_optimizer(),
            scheduler: default_scheduler(),
            label_smoothing: default_smoothing(),
            loss: LossSpec::default(),
            reg: default_reg(),
            peft: None,
            hflip: false,
            eval_batch_size: default_eval_batch(),
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.reg.validate()?;
        if let Some(p) = &self.peft {
            p.validate()?;
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0, 1)",
                self.label_smoothing
            )));
        }
        if self.scheduler.power < 0.0 || self.scheduler.end_lr < 0.0 {
            return Err(Error::Config("scheduler power and end_lr must be non-negative".into()));
        }
        if let LossSpec::Focal { gamma } = self.loss {
            if gamma < 0.0 {
                return Err(Error::Config(format!("focal gamma {gamma} must be non-negative")));
            }
        }
        Ok(())
    }
}

fn default_depth_levels() -> usize {
    4
}

fn default_unet_basis() -> BasisSpec {
    BasisSpec::gram(profile::DEGREE)
}

/// Model source: a named builder with its knobs, or an explicit spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ModelConfig {
    /// 4- or 8-layer KAN conv stack.
    Simple {
        depth: usize,
        channels: Vec<usize>,
        #[serde(default)]
        options: NetOptions,
    },
    Vgg11 {
        variant: VggVariant,
        #[serde(default)]
        bottleneck: bool,
        #[serde(default)]
        self_attention: bool,
        #[serde(default = "vgg_options")]
        options: NetOptions,
    },
    Unet {
        #[serde(default = "unit")]
        width_scale: f64,
        #[serde(default = "default_depth_levels")]
        depth_levels: usize,
        #[serde(default = "one")]
        in_channels: usize,
        #[serde(default = "default_unet_basis")]
        basis: BasisSpec,
    },
    Spec {
        spec: ModelSpec,
    },
}

fn unit() -> f64 {
    1.0
}

impl ModelConfig {
    /// Builds the spec. A placement regularizer from the training config is
    /// attached to every KAN convolution of preset models.
    pub fn to_spec(&self, reg: Option<PlacementReg>) -> Result<ModelSpec> {
        match self {
            ModelConfig::Simple {
                depth,
                channels,
                options,
            } => build_simple_net(*depth, channels, &with_reg(options, reg)),
            ModelConfig::Vgg11 {
                variant,
                bottleneck,
                self_attention,
                options,
            } => build_vgg11_like(*variant, *bottleneck, *self_attention, &with_reg(options, reg)),
            ModelConfig::Unet {
                width_scale,
                depth_levels,
                in_channels,
                basis,
            } => {
                let mut spec = build_unet_kagn(*width_scale, *depth_levels, *in_channels, basis.clone())?;
                if let Architecture::Unet(u) = &mut spec.architecture {
                    u.regularizer = reg;
                }
                Ok(spec)
            }
            ModelConfig::Spec { spec } => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

fn with_reg(o: &NetOptions, reg: Option<PlacementReg>) -> NetOptions {
    let mut o = o.clone();
    if o.regularizer.is_none() {
        o.regularizer = reg;
    }
    o
}

/// Where training and evaluation samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dataset", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Mnist {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    Cifar10 {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    SynthShapes {
        #[serde(default = "default_synth_train")]
        train: usize,
        #[serde(default = "default_synth_test")]
        test: usize,
        #[serde(default = "default_synth_size")]
        size: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_synth_train() -> usize {
    500
}
fn default_synth_test() -> usize {
    100
}
fn default_synth_size() -> usize {
    32
}

impl DataConfig {
    /// Loads `(train, test)`. `override_dir` takes precedence over the
    /// configured path, which takes precedence over the default data directory.
    pub fn load(&self, override_dir: Option<&Path>) -> Result<(Dataset, Dataset)> {
        let limit = |d: Dataset, l: &Option<usize>| match l {
            Some(n) => d.take(*n),
            None => d,
        };
        match self {
            DataConfig::Mnist {
                path,
                train_limit,
                test_limit,
            } => {
                let dir = resolve(override_dir, path, "mnist");
                Ok((
                    limit(data::load_mnist(&dir, Split::Train)?, train_limit),
                    limit(data::load_mnist(&dir, Split::Test)?, test_limit),
                ))
            }
            DataConfig::Cifar10 {
                path,
                train_limit,
                test_limit,
            } => {
                let dir = resolve(override_dir, path, "cifar10");
                Ok((
                    limit(data::load_cifar_dir(&dir, Split::Train)?, train_limit),
                    limit(data::load_cifar_dir(&dir, Split::Test)?, test_limit),
                ))
            }
            DataConfig::SynthShapes { train, test, size, seed } => {
                let all = data::synth_shapes(train + test, *size, *seed);
                Ok((all.slice(0, *train), all.slice(*train, *test)))
            }
        }
    }
}

fn resolve(override_dir: Option<&Path>, path: &Option<PathBuf>, sub: &str) -> PathBuf {
    match (override_dir, path) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(p)) => p.clone(),
        (None, None) => data::default_data_dir().join(sub),
    }
}

/// A full experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text)?;
        c.train.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model.to_spec(self.train.reg.placement)
    }

    /// Reduced-width 4-layer MNIST classifier with the default profile.
    pub fn mnist_small() -> Self {
        ExperimentConfig {
            model: ModelConfig::Simple {
                depth: 4,
                channels: vec![8, 16, 32, 64],
                options: NetOptions::default(),
            },
            train: TrainConfig {
                epochs: 2,
                ..TrainConfig::default()
            },
            data: DataConfig::Mnist {
                path: None,
                train_limit: None,
                test_limit: None,
            },
        }
    }

    /// Width-1 U-Net on synthetic shapes with BCE + Dice.
    pub fn shapes_unet() -> Self {
        ExperimentConfig {
            model: ModelConfig::Unet {
                width_scale: 1.0,
                depth_levels: 4,
                in_channels: 1,
                basis: BasisSpec::gram(profile::DEGREE),
            },
            train: TrainConfig {
                epochs: 10,
                batch_size: 8,
                loss: LossSpec::BceDice,
                label_smoothing: 0.0,
                reg: RegConfig::default(),
                optimizer: AdamWConfig {
                    weight_decay: profile::WEIGHT_DECAY,
                    ..AdamWConfig::new(3e-3)
                },
                ..TrainConfig::default()
            },
            data: DataConfig::SynthShapes {
                train: 500,
                test: 100,
                size: 32,
                seed: 0,
            },
        }
    }
}
