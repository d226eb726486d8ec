//! Datasets, losses, optimizer, metrics, checkpoints, and the training loop.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod gradsuite;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod train;

pub use checkpoint::{load_model, save_checkpoint, Checkpoint};
pub use config::{DataConfig, ExperimentConfig, ModelConfig, TrainConfig};
pub use data::{synth_shapes, Batch, BatchTarget, Dataset, Split, Targets};
pub use gradsuite::{GradSuite, GRAD_TOLERANCE};
pub use loss::{bce_dice, cross_entropy, focal_loss, Loss, LossSpec};
pub use metrics::{EpochRecord, History};
pub use optim::{poly_lr, AdamW, AdamWConfig, SchedulerConfig};
pub use train::{evaluate, predict, StepLosses, Trainer};
