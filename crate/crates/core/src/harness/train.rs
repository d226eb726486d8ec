//! Training and evaluation loops.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::harness::config::TrainConfig;
use crate::harness::data::{Batch, BatchTarget, Dataset};
use crate::harness::loss::Loss;
use crate::harness::metrics::{EpochRecord, History, MetricAccumulator};
use crate::harness::optim::{poly_lr, AdamW};
use crate::layers::{ForwardCtx, Module};
use crate::models::Model;
use crate::peft::{apply_peft_plan, PeftPlan};
use crate::regularization::{activation_penalty, weight_penalty};
use crate::tensor::{Real, Tensor};

/// Loss terms of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub task: f64,
    pub activation_penalty: f64,
    pub weight_penalty: f64,
    pub aux: f64,
}

impl StepLosses {
    pub fn penalty(&self) -> f64 {
        self.activation_penalty + self.weight_penalty
    }
}

/// Model plus everything needed to continue training bit-exactly.
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub config: TrainConfig,
    pub optimizer: AdamW,
    /// Single stream for shuffling, augmentation and forward-pass noise.
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub epoch: usize,
    pub history: History,
    /// Plan in force when the model was fine-tuned.
    pub peft: Option<PeftPlan>,
    loss: Box<dyn Loss<T>>,
}

impl<T: Real> Trainer<T> {
    pub fn new(mut model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.loss.is_segmentation() != model.is_segmentation() {
            return Err(Error::Config(format!(
                "loss `{}` does not fit model `{}`",
                config.loss.name(),
                model.spec.name
            )));
        }
        let peft = config.peft.clone();
        if let Some(plan) = &peft {
            apply_peft_plan(&mut model, plan)?;
        }
        Ok(Self::from_parts(model, config, peft))
    }

    pub(crate) fn from_parts(model: Model<T>, config: TrainConfig, peft: Option<PeftPlan>) -> Self {
        Trainer {
            optimizer: AdamW::new(config.optimizer.clone()),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            loss: config.loss.build(config.label_smoothing),
            model,
            config,
            step: 0,
            epoch: 0,
            history: History::default(),
            peft,
        }
    }

    /// Whether the step budget is used up.
    pub fn finished(&self) -> bool {
        self.config.max_steps.is_some_and(|m| self.step >= m)
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.config.batch_size) as u64
    }

    /// Forward pass and loss terms in training mode, without an update.
    pub fn losses(&mut self, batch: &Batch<T>) -> Result<(Tensor<T>, StepLosses)> {
        let reg = self.config.reg.clone();
        let update_stats = self.peft.as_ref().is_none_or(|p| p.update_norm_stats);
        let mut ctx = ForwardCtx::train(&mut self.rng);
        ctx.update_norm_stats = update_stats;
        ctx.collect_activations = reg.wants_activations();
        let out = self.model.forward(&batch.images, &mut ctx)?;
        let task = self.loss.compute(&out, &batch.target)?;
        let act = activation_penalty(&ctx.activations, reg.l1_activation, reg.l2_activation);
        let wp = weight_penalty(&self.model, reg.l1_weight);
        let mut aux = Tensor::<T>::zeros(&[1]);
        for a in &ctx.aux_losses {
            aux = aux.add(&a.reshape(&[1])?)?;
        }
        let total = task.add(&act)?.add(&wp)?.add(&aux)?;
        let f = |t: &Tensor<T>| t.data()[0].as_f64();
        let terms = StepLosses {
            total: f(&total),
            task: f(&task),
            activation_penalty: f(&act),
            weight_penalty: f(&wp),
            aux: f(&aux),
        };
        Ok((total, terms))
    }

    /// One optimizer step on `batch`.
    pub fn train_step(&mut self, batch: &Batch<T>, total_steps: u64) -> Result<StepLosses> {
        let (total, terms) = self.losses(batch)?;
        if !terms.total.is_finite() {
            return Err(Error::NonFinite { step: self.step });
        }
        total.backward()?;
        let lr = poly_lr(self.step, self.config.optimizer.lr, total_steps, &self.config.scheduler);
        self.optimizer.step(self.model.params_mut(), lr)?;
        for (_, p) in self.model.params() {
            p.tensor().zero_grad();
        }
        self.step += 1;
        self.history.step_losses.push(terms.total);
        Ok(terms)
    }

    /// Trains one epoch and evaluates on `eval` when given.
    pub fn train_epoch(&mut self, train: &Dataset, eval: Option<&Dataset>) -> Result<EpochRecord> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total_steps = self.steps_per_epoch(train.len()) * self.config.epochs as u64;
        if let Some(m) = self.config.max_steps {
            total_steps = total_steps.min(m);
        }
        let order = train.epoch_order(true, &mut self.rng);
        let (mut sum, mut task, mut pen, mut aux) = (0.0, 0.0, 0.0, 0.0);
        let mut n = 0usize;
        for idx in order.chunks(self.config.batch_size) {
            if self.finished() {
                break;
            }
            let batch = train.batch::<T>(idx, self.config.hflip, &mut self.rng)?;
            let t = self.train_step(&batch, total_steps)?;
            sum += t.total;
            task += t.task;
            pen += t.penalty();
            aux += t.aux;
            n += 1;
        }
        self.epoch += 1;
        let eval = match eval {
            Some(d) => evaluate(&mut self.model, d, self.config.eval_batch_size)?,
            None => BTreeMap::new(),
        };
        let nf = n.max(1) as f64;
        let rec = EpochRecord {
            epoch: self.epoch,
            step: self.step,
            lr: poly_lr(self.step.saturating_sub(1), self.config.optimizer.lr, total_steps, &self.config.scheduler),
            train_loss: sum / nf,
            task_loss: task / nf,
            penalty: pen / nf,
            aux_loss: aux / nf,
            eval,
        };
        self.history.epochs.push(rec.clone());
        Ok(rec)
    }

    /// Runs the remaining epochs up to `config.epochs`; `on_epoch` sees each record.
    pub fn fit(
        &mut self,
        train: &Dataset,
        eval: Option<&Dataset>,
        mut on_epoch: impl FnMut(&Trainer<T>, &EpochRecord) -> Result<()>,
    ) -> Result<History> {
        while self.epoch < self.config.epochs && !self.finished() {
            let rec = self.train_epoch(train, eval)?;
            on_epoch(self, &rec)?;
        }
        Ok(self.history.clone())
    }
}

/// Eval-mode forward over `data` in fixed order.
pub fn predict<T: Real>(model: &mut Model<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ctx = ForwardCtx::eval(&mut rng);
    model.forward(&batch.detach(), &mut ctx).map(|t| t.detach())
}

/// Top-1/top-5 accuracy or mean per-image IoU/F1, in eval mode.
pub fn evaluate<T: Real>(model: &mut Model<T>, data: &Dataset, batch_size: usize) -> Result<BTreeMap<String, f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc = MetricAccumulator::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let batch = data.batch::<T>(chunk, false, &mut rng)?;
        let out = predict(model, &batch.images)?;
        match &batch.target {
            BatchTarget::Labels(l) => acc.add_classification(out.data(), out.shape()[1], l),
            BatchTarget::Masks(m) => acc.add_segmentation(out.data(), m.data(), data.height * data.width),
        }
    }
    Ok(acc.finish())
}
