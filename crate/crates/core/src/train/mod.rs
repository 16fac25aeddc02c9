//! Training loop, evaluation, and the CSV records both produce.

mod loss;
mod optim;
mod records;
#[cfg(test)]
mod tests;

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

pub use loss::{cross_entropy_loss, one_hot, rmse_loss, LossKind};
pub use optim::{AdamW, AdamWConfig};
pub use records::{
    confusion_csv, history_csv, read_confusion, write_confusion, write_history, write_timing,
    CONFUSION_HEADER, HISTORY_HEADER,
};

use crate::autodiff::Tape;
use crate::data::{make_batches, Dataset};
use crate::error::{Error, Result};
use crate::kernels::Exec;
use crate::metrics::ConfusionMatrix;
use crate::model::{InputNorm, Model};
use crate::nn::{predictions, BatchNorm2d, Ctx, Mode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// `lr_e = max_lr/2 · (1 + cos(π·e/E))` for epoch `e` of `E`.
    Cosine,
    Constant,
}

impl Schedule {
    pub fn as_str(self) -> &'static str {
        match self {
            Schedule::Cosine => "cosine",
            Schedule::Constant => "constant",
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Schedule::Cosine),
            "constant" => Ok(Schedule::Constant),
            other => Err(Error::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub max_lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub schedule: Schedule,
    /// Length of the linear ramp from 0 at the start of training, in
    /// epochs; may be fractional. Applied per batch on top of `schedule`.
    pub warmup_epochs: f64,
    pub loss: LossKind,
    /// Batch size as a fraction of the training set.
    pub batch_fraction: f64,
    pub bn_momentum: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            max_lr: 2e-3,
            weight_decay: 0.05,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            schedule: Schedule::Cosine,
            warmup_epochs: 0.0,
            loss: LossKind::Rmse,
            batch_fraction: 0.01,
            bn_momentum: 0.1,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub const KEYS: [&'static str; 12] = [
        "max_lr",
        "weight_decay",
        "epochs",
        "beta1",
        "beta2",
        "adam_eps",
        "schedule",
        "warmup_epochs",
        "loss",
        "batch_fraction",
        "bn_momentum",
        "seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let bad = || Error::Config(format!("invalid value `{value}` for `{key}`"));
        let real = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "max_lr" => self.max_lr = real()?,
            "weight_decay" => self.weight_decay = real()?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad())?,
            "beta1" => self.beta1 = real()?,
            "beta2" => self.beta2 = real()?,
            "adam_eps" => self.adam_eps = real()?,
            "schedule" => self.schedule = value.parse()?,
            "warmup_epochs" => self.warmup_epochs = real()?,
            "loss" => self.loss = value.parse()?,
            "batch_fraction" => self.batch_fraction = real()?,
            "bn_momentum" => self.bn_momentum = real()?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.max_lr > 0.0) || self.weight_decay < 0.0 || !(self.adam_eps > 0.0) {
            return Err(Error::Config(
                "max_lr and adam_eps must be positive, weight_decay non-negative".into(),
            ));
        }
        if !open_unit(self.beta1) || !open_unit(self.beta2) {
            return Err(Error::Config("betas must lie in (0, 1)".into()));
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return Err(Error::Config("batch_fraction must lie in (0, 1]".into()));
        }
        if !(self.warmup_epochs >= 0.0 && self.warmup_epochs.is_finite()) {
            return Err(Error::Config(
                "warmup_epochs must be finite and non-negative".into(),
            ));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(Error::Config("bn_momentum must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let values = [
            self.max_lr.to_string(),
            self.weight_decay.to_string(),
            self.epochs.to_string(),
            self.beta1.to_string(),
            self.beta2.to_string(),
            self.adam_eps.to_string(),
            self.schedule.as_str().to_string(),
            self.warmup_epochs.to_string(),
            self.loss.as_str().to_string(),
            self.batch_fraction.to_string(),
            self.bn_momentum.to_string(),
            self.seed.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.max_lr,
            Schedule::Cosine => {
                let e = self.epochs.max(1) as f64;
                0.5 * self.max_lr * (1.0 + (std::f64::consts::PI * epoch as f64 / e).cos())
            }
        }
    }

    /// Rate for batch `step` (0-based) of `steps` in `epoch`.
    pub fn lr_at_step(&self, epoch: usize, step: usize, steps: usize) -> f64 {
        let lr = self.lr_at(epoch);
        if self.warmup_epochs <= 0.0 {
            return lr;
        }
        let progress =
            (epoch as f64 + (step + 1) as f64 / steps.max(1) as f64) / self.warmup_epochs;
        lr * progress.min(1.0)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One row of `history.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Rate used for the epoch's last batch.
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Snapshot with the highest test accuracy (earliest on ties), or the
    /// final model when test accuracy is not tracked.
    pub best: Model<f32>,
    /// 0 when no epoch ran.
    pub best_epoch: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub exec: Exec,
    /// Skips test evaluation (test accuracy reported as NaN) for speed.
    pub evaluate_each_epoch: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            exec: Exec::auto(),
            evaluate_each_epoch: true,
        }
    }
}

/// Trains `model` in place: one AdamW step per batch, per-epoch learning
/// rate, fresh batch shuffle per epoch. Input standardization statistics
/// are taken from `train_set` before the first step.
pub fn train(
    model: &mut Model<f32>,
    train_set: &Dataset,
    test_set: &Dataset,
    hp: &Hyperparams,
    opts: TrainOptions,
) -> Result<TrainOutcome> {
    hp.validate()?;
    check_compatible(model, train_set)?;
    check_compatible(model, test_set)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut history = Vec::with_capacity(hp.epochs);
    if hp.epochs == 0 {
        return Ok(TrainOutcome {
            history,
            best,
            best_epoch,
        });
    }
    if model.config().input_norm == InputNorm::Dataset {
        let (mean, std) = train_set.channel_stats()?;
        model.set_input_stats(&mean, &std)?;
    }
    let adam = hp.adamw();
    let mut optimizer = AdamW::new();
    for epoch in 0..hp.epochs {
        let start = Instant::now();
        let mut lr = hp.lr_at(epoch);
        let batches = make_batches(train_set.len(), hp.batch_fraction, hp.seed, epoch as u64)?;
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, indices) in batches.iter().enumerate() {
            lr = hp.lr_at_step(epoch, b, batches.len());
            let (x, labels) = train_set.batch(indices)?;
            let tape = Tape::with_exec(opts.exec);
            let ctx = Ctx::bind(&tape, &model.params, Mode::Train, true);
            let probs = model.arch.forward(&ctx, tape.constant(x))?;
            let loss = hp.loss.apply(probs, &labels)?;
            let loss_value = loss.value().item()?;
            if !loss_value.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss {loss_value} at epoch {}, batch {}",
                    epoch + 1,
                    b + 1
                )));
            }
            let preds = predictions(probs.value().data(), model.config().classes);
            correct += preds.iter().zip(&labels).filter(|(p, l)| p == l).count();
            loss_sum += loss_value as f64 * labels.len() as f64;
            let grads = tape.backward(loss)?;
            let grads = ctx.param_grads(&grads);
            optimizer
                .step(&mut model.params, &grads, lr, &adam)
                .map_err(|e| match e {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("{msg} (epoch {}, batch {})", epoch + 1, b + 1))
                    }
                    other => other,
                })?;
            for stats in ctx.take_bn_stats() {
                BatchNorm2d::update_running(&mut model.params, &stats, hp.bn_momentum)?;
            }
        }
        let n = train_set.len() as f64;
        let test_acc = if opts.evaluate_each_epoch {
            evaluate_accuracy(model, test_set, opts.exec)?
        } else {
            f64::NAN
        };
        if test_acc.is_nan() || test_acc > best_acc {
            best_acc = test_acc;
            best = model.clone();
            best_epoch = epoch + 1;
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            test_acc,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}/{}: lr {:.3e} loss {:.4} train {:.4} test {:.4}",
            record.epoch,
            hp.epochs,
            record.lr,
            record.train_loss,
            record.train_acc,
            record.test_acc
        );
        history.push(record);
    }
    Ok(TrainOutcome {
        history,
        best,
        best_epoch,
    })
}

fn check_compatible(model: &Model<f32>, ds: &Dataset) -> Result<()> {
    let cfg = model.config();
    if ds.num_classes() != cfg.classes {
        return Err(Error::Dataset(format!(
            "dataset has {} classes but the model predicts {}",
            ds.num_classes(),
            cfg.classes
        )));
    }
    if ds.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    if let Some(c) = ds.channels() {
        if c != cfg.channels {
            return Err(Error::Dataset(format!(
                "images have {c} channels, model expects {}",
                cfg.channels
            )));
        }
    }
    Ok(())
}

/// Images per forward pass during evaluation.
pub const EVAL_BATCH: usize = 64;

/// Predicted class per item, in dataset order.
pub fn predict_all(model: &Model<f32>, ds: &Dataset, exec: Exec) -> Result<Vec<usize>> {
    check_compatible(model, ds)?;
    let mut out = Vec::with_capacity(ds.len());
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, _) = ds.batch(chunk)?;
        let probs = model.predict(&x, exec)?;
        out.extend(predictions(probs.data(), model.config().classes));
    }
    Ok(out)
}

/// Confusion matrix of eval-mode argmax predictions.
pub fn evaluate(model: &Model<f32>, ds: &Dataset, exec: Exec) -> Result<ConfusionMatrix> {
    let preds = predict_all(model, ds, exec)?;
    let labels: Vec<usize> = ds.items.iter().map(|i| i.label).collect();
    ConfusionMatrix::tally(&labels, &preds)
}

/// Fraction of items classified correctly (all classes).
pub fn evaluate_accuracy(model: &Model<f32>, ds: &Dataset, exec: Exec) -> Result<f64> {
    let preds = predict_all(model, ds, exec)?;
    let correct = ds
        .items
        .iter()
        .zip(&preds)
        .filter(|(i, &p)| i.label == p)
        .count();
    Ok(correct as f64 / ds.len() as f64)
}
