//! Mini-batch training with Adam and validation-loss early stopping.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::model::{Model, INFERENCE_BATCH};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::losses::{LossFn, LossKind, ValidationScore};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a strict improvement in validation loss before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Share of the labelled pool held out for validation.
    pub val_fraction: f64,
    pub learning_rate: f64,
    /// Loss the harness builds for single-method runs.
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            seed: 0,
            val_fraction: 0.2,
            learning_rate: 0.001,
            loss: LossKind::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch_size must be at least 1".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::InvalidArgument("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument(
                "max_epochs must be at least 1".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Monitored validation score.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    /// `epoch,train_loss,val_loss` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:?},{:?}\n",
                r.epoch, r.train_loss, r.val_loss
            ));
        }
        out
    }
}

/// Mean loss over a dataset in inference mode.
pub fn evaluate_loss(model: &Model, data: &LabeledDataset, loss_fn: &dyn LossFn) -> Result<f64> {
    evaluate_score(model, data, &AsScore(loss_fn))
}

/// Mean validation score over a dataset in inference mode.
pub fn evaluate_score(
    model: &Model,
    data: &LabeledDataset,
    score: &dyn ValidationScore,
) -> Result<f64> {
    let probs = model.predict_proba(&data.images)?;
    let mut total = 0.0;
    for start in (0..data.len()).step_by(INFERENCE_BATCH) {
        let idx: Vec<usize> = (start..(start + INFERENCE_BATCH).min(data.len())).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        total += score
            .per_sample(&probs.gather(&idx)?, &labels)?
            .iter()
            .sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

struct AsScore<'a>(&'a dyn LossFn);

impl ValidationScore for AsScore<'_> {
    fn per_sample(&self, probs: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
        Ok(self.0.evaluate(probs, labels)?.per_sample)
    }
}

fn check_compatible(model: &Model, data: &LabeledDataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Empty(format!("{what} set is empty")));
    }
    if data.image_shape() != model.input_shape() {
        return Err(Error::Dimension(format!(
            "{what} images are {:?}, model expects {:?}",
            data.image_shape(),
            model.input_shape()
        )));
    }
    if data.n_classes != model.n_classes() {
        return Err(Error::Dimension(format!(
            "{what} set has {} classes, model has {}",
            data.n_classes,
            model.n_classes()
        )));
    }
    Ok(())
}

/// Trains `model` and returns the weights of the epoch with the lowest
/// validation loss.
pub fn train(
    model: Model,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    loss_fn: &dyn LossFn,
    config: &TrainConfig,
) -> Result<(Model, History)> {
    train_with_validation(
        model,
        train_set,
        val_set,
        loss_fn,
        &AsScore(loss_fn),
        config,
    )
}

/// As [`train`], but early stopping monitors `monitor` instead of the
/// training loss.
pub fn train_with_validation(
    mut model: Model,
    train_set: &LabeledDataset,
    val_set: &LabeledDataset,
    loss_fn: &dyn LossFn,
    monitor: &dyn ValidationScore,
    config: &TrainConfig,
) -> Result<(Model, History)> {
    config.validate()?;
    check_compatible(&model, train_set, "training")?;
    check_compatible(&model, val_set, "validation")?;
    let adam_config = AdamConfig {
        alpha: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(model.params(), adam_config);
    let mut history = History::default();
    let mut best_val = f64::INFINITY;
    let mut best_model = model.clone();
    let mut waited = 0;
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 1..=config.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::substream(
            config.seed,
            &[0x6570_6f63_68, epoch as u64],
        ));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = train_set.images.gather(chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let dropout_seed = rng::derive(config.seed, &[epoch as u64, b as u64]);
            let (probs, cache) = model.forward(&x, true, dropout_seed)?;
            let loss = loss_fn.evaluate(&probs, &y)?;
            if !loss.value.is_finite() || !loss.grad_logits.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: loss.value,
                });
            }
            let grads = model.backward(&cache, &loss.grad_logits)?;
            adam.step(&mut model.params_mut(), &grads.params)?;
            total += loss.value * chunk.len() as f64;
        }
        let train_loss = total / n as f64;
        let val_loss = evaluate_score(&model, val_set, monitor)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                value: val_loss,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_model = model.clone();
            history.best_epoch = epoch;
            waited = 0;
        } else {
            waited += 1;
            if waited >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best_model, history))
}
