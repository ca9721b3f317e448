use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, Metrics};
use super::optim::{Adam, OptimizerKind};
use crate::bagdata::{collate, Bag};
use crate::error::{MilError, Result};
use crate::models::MilModel;
use crate::nn::tape::{bce_with_logits, sigmoid};
use crate::nn::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// Keep the parameters of the epoch with the highest validation AUROC
    /// (earliest epoch on ties).
    #[default]
    BestValAuroc,
    /// Keep the parameters after the final epoch.
    Last,
}

fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    1
}
fn default_lr() -> f64 {
    1e-4
}
fn default_val_fraction() -> f64 {
    0.2
}
fn default_device() -> String {
    "cpu".into()
}

/// Training hyperparameters. Defaults: 50 epochs, batch size 1, Adam with
/// learning rate 1e-4, no schedule, no weight decay, no clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub checkpoint_policy: CheckpointPolicy,
    #[serde(default = "default_device")]
    pub device: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_lr(),
            optimizer: OptimizerKind::Adam,
            seed: 0,
            val_fraction: default_val_fraction(),
            checkpoint_policy: CheckpointPolicy::default(),
            device: default_device(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(MilError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("`epochs` must be positive");
        }
        if self.batch_size == 0 {
            return bad("`batch_size` must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("`learning_rate` must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("`val_fraction` must lie in (0, 1)");
        }
        if self.device != "cpu" {
            return Err(MilError::InvalidConfig(format!(
                "unsupported device `{}`; only `cpu` is available",
                self.device
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0-based.
    pub epoch: usize,
    /// Optimizer steps taken in this epoch.
    pub steps: usize,
    /// Mean training loss over the epoch's steps.
    pub train_loss: f64,
    pub val: Option<Metrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub selected_epoch: usize,
    pub total_steps: usize,
}

/// Trains `model` in place.
///
/// Each epoch visits the training bags in an order shuffled by a generator
/// seeded with `seed + epoch`, in batches of `batch_size`. Validation
/// metrics are computed after every epoch when `val` is nonempty. On return
/// the model holds the parameters chosen by the checkpoint policy, rounded
/// to float32 so that it matches a saved checkpoint exactly.
pub fn train(
    model: &mut dyn MilModel,
    train: &[Bag],
    val: &[Bag],
    cfg: &RunConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(MilError::EmptyData("no training bags".into()));
    }
    if cfg.checkpoint_policy == CheckpointPolicy::BestValAuroc && val.is_empty() {
        return Err(MilError::InvalidConfig(
            "checkpoint policy best_val_auroc needs validation bags".into(),
        ));
    }
    let OptimizerKind::Adam = cfg.optimizer;
    let mut opt = Adam::new(model.params(), cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut total_steps = 0;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let bags: Vec<Bag> = chunk.iter().map(|&i| train[i].clone()).collect();
            let batch = collate(&bags)?;
            let (loss, grads) = model.loss_and_grads(&batch)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(MilError::Divergence {
                    epoch,
                    step: steps,
                    loss,
                });
            }
            opt.step(model.params_mut(), &grads);
            loss_sum += loss;
            steps += 1;
        }
        total_steps += steps;
        let val_metrics = if val.is_empty() {
            None
        } else {
            Some(evaluate(&*model, val)?)
        };
        if let (CheckpointPolicy::BestValAuroc, Some(m)) = (cfg.checkpoint_policy, &val_metrics) {
            if best.as_ref().is_none_or(|(a, _, _)| m.auroc > *a) {
                best = Some((m.auroc, epoch, model.params().clone()));
            }
        }
        history.push(EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / steps as f64,
            val: val_metrics,
        });
    }

    let selected_epoch = match best {
        Some((_, epoch, params)) => {
            *model.params_mut() = params;
            epoch
        }
        None => cfg.epochs - 1,
    };
    model.params_mut().round_to_f32();
    Ok(TrainHistory {
        epochs: history,
        selected_epoch,
        total_steps,
    })
}

/// Bag probabilities, one per bag, computed bag by bag in parallel.
pub fn predict_probs(model: &dyn MilModel, bags: &[Bag]) -> Result<Vec<f64>> {
    Ok(predict_logits(model, bags)?
        .into_iter()
        .map(sigmoid)
        .collect())
}

fn predict_logits(model: &dyn MilModel, bags: &[Bag]) -> Result<Vec<f64>> {
    bags.par_iter()
        .map(|bag| Ok(model.forward(&collate(std::slice::from_ref(bag))?)?[0]))
        .collect()
}

/// ACC/F1 at probability 0.5, rank AUROC, and mean BCE over `bags`.
pub fn evaluate(model: &dyn MilModel, bags: &[Bag]) -> Result<Metrics> {
    if bags.is_empty() {
        return Err(MilError::EmptyData("no bags to evaluate".into()));
    }
    let logits = predict_logits(model, bags)?;
    let labels: Vec<u8> = bags.iter().map(Bag::label).collect();
    let loss = logits
        .iter()
        .zip(&labels)
        .map(|(&z, &y)| bce_with_logits(z, y as f64))
        .sum::<f64>()
        / bags.len() as f64;
    let probs: Vec<f64> = logits.into_iter().map(sigmoid).collect();
    compute_metrics(&probs, &labels, loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelConfig};
    use ndarray::Array2;

    fn toy_bags() -> Vec<Bag> {
        (0..6)
            .map(|i| {
                let y = (i % 2) as u8;
                let f = Array2::from_shape_fn((3, 2), |(r, c)| (r + c) as f32 * 0.1 + y as f32);
                Bag::new(format!("b{i}"), f, y).unwrap()
            })
            .collect()
    }

    #[test]
    fn defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.epochs, c.batch_size, c.learning_rate), (50, 1, 1e-4));
    }

    #[test]
    fn one_epoch_three_bags_three_steps() {
        let bags = toy_bags();
        let mut m = build_model(&ModelConfig::new("ABMIL", 2), 0).unwrap();
        let cfg = RunConfig {
            epochs: 1,
            checkpoint_policy: CheckpointPolicy::Last,
            ..Default::default()
        };
        let h = train(&mut *m, &bags[..3], &[], &cfg).unwrap();
        assert_eq!(h.total_steps, 3);
        assert_eq!(h.epochs[0].steps, 3);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let mut m = build_model(&ModelConfig::new("ABMIL", 2), 0).unwrap();
        let cfg = RunConfig::default();
        assert!(matches!(
            train(&mut *m, &[], &toy_bags(), &cfg),
            Err(MilError::EmptyData(_))
        ));
    }

    #[test]
    fn overflowing_updates_diverge() {
        let mut bags = toy_bags();
        bags[0] = Bag::new("big", Array2::from_elem((2, 2), 1e30f32), 1).unwrap();
        let mut m = build_model(&ModelConfig::new("MeanPoolMIL", 2), 0).unwrap();
        let cfg = RunConfig {
            epochs: 2,
            learning_rate: 1e300,
            ..Default::default()
        };
        let err = train(&mut *m, &bags, &toy_bags(), &cfg).unwrap_err();
        assert!(
            err.to_string()
                .starts_with("divergence detected at epoch 0"),
            "{err}"
        );
    }
}
