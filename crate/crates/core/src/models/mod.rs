//! The [`MilModel`] interface and the reference models.
//!
//! A model only has to implement [`MilModel::forward_bag`], which maps one
//! padded bag to a bag logit and per-instance scores on a [`Tape`]. Batched
//! forward, loss, gradients and prediction are provided on top of it, so
//! every model shares the same masking and loss semantics.
//!
//! Instance scores are attention weights for the attention models and
//! per-instance classifier logits for the pooling baselines.

mod attention_models;
mod checkpoint;
mod config;
mod pooling;

use std::collections::BTreeMap;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bagdata::{Adjacency, Batch};
use crate::error::{MilError, Result};
use crate::nn::{Mat, ParamStore, Tape, Var};

pub use attention_models::{AttentionMil, Backbone};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_META};
pub use config::{
    ModelConfig, ModelKind, SmAttachment, SmConfig, DEFAULT_ATTENTION_WIDTH, DEFAULT_EMBED_DIM,
    DEFAULT_ENCODER_LAYERS, DEFAULT_GRAPH_LAYERS, DEFAULT_HEADS, DEFAULT_MLP_WIDTH,
};
pub use pooling::{MaxPoolMil, MeanPoolMil};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceScoreKind {
    AttentionWeights,
    InstanceLogits,
}

/// One padded bag as seen by a model.
pub struct BagInput<'a> {
    /// `Nmax×D` features.
    pub x: Var,
    /// Length `Nmax`; real instances form a prefix.
    pub mask: &'a [bool],
    /// Graph over the real instances only.
    pub adjacency: Option<&'a Adjacency>,
}

impl BagInput<'_> {
    pub fn padded_len(&self) -> usize {
        self.mask.len()
    }

    pub fn adjacency_or_err(&self, model: &str) -> Result<&Adjacency> {
        self.adjacency
            .ok_or_else(|| MilError::MissingAdjacency(model.to_string()))
    }
}

pub struct BagOutput {
    /// `1×1`
    pub logit: Var,
    /// `1×Nmax`; values at padded positions are ignored.
    pub instance_scores: Var,
}

/// Unified interface for MIL models with a single-logit binary head.
pub trait MilModel: Send + Sync {
    /// Resolved configuration (all defaults filled in).
    fn config(&self) -> &ModelConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn instance_score_kind(&self) -> InstanceScoreKind;

    fn requires_adjacency(&self) -> bool {
        false
    }

    fn forward_bag(&self, tape: &mut Tape, input: &BagInput) -> Result<BagOutput>;

    fn name(&self) -> &str {
        &self.config().model_name
    }

    fn in_dim(&self) -> usize {
        self.config().in_dim
    }

    /// Records the whole batch on `tape`; returns per-bag outputs.
    fn forward_tape(&self, tape: &mut Tape, batch: &Batch) -> Result<Vec<BagOutput>> {
        if batch.is_empty() {
            return Err(MilError::EmptyBatch);
        }
        if batch.dim() != self.in_dim() {
            return Err(MilError::Shape(format!(
                "feature dimension mismatch: model {} expects {}, batch has {}",
                self.name(),
                self.in_dim(),
                batch.dim()
            )));
        }
        if self.requires_adjacency() && batch.adjacency.is_none() {
            return Err(MilError::MissingAdjacency(self.name().to_string()));
        }
        let mut out = Vec::with_capacity(batch.len());
        for b in 0..batch.len() {
            let x = tape.leaf(batch.features.slice(s![b, .., ..]).mapv(f64::from));
            let mask = batch.mask_row(b);
            let input = BagInput {
                x,
                mask: &mask,
                adjacency: batch.adjacency.as_ref().map(|a| &a[b]),
            };
            out.push(self.forward_bag(tape, &input)?);
        }
        Ok(out)
    }

    /// Bag logits, one per bag.
    fn forward(&self, batch: &Batch) -> Result<Vec<f64>> {
        Ok(self.forward_with_attention(batch)?.0)
    }

    /// Bag logits and `B×Nmax` instance scores, zero at padded positions.
    fn forward_with_attention(&self, batch: &Batch) -> Result<(Vec<f64>, Array2<f64>)> {
        let mut tape = Tape::new();
        let outs = self.forward_tape(&mut tape, batch)?;
        let mut scores = Array2::zeros((batch.len(), batch.max_len()));
        let mut logits = Vec::with_capacity(outs.len());
        for (b, o) in outs.iter().enumerate() {
            logits.push(tape.scalar(o.logit));
            let s = tape.value(o.instance_scores);
            for (j, &m) in batch.mask.row(b).iter().enumerate() {
                if m {
                    scores[[b, j]] = s[[0, j]];
                }
            }
        }
        Ok((logits, scores))
    }

    /// Mean binary cross-entropy with logits over the batch.
    fn compute_loss(&self, batch: &Batch) -> Result<(f64, BTreeMap<String, f64>)> {
        let mut tape = Tape::new();
        let loss = self.loss_on_tape(&mut tape, batch)?;
        let value = tape.scalar(loss);
        Ok((value, BTreeMap::from([("BCE".to_string(), value)])))
    }

    fn loss_on_tape(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        if batch.labels.len() != batch.len() {
            return Err(MilError::MissingLabels);
        }
        let outs = self.forward_tape(tape, batch)?;
        let logits: Vec<Var> = outs.iter().map(|o| o.logit).collect();
        let stacked = if logits.len() == 1 {
            logits[0]
        } else {
            tape.concat_rows(&logits)
        };
        let targets: Vec<f64> = batch.labels.iter().map(|&y| y as f64).collect();
        Ok(tape.bce_with_logits(stacked, &targets))
    }

    /// Loss and its gradient with respect to every parameter, in store order.
    fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, Vec<Mat>)> {
        let mut tape = Tape::new();
        let loss = self.loss_on_tape(&mut tape, batch)?;
        let grads = tape.backward(loss);
        Ok((tape.scalar(loss), tape.param_grads(&grads, self.params())))
    }

    /// Bag probabilities `σ(logit)` and instance scores.
    fn predict(&self, batch: &Batch) -> Result<(Vec<f64>, Array2<f64>)> {
        let (logits, scores) = self.forward_with_attention(batch)?;
        Ok((
            logits.into_iter().map(crate::nn::tape::sigmoid).collect(),
            scores,
        ))
    }
}

/// Builds a model with parameters drawn from a generator seeded by `seed`.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Box<dyn MilModel>> {
    let config = config.resolved()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model: Box<dyn MilModel> = match config.kind()? {
        ModelKind::MeanPool => Box::new(MeanPoolMil::new(config, &mut rng)),
        ModelKind::MaxPool => Box::new(MaxPoolMil::new(config, &mut rng)),
        _ => Box::new(AttentionMil::new(config, &mut rng)?),
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bagdata::{collate, Bag};
    use ndarray::array;

    #[test]
    fn abmil_single_instance_logit_is_finite() {
        let m = build_model(&ModelConfig::new("ABMIL", 3), 0).unwrap();
        let bag = Bag::new("a", array![[0.1f32, -0.2, 0.3]], 1).unwrap();
        let logits = m.forward(&collate(&[bag]).unwrap()).unwrap();
        assert_eq!(logits.len(), 1);
        assert!(logits[0].is_finite());
    }

    #[test]
    fn unknown_model_name() {
        let err = build_model(&ModelConfig::new("FooMIL", 3), 0)
            .err()
            .unwrap();
        assert!(matches!(err, MilError::UnknownModel { .. }));
    }

    #[test]
    fn same_seed_same_parameters() {
        let c = ModelConfig::new("TransformerABMIL", 4);
        let a = build_model(&c, 9).unwrap();
        let b = build_model(&c, 9).unwrap();
        assert_eq!(a.params(), b.params());
        let other = build_model(&c, 10).unwrap();
        assert_ne!(a.params(), other.params());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = build_model(&ModelConfig::new("MeanPoolMIL", 3), 0).unwrap();
        let bag = Bag::new("a", array![[0.1f32, -0.2]], 1).unwrap();
        let err = m
            .forward(&collate(&[bag]).unwrap())
            .unwrap_err()
            .to_string();
        assert!(err.contains('3') && err.contains('2'), "{err}");
    }

    #[test]
    fn graph_models_need_adjacency() {
        for name in ["GraphABMIL", "SmABMIL", "SmTransformerABMIL"] {
            let m = build_model(&ModelConfig::new(name, 2), 0).unwrap();
            let bag = Bag::new("a", array![[0.1f32, -0.2]], 1).unwrap();
            let err = m.forward(&collate(&[bag]).unwrap()).unwrap_err();
            assert!(matches!(err, MilError::MissingAdjacency(_)), "{name}");
        }
    }

    #[test]
    fn loss_of_zero_logit_is_ln2() {
        let mut tape = Tape::new();
        let x = tape.leaf(array![[0.0]]);
        let l = tape.bce_with_logits(x, &[1.0]);
        assert!((tape.scalar(l) - std::f64::consts::LN_2).abs() < 1e-12);
        let mut tape = Tape::new();
        let x = tape.leaf(array![[20.0]]);
        let l = tape.bce_with_logits(x, &[1.0]);
        assert!(tape.scalar(l) < 1e-8);
    }
}
