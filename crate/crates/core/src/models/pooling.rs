use rand::Rng;

use super::{BagInput, BagOutput, InstanceScoreKind, MilModel, ModelConfig};
use crate::error::Result;
use crate::nn::{Linear, ParamStore, Tape};

/// `classifier(mean of ReLU(embed(xᵢ)) over real instances)`.
///
/// Instance scores are `classifier(ReLU(embed(xᵢ)))`; the classifier is
/// affine, so their mean over real instances equals the bag logit.
pub struct MeanPoolMil {
    config: ModelConfig,
    store: ParamStore,
    embed: Linear,
    classifier: Linear,
}

impl MeanPoolMil {
    pub(crate) fn new(config: ModelConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let e = config.embed_dim.unwrap();
        let embed = Linear::new(&mut store, "embed", config.in_dim, e, true, rng);
        let classifier = Linear::new(&mut store, "classifier", e, 1, true, rng);
        MeanPoolMil {
            config,
            store,
            embed,
            classifier,
        }
    }
}

impl MilModel for MeanPoolMil {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn instance_score_kind(&self) -> InstanceScoreKind {
        InstanceScoreKind::InstanceLogits
    }

    fn forward_bag(&self, tape: &mut Tape, input: &BagInput) -> Result<BagOutput> {
        let h = self.embed.forward(tape, &self.store, input.x);
        let h = tape.relu(h);
        let z = tape.masked_mean_rows(h, input.mask)?;
        let logit = self.classifier.forward(tape, &self.store, z);
        let inst = self.classifier.forward(tape, &self.store, h);
        let instance_scores = tape.transpose(inst);
        Ok(BagOutput {
            logit,
            instance_scores,
        })
    }
}

/// Max over real instances of `classifier(ReLU(embed(xᵢ)))`.
///
/// Pooling happens on the per-instance logits, so the instance with the
/// highest score is exactly the one that sets the bag logit.
pub struct MaxPoolMil {
    config: ModelConfig,
    store: ParamStore,
    embed: Linear,
    classifier: Linear,
}

impl MaxPoolMil {
    pub(crate) fn new(config: ModelConfig, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new();
        let e = config.embed_dim.unwrap();
        let embed = Linear::new(&mut store, "embed", config.in_dim, e, true, rng);
        let classifier = Linear::new(&mut store, "classifier", e, 1, true, rng);
        MaxPoolMil {
            config,
            store,
            embed,
            classifier,
        }
    }
}

impl MilModel for MaxPoolMil {
    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn instance_score_kind(&self) -> InstanceScoreKind {
        InstanceScoreKind::InstanceLogits
    }

    fn forward_bag(&self, tape: &mut Tape, input: &BagInput) -> Result<BagOutput> {
        let h = self.embed.forward(tape, &self.store, input.x);
        let h = tape.relu(h);
        let inst = self.classifier.forward(tape, &self.store, h);
        let logit = tape.masked_max_rows(inst, input.mask)?;
        let instance_scores = tape.transpose(inst);
        Ok(BagOutput {
            logit,
            instance_scores,
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::bagdata::{collate, Bag};
    use crate::models::{build_model, ModelConfig};
    use ndarray::{array, Array2};

    fn params(model: &dyn crate::MilModel, name: &str) -> Array2<f64> {
        let store = model.params();
        store.get(store.find(name).unwrap()).clone()
    }

    #[test]
    fn mean_pool_matches_mean_then_classify() {
        let m = build_model(&ModelConfig::new("MeanPoolMIL", 2), 3).unwrap();
        let feats = array![[0.5f32, -1.0], [2.0, 0.25], [-0.3, 0.8]];
        let bag = Bag::new("a", feats.clone(), 0).unwrap();
        let short = Bag::new("b", array![[1.0f32, 1.0]], 1).unwrap();
        let logits = m.forward(&collate(&[short, bag]).unwrap()).unwrap();

        let (we, be) = (params(&*m, "embed.weight"), params(&*m, "embed.bias"));
        let (wc, bc) = (
            params(&*m, "classifier.weight"),
            params(&*m, "classifier.bias"),
        );
        let x = feats.mapv(f64::from);
        let h = (x.dot(&we) + &be).mapv(|v| v.max(0.0));
        let mean = h
            .mean_axis(ndarray::Axis(0))
            .unwrap()
            .insert_axis(ndarray::Axis(0));
        let expected = (mean.dot(&wc) + &bc)[[0, 0]];
        assert!((logits[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn max_pool_argmax_is_the_pooled_instance() {
        let m = build_model(&ModelConfig::new("MaxPoolMIL", 2), 4).unwrap();
        let bag = Bag::new(
            "a",
            array![[0.5f32, -1.0], [2.0, 0.25], [-0.3, 0.8], [1.1, 1.1]],
            1,
        )
        .unwrap();
        let batch = collate(&[bag]).unwrap();
        let (probs, scores) = m.predict(&batch).unwrap();
        let logits = m.forward(&batch).unwrap();

        let (we, be) = (params(&*m, "embed.weight"), params(&*m, "embed.bias"));
        let (wc, bc) = (
            params(&*m, "classifier.weight"),
            params(&*m, "classifier.bias"),
        );
        let x = batch
            .features
            .index_axis(ndarray::Axis(0), 0)
            .mapv(f64::from);
        let inst = ((x.dot(&we) + &be).mapv(|v| v.max(0.0))).dot(&wc) + &bc;
        let (arg, best) = inst.column(0).iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
        );
        let score_arg = scores
            .row(0)
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            )
            .0;
        assert_eq!(score_arg, arg);
        assert!((logits[0] - best).abs() < 1e-12);
        assert!((probs[0] - 1.0 / (1.0 + (-best).exp())).abs() < 1e-12);
    }
}
