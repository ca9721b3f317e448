use rand::Rng;

use super::{
    BagInput, BagOutput, InstanceScoreKind, MilModel, ModelConfig, ModelKind, SmAttachment,
    SmConfig,
};
use crate::error::Result;
use crate::nn::{
    row_normalized_dense, self_loop_normalized_dense, sm_apply, AttentionPool, EncoderLayer,
    GraphConv, Linear, ParamStore, Tape, Var,
};

/// Instance encoder in front of the attention pool.
pub enum Backbone {
    /// `ReLU(embed(x))`
    Embed(Linear),
    /// `ReLU(embed(x))` followed by encoder layers.
    Transformer(Linear, Vec<EncoderLayer>),
    /// Stacked graph convolutions over the bag's instance graph.
    Graph(Vec<GraphConv>),
}

/// Attention-pooling MIL model: backbone → (optional smoothing) →
/// attention pool → linear classifier.
///
/// Covers ABMIL, TransformerABMIL, SmABMIL, SmTransformerABMIL and
/// GraphABMIL. Instance scores are the attention weights.
pub struct AttentionMil {
    config: ModelConfig,
    store: ParamStore,
    backbone: Backbone,
    pool: AttentionPool,
    classifier: Linear,
    sm: Option<SmConfig>,
}

impl AttentionMil {
    pub(crate) fn new(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let kind = config.kind()?;
        let mut store = ParamStore::new();
        let e = config.embed_dim.unwrap();
        let d = config.in_dim;
        let backbone = match kind {
            ModelKind::Abmil | ModelKind::SmAbmil => {
                Backbone::Embed(Linear::new(&mut store, "embed", d, e, true, rng))
            }
            ModelKind::TransformerAbmil | ModelKind::SmTransformerAbmil => {
                let embed = Linear::new(&mut store, "embed", d, e, true, rng);
                let heads = config.n_heads.unwrap();
                let mlp = config.mlp_width.unwrap();
                let layers = (0..config.n_encoder_layers.unwrap())
                    .map(|i| {
                        EncoderLayer::new(&mut store, &format!("encoder.{i}"), e, heads, mlp, rng)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Backbone::Transformer(embed, layers)
            }
            ModelKind::GraphAbmil => Backbone::Graph(
                (0..config.n_graph_layers.unwrap())
                    .map(|i| {
                        GraphConv::new(
                            &mut store,
                            &format!("graph.{i}"),
                            if i == 0 { d } else { e },
                            e,
                            rng,
                        )
                    })
                    .collect(),
            ),
            ModelKind::MeanPool | ModelKind::MaxPool => {
                unreachable!("pooling baselines are built elsewhere")
            }
        };
        let pool = AttentionPool::new(
            &mut store,
            "attention",
            e,
            config.attention_width.unwrap(),
            config.gated.unwrap(),
            rng,
        );
        let classifier = Linear::new(&mut store, "classifier", e, 1, true, rng);
        Ok(AttentionMil {
            sm: config.sm,
            config,
            store,
            backbone,
            pool,
            classifier,
        })
    }

    fn encode(&self, tape: &mut Tape, input: &BagInput) -> Result<Var> {
        match &self.backbone {
            Backbone::Embed(embed) => {
                let h = embed.forward(tape, &self.store, input.x);
                Ok(tape.relu(h))
            }
            Backbone::Transformer(embed, layers) => {
                let h = embed.forward(tape, &self.store, input.x);
                let mut h = tape.relu(h);
                for layer in layers {
                    h = layer.forward(tape, &self.store, h, input.mask)?;
                }
                Ok(h)
            }
            Backbone::Graph(convs) => {
                let adj = input.adjacency_or_err(self.name())?;
                let a_hat = self_loop_normalized_dense(adj, input.padded_len())?;
                let mut h = input.x;
                for conv in convs {
                    h = conv.forward(tape, &self.store, h, &a_hat)?;
                }
                Ok(h)
            }
        }
    }
}

impl MilModel for AttentionMil {
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
        InstanceScoreKind::AttentionWeights
    }

    fn requires_adjacency(&self) -> bool {
        self.sm.is_some() || matches!(self.backbone, Backbone::Graph(_))
    }

    fn forward_bag(&self, tape: &mut Tape, input: &BagInput) -> Result<BagOutput> {
        let mut h = self.encode(tape, input)?;
        let smoothing = match &self.sm {
            Some(sm) => {
                let adj = input.adjacency_or_err(self.name())?;
                Some((sm, row_normalized_dense(adj, input.padded_len())?))
            }
            None => None,
        };
        if let Some((sm, a)) = &smoothing {
            if sm.attachment == SmAttachment::Features {
                h = sm_apply(tape, h, a, &sm.params());
            }
        }
        let mut e = self.pool.logits(tape, &self.store, h);
        if let Some((sm, a)) = &smoothing {
            if sm.attachment == SmAttachment::AttentionLogits {
                e = sm_apply(tape, e, a, &sm.params());
            }
        }
        let (z, a) = AttentionPool::pool(tape, h, e, input.mask)?;
        let logit = self.classifier.forward(tape, &self.store, z);
        Ok(BagOutput {
            logit,
            instance_scores: a,
        })
    }
}
