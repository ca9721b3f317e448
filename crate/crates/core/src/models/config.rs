use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MilError, Result};
use crate::nn::{SmParams, DEFAULT_SM_ALPHA, DEFAULT_SM_STEPS};

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_ATTENTION_WIDTH: usize = 32;
pub const DEFAULT_ENCODER_LAYERS: usize = 2;
pub const DEFAULT_HEADS: usize = 4;
pub const DEFAULT_MLP_WIDTH: usize = 128;
pub const DEFAULT_GRAPH_LAYERS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    MeanPool,
    MaxPool,
    Abmil,
    TransformerAbmil,
    SmAbmil,
    SmTransformerAbmil,
    GraphAbmil,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::MeanPool,
        ModelKind::MaxPool,
        ModelKind::Abmil,
        ModelKind::TransformerAbmil,
        ModelKind::SmAbmil,
        ModelKind::SmTransformerAbmil,
        ModelKind::GraphAbmil,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::MeanPool => "MeanPoolMIL",
            ModelKind::MaxPool => "MaxPoolMIL",
            ModelKind::Abmil => "ABMIL",
            ModelKind::TransformerAbmil => "TransformerABMIL",
            ModelKind::SmAbmil => "SmABMIL",
            ModelKind::SmTransformerAbmil => "SmTransformerABMIL",
            ModelKind::GraphAbmil => "GraphABMIL",
        }
    }

    pub fn supported_names() -> String {
        Self::ALL.map(ModelKind::as_str).join(", ")
    }

    fn uses_attention(self) -> bool {
        !matches!(self, ModelKind::MeanPool | ModelKind::MaxPool)
    }

    fn uses_encoder(self) -> bool {
        matches!(
            self,
            ModelKind::TransformerAbmil | ModelKind::SmTransformerAbmil
        )
    }

    fn uses_sm(self) -> bool {
        matches!(self, ModelKind::SmAbmil | ModelKind::SmTransformerAbmil)
    }

    pub fn requires_adjacency(self) -> bool {
        self.uses_sm() || self == ModelKind::GraphAbmil
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = MilError;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| MilError::UnknownModel {
                name: s.to_string(),
                supported: ModelKind::supported_names(),
            })
    }
}

/// Where the smoothing operator is applied inside an attention model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmAttachment {
    /// Instance embeddings, before the attention logits are computed.
    Features,
    /// Attention logits, before the masked softmax.
    #[default]
    AttentionLogits,
}

fn default_alpha() -> f64 {
    DEFAULT_SM_ALPHA
}
fn default_steps() -> usize {
    DEFAULT_SM_STEPS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub attachment: SmAttachment,
}

impl Default for SmConfig {
    fn default() -> Self {
        SmConfig {
            alpha: DEFAULT_SM_ALPHA,
            steps: DEFAULT_SM_STEPS,
            attachment: SmAttachment::default(),
        }
    }
}

impl SmConfig {
    pub fn params(&self) -> SmParams {
        SmParams {
            alpha: self.alpha,
            steps: self.steps,
        }
    }
}

/// Model architecture description. Optional fields fall back to the
/// defaults above; fields that do not apply to `model_name` must be unset.
/// `in_dim = 0` means "take it from the dataset" (resolved by callers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model_name: String,
    #[serde(default)]
    pub in_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gated: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_encoder_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_heads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mlp_width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_graph_layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sm: Option<SmConfig>,
}

impl ModelConfig {
    pub fn new(model_name: impl Into<String>, in_dim: usize) -> Self {
        ModelConfig {
            model_name: model_name.into(),
            in_dim,
            embed_dim: None,
            attention_width: None,
            gated: None,
            n_encoder_layers: None,
            n_heads: None,
            mlp_width: None,
            n_graph_layers: None,
            sm: None,
        }
    }

    pub fn kind(&self) -> Result<ModelKind> {
        self.model_name.parse()
    }

    /// Validates the configuration and fills every applicable default.
    pub fn resolved(&self) -> Result<ModelConfig> {
        let kind = self.kind()?;
        let reject = |field: &str, set: bool, applies: bool| {
            if set && !applies {
                Err(MilError::InvalidConfig(format!(
                    "field `{field}` does not apply to model {kind}"
                )))
            } else {
                Ok(())
            }
        };
        reject(
            "attention_width",
            self.attention_width.is_some(),
            kind.uses_attention(),
        )?;
        reject("gated", self.gated.is_some(), kind.uses_attention())?;
        reject(
            "n_encoder_layers",
            self.n_encoder_layers.is_some(),
            kind.uses_encoder(),
        )?;
        reject("n_heads", self.n_heads.is_some(), kind.uses_encoder())?;
        reject("mlp_width", self.mlp_width.is_some(), kind.uses_encoder())?;
        reject(
            "n_graph_layers",
            self.n_graph_layers.is_some(),
            kind == ModelKind::GraphAbmil,
        )?;
        reject("sm", self.sm.is_some(), kind.uses_sm())?;

        if self.in_dim == 0 {
            return Err(MilError::InvalidConfig("in_dim must be positive".into()));
        }
        let positive = |field: &str, v: Option<usize>, default: usize| match v.unwrap_or(default) {
            0 => Err(MilError::InvalidConfig(format!(
                "`{field}` must be positive"
            ))),
            v => Ok(v),
        };

        let mut out = ModelConfig::new(kind.as_str(), self.in_dim);
        out.embed_dim = Some(positive("embed_dim", self.embed_dim, DEFAULT_EMBED_DIM)?);
        if kind.uses_attention() {
            out.attention_width = Some(positive(
                "attention_width",
                self.attention_width,
                DEFAULT_ATTENTION_WIDTH,
            )?);
            out.gated = Some(self.gated.unwrap_or(false));
        }
        if kind.uses_encoder() {
            out.n_encoder_layers = Some(positive(
                "n_encoder_layers",
                self.n_encoder_layers,
                DEFAULT_ENCODER_LAYERS,
            )?);
            let heads = positive("n_heads", self.n_heads, DEFAULT_HEADS)?;
            if !out.embed_dim.unwrap().is_multiple_of(heads) {
                return Err(MilError::InvalidConfig(format!(
                    "embed_dim {} is not divisible by n_heads {heads}",
                    out.embed_dim.unwrap()
                )));
            }
            out.n_heads = Some(heads);
            out.mlp_width = Some(positive("mlp_width", self.mlp_width, DEFAULT_MLP_WIDTH)?);
        }
        if kind == ModelKind::GraphAbmil {
            out.n_graph_layers = Some(positive(
                "n_graph_layers",
                self.n_graph_layers,
                DEFAULT_GRAPH_LAYERS,
            )?);
        }
        if kind.uses_sm() {
            let sm = self.sm.unwrap_or_default();
            sm.params().validate()?;
            out.sm = Some(sm);
        }
        Ok(out)
    }
}
