//! The imputation network: field embeddings, attention-mask builders, a
//! dense-fusion transformer encoder with an explicit backward pass, and
//! tied-weight output heads.

mod decode;
mod embed;
mod encoder;
mod export;
mod grad;
mod mask;
mod params;

use serde::{Deserialize, Serialize};

pub use decode::{decode, hard_decode, rank_candidates, score_candidates, FieldOutputs, HardPrediction, Ranking};
pub(crate) use decode::{sigmoid, softmax_in_place};
pub use embed::{embed, embed_backward, HiddenGrid};
pub use encoder::{encode, encode_backward, encode_cached, EncoderCache};
pub use export::{export_weights, import_weights, read_tensor_file, write_tensor_file, NamedTensor, TensorFile};
pub use grad::{forward_outputs, item_distribution, loss_and_grad, ForwardPass};
pub use mask::{build_attention_mask, AttentionMask};
pub use params::{init_params, LayerParams, ModelParams, VocabSizes};

use crate::{Error, Result};

/// Which attention mask the encoder uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Every field token attends to every other.
    Dense,
    /// Attention only within the same item or the same field type.
    Sparse,
    /// Dense, but originally-missing side fields neither send nor receive
    /// attention (self-attention excepted).
    MissingMasked,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(MaskKind::Dense),
            "sparse" => Ok(MaskKind::Sparse),
            "missing_masked" => Ok(MaskKind::MissingMasked),
            _ => Err(Error::Config(format!("unknown mask kind {s:?}"))),
        }
    }
}

/// Divisor applied to attention scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `1/sqrt(e)` over the full embedding size.
    Model,
    /// `1/sqrt(e/h)`, the usual per-head scaling.
    Head,
}

impl std::str::FromStr for AttentionScale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "model" => Ok(AttentionScale::Model),
            "head" => Ok(AttentionScale::Head),
            _ => Err(Error::Config(format!("unknown attention scale {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_size: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout_rate: f64,
    pub max_len: usize,
    pub text_dim: usize,
    pub mask_kind: MaskKind,
    pub attention_scale: AttentionScale,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding_size: 64,
            heads: 4,
            layers: 3,
            dropout_rate: 0.5,
            max_len: 20,
            text_dim: 768,
            mask_kind: MaskKind::Dense,
            attention_scale: AttentionScale::Model,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_size == 0 || self.heads == 0 || self.embedding_size % self.heads != 0 {
            return Err(Error::Config(format!(
                "embedding size {} must be a positive multiple of the head count {}",
                self.embedding_size, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("at least one transformer layer is required".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} not in [0,1)", self.dropout_rate)));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if self.text_dim == 0 {
            return Err(Error::Config("text_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embedding_size / self.heads
    }

    pub fn score_scale(&self) -> f64 {
        let d = match self.attention_scale {
            AttentionScale::Model => self.embedding_size,
            AttentionScale::Head => self.head_dim(),
        };
        1.0 / (d as f64).sqrt()
    }

    /// Rows of a hidden grid: five field tokens per position.
    pub fn grid_rows(&self) -> usize {
        5 * self.max_len
    }
}
