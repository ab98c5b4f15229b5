use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which per-pair attention scores the encoder layers use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderVariant {
    /// Blend self-attention and positional auxiliary scores through a small
    /// per-pair MLP.
    Synth,
    /// Plain self-attention; positional encodings are added to the node
    /// embeddings instead (ablation baseline).
    Vanilla,
}

/// Architecture hyper-parameters shared by the policy and value networks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node embedding width.
    pub embed_dim: usize,
    /// Positional embedding width (query/key width of the auxiliary scores).
    pub pos_dim: usize,
    /// Attention heads.
    pub heads: usize,
    /// Stacked encoder layers.
    pub layers: usize,
    /// Decoder logits are squashed into `[-clamp, clamp]` before the softmax.
    pub logit_clamp: f64,
    pub encoder: EncoderVariant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            pos_dim: 128,
            heads: 4,
            layers: 3,
            logit_clamp: 6.0,
            encoder: EncoderVariant::Synth,
        }
    }
}

impl ModelConfig {
    pub fn with_dim(dim: usize) -> Self {
        Self { embed_dim: dim, pos_dim: dim, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.pos_dim == 0 || self.pos_dim % self.heads != 0 || self.pos_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "pos_dim {} must be a positive even multiple of heads {}",
                self.pos_dim, self.heads
            )));
        }
        if self.layers == 0 {
            return Err(Error::Config("need at least one encoder layer".into()));
        }
        if !(self.logit_clamp > 0.0) {
            return Err(Error::Config("logit clamp must be positive".into()));
        }
        if self.encoder == EncoderVariant::Vanilla && self.pos_dim != self.embed_dim {
            return Err(Error::Config(
                "vanilla encoder adds positional encodings to node embeddings, so pos_dim must equal embed_dim".into(),
            ));
        }
        Ok(())
    }

    /// Query/key width per head for self and auxiliary scores.
    pub fn head_qk(&self) -> usize {
        self.pos_dim / self.heads
    }

    /// Value width per head.
    pub fn head_v(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Feed-forward hidden width.
    pub fn ffn_dim(&self) -> usize {
        4 * self.embed_dim
    }
}
