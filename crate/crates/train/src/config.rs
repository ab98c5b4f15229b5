use serde::{Deserialize, Serialize};

use pdp_core::Variant;
use pdp_nn::{EncoderVariant, ModelConfig};

use crate::error::{Error, Result};

/// Training hyper-parameters. Defaults follow the reference schedule:
/// 200 epochs x 20 batches of 600 instances, 250 improvement steps per
/// rollout consumed in 5-step segments with 3 clipped updates each; gradient
/// clipping and the curriculum divisor default per problem size.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Requests per training instance.
    pub n_requests: usize,
    pub variant: Variant,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    /// Segment length of the n-step updates.
    pub n_step: usize,
    /// Improvement steps per rollout (must be divisible by `n_step`).
    pub t_train: usize,
    /// Inner updates per segment.
    pub kappa: usize,
    /// PPO ratio / value clip threshold.
    pub clip: f64,
    pub lr_policy: f64,
    pub lr_critic: f64,
    /// Multiplicative learning-rate decay per epoch.
    pub lr_decay: f64,
    pub gamma: f64,
    /// Global gradient-norm bound; defaults per problem size when absent.
    pub grad_clip: Option<f64>,
    /// Curriculum divisor: warmup runs `floor(epoch / rho_cl)` steps.
    pub rho_cl: Option<f64>,
    /// History window during training; defaults to the node count.
    pub history_k: Option<usize>,
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub logit_clamp: f64,
    pub encoder: EncoderVariant,
    /// Write checkpoints every this many epochs (plus the final one).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_requests: 10,
            variant: Variant::Pdtsp,
            epochs: 200,
            batches_per_epoch: 20,
            batch_size: 600,
            n_step: 5,
            t_train: 250,
            kappa: 3,
            clip: 0.1,
            lr_policy: 8e-5,
            lr_critic: 2e-5,
            lr_decay: 0.985,
            gamma: 0.999,
            grad_clip: None,
            rho_cl: None,
            history_k: None,
            embed_dim: 128,
            heads: 4,
            encoder_layers: 3,
            logit_clamp: 6.0,
            encoder: EncoderVariant::Synth,
            checkpoint_every: 1,
        }
    }
}

/// Gradient-clip default by nearest standard size (21 / 51 / 101 nodes).
pub fn default_grad_clip(node_count: usize) -> f64 {
    if node_count <= 36 {
        0.05
    } else if node_count <= 76 {
        0.15
    } else {
        0.35
    }
}

/// Curriculum divisor default by nearest standard size.
pub fn default_rho_cl(node_count: usize) -> f64 {
    if node_count <= 36 {
        2.0
    } else if node_count <= 76 {
        1.5
    } else {
        1.0
    }
}

/// A fully-resolved configuration: every optional knob made concrete.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ResolvedTrainConfig {
    #[serde(flatten)]
    pub base: TrainConfig,
    pub node_count: usize,
    pub grad_clip: f64,
    pub rho_cl: f64,
    pub history_k: usize,
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            pos_dim: self.embed_dim,
            heads: self.heads,
            layers: self.encoder_layers,
            logit_clamp: self.logit_clamp,
            encoder: self.encoder,
        }
    }

    pub fn resolve(&self) -> Result<ResolvedTrainConfig> {
        if self.n_requests < 1 {
            return Err(Error::Config("n_requests must be at least 1".into()));
        }
        if self.n_step == 0 || self.t_train % self.n_step != 0 {
            return Err(Error::Config(format!(
                "t_train ({}) must be a positive multiple of n_step ({})",
                self.t_train, self.n_step
            )));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config("clip threshold must lie in (0, 1)".into()));
        }
        if self.lr_policy <= 0.0 || self.lr_critic <= 0.0 || self.lr_decay <= 0.0 {
            return Err(Error::Config("learning rates and decay must be positive".into()));
        }
        if self.kappa < 1 {
            return Err(Error::Config("kappa must be at least 1".into()));
        }
        if self.batch_size < 1 || self.batches_per_epoch < 1 || self.epochs < 1 {
            return Err(Error::Config("epochs, batches and batch size must be positive".into()));
        }
        self.model_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        let node_count = 2 * self.n_requests + 1;
        let history_k = self.history_k.unwrap_or(node_count);
        if history_k == 0 {
            return Err(Error::Config("history window must be positive".into()));
        }
        Ok(ResolvedTrainConfig {
            base: self.clone(),
            node_count,
            grad_clip: self.grad_clip.unwrap_or_else(|| default_grad_clip(node_count)),
            rho_cl: self.rho_cl.unwrap_or_else(|| default_rho_cl(node_count)),
            history_k,
        })
    }
}
