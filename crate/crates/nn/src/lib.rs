//! Neural policy for pair-removal tour improvement.
//!
//! The policy encodes a tour with stacked attention layers whose per-pair
//! scores blend coordinate-derived self-attention with position-derived
//! auxiliary attention (computed once from a cyclic positional encoding and
//! shared across layers), then decodes a removal distribution over request
//! pairs and a joint reinsertion distribution over anchor pairs. A separate
//! value network estimates state values for training.
//!
//! Everything runs on plain `f64` tensors with hand-written forward and
//! backward passes; gradients are checked against finite differences in the
//! test suite. Hand-crafted (random / epsilon-greedy) decoders for ablation
//! baselines live in [`handcrafted`].

pub mod checkpoint;
pub mod pool;
pub mod config;
pub mod cpe;
pub mod critic;
pub mod encoder;
pub mod error;
pub mod features;
pub mod handcrafted;
pub mod math;
pub mod policy;
pub mod removal;
pub mod reinsert;
pub mod store;

pub use config::{EncoderVariant, ModelConfig};
pub use critic::CriticNet;
pub use error::{Error, Result};
pub use features::StateBatch;
pub use handcrafted::{DecoderKind, HandcraftedPolicy};
pub use policy::{PolicyNet, PolicyOutput, SelectMode};
pub use store::{Grads, ParamStore};
