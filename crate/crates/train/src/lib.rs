//! Training: n-step proximal policy optimization with a curriculum over
//! initial-solution quality.
//!
//! Every batch draws fresh instances, builds random tours, warms them up by
//! running the current policy for a number of steps that grows with the
//! epoch, then alternates short rollout segments with a few clipped policy /
//! value updates over each segment.

pub mod adam;
pub mod config;
pub mod error;
pub mod ppo;
pub mod returns;
pub mod segment;
pub mod trainer;

pub use adam::Adam;
pub use config::{ResolvedTrainConfig, TrainConfig};
pub use error::{Error, Result};
pub use ppo::{clipped_value_loss, surrogate_objective};
pub use returns::returns_and_advantages;
pub use segment::{collect_segment, Segment, StepRecord};
pub use trainer::{curriculum_warmup, warmup_steps, EpochStats, Trainer};
