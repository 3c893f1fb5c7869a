//! Soft actor-critic training of the tone-curve policy.

mod agent;
mod buffer;
mod config;
mod losses;
mod trainer;

use thiserror::Error;

pub use agent::{draw_noise, SacAgent, TrainerState, UpdateStats};
pub use buffer::{state_tensor, Batch, ReplayBuffer, Transition};
pub use config::SacConfig;
pub use losses::{
    policy_loss, q_loss, soft_targets, temperature_loss, LossWithGrads, Noise, PolicyLoss,
};
pub use trainer::{
    augment, load_manifest, run_episode, ActionSource, Episode, LogEvent, ManifestEntry,
    Trainer, TrainingImage, TrainingReport,
};

use crate::imaging::ImagingError;
use crate::neural::NeuralError;
use crate::reward::RewardError;
use crate::tone_curve::ToneCurveError;

#[derive(Debug, Error)]
pub enum SacError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    ToneCurve(#[from] ToneCurveError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}
