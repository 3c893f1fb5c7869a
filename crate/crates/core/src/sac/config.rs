use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SacError;
use crate::neural::STATE_SIZE;
use crate::tone_curve::{ACTION_LIMIT, DEFAULT_SEGMENTS};

/// Training hyperparameters. Defaults are desk-scale; the JSON file format
/// mirrors the fields one to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub tau: f64,
    pub target_update_interval: usize,
    pub episode_steps: usize,
    /// Environment steps, each followed by one gradient step once warmup ends.
    pub iterations: usize,
    /// Environment steps taken with uniform random actions before the policy
    /// is queried and updated.
    pub warmup_steps: usize,
    pub buffer_capacity: usize,
    pub action_range: f64,
    pub target_entropy: f64,
    pub reward_scale: f64,
    pub initial_log_alpha: f64,
    pub twin_q: bool,
    pub segments: usize,
    pub state_size: usize,
    pub crop_size: usize,
    /// Environment steps between checkpoints; 0 disables them.
    pub checkpoint_interval: usize,
    /// Number of recent episodes averaged for the logged mean return.
    pub return_window: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            gamma: 0.99,
            batch_size: 256,
            tau: 5e-4,
            target_update_interval: 1,
            episode_steps: 5,
            iterations: 20_000,
            warmup_steps: 1_000,
            buffer_capacity: 50_000,
            action_range: ACTION_LIMIT,
            target_entropy: -4.0,
            reward_scale: 200.0,
            initial_log_alpha: 0.0,
            twin_q: true,
            segments: DEFAULT_SEGMENTS,
            state_size: STATE_SIZE,
            crop_size: 224,
            checkpoint_interval: 5_000,
            return_window: 100,
        }
    }
}

impl SacConfig {
    /// Values used in the original full-scale runs.
    pub fn paper_scale() -> Self {
        Self {
            iterations: 750_000,
            warmup_steps: 10_000,
            buffer_capacity: 1_000_000,
            checkpoint_interval: 50_000,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self, SacError> {
        let config: Self = serde_json::from_str(text)
            .map_err(|e| SacError::Config(vec![format!("invalid config JSON: {e}")]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SacError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SacError::Io {
            context: format!("reading config {}", path.display()),
            source: e,
        })?;
        Self::from_json(&text)
    }

    /// Reports every violated constraint at once.
    pub fn validate(&self) -> Result<(), SacError> {
        let mut problems = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                problems.push(msg.to_string());
            }
        };
        check(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning_rate must be positive",
        );
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)");
        check(self.tau > 0.0 && self.tau < 1.0, "tau must lie in (0, 1)");
        check(self.batch_size > 0, "batch_size must be positive");
        check(self.target_update_interval > 0, "target_update_interval must be positive");
        check(self.episode_steps > 0, "episode_steps must be positive");
        check(self.iterations > 0, "iterations must be positive");
        check(self.buffer_capacity > 0, "buffer_capacity must be positive");
        check(
            self.action_range == ACTION_LIMIT,
            "action_range must be 2 (the tone-curve parameterization is fixed)",
        );
        check(self.target_entropy.is_finite(), "target_entropy must be finite");
        check(
            self.reward_scale.is_finite() && self.reward_scale > 0.0,
            "reward_scale must be positive",
        );
        check(self.initial_log_alpha.is_finite(), "initial_log_alpha must be finite");
        check(self.segments > 0, "segments must be positive");
        check(
            self.state_size == STATE_SIZE,
            "state_size must be 56 (the network input is fixed)",
        );
        check(
            self.crop_size >= self.state_size,
            "crop_size must be at least state_size",
        );
        check(self.return_window > 0, "return_window must be positive");
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SacError::Config(problems))
        }
    }
}
