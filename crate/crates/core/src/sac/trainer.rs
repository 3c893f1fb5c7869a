use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::agent::SacAgent;
use super::buffer::{state_tensor, Batch, ReplayBuffer, Transition};
use super::config::SacConfig;
use super::SacError;
use crate::imaging::{build_state_shared, center_crop, downsample, load_image, to_float, FloatImage};
use crate::neural::{sample_action, PolicyNetwork};
use crate::reward::{reward_from_losses, LossProvider, RewardScale};
use crate::tone_curve::{apply_curve, curve_for_action, ActionVector, ACTION_LIMIT};

/// Consecutive failed episodes tolerated before training gives up.
const MAX_CONSECUTIVE_FAILURES: usize = 10;

/// One dataset manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default)]
    pub classes: Vec<String>,
}

/// Reads a JSON array of `{"path", "classes"}`; relative paths are resolved
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, SacError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| SacError::Io {
        context: format!("reading manifest {}", path.display()),
        source: e,
    })?;
    let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text)
        .map_err(|e| SacError::Manifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new(""));
    for e in &mut entries {
        if e.path.is_relative() {
            e.path = base.join(&e.path);
        }
    }
    Ok(entries)
}

/// A training image already cropped to the reward resolution.
#[derive(Debug, Clone)]
pub struct TrainingImage {
    pub crop: Arc<FloatImage>,
    pub classes: Vec<String>,
}

impl TrainingImage {
    pub fn new(image: &FloatImage, classes: Vec<String>, crop_size: usize) -> Result<Self, SacError> {
        Ok(Self {
            crop: Arc::new(center_crop(image, crop_size, crop_size)?),
            classes,
        })
    }

    pub fn load_all(entries: &[ManifestEntry], crop_size: usize) -> Result<Vec<Self>, SacError> {
        if entries.is_empty() {
            return Err(SacError::Manifest("manifest has no images".into()));
        }
        entries
            .iter()
            .map(|e| {
                let img = load_image(&e.path)?;
                Self::new(&to_float(&img), e.classes.clone(), crop_size)
            })
            .collect()
    }
}

/// Applies one tone curve with parameters drawn from `N(0, 1)` and clamped
/// to the action box.
pub fn augment(image: &FloatImage, segments: usize, rng: &mut impl Rng) -> Result<FloatImage, SacError> {
    let a: [f64; 4] =
        std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal).clamp(-ACTION_LIMIT, ACTION_LIMIT));
    let table = curve_for_action(&ActionVector::from_array(a)?, segments)?;
    Ok(apply_curve(image, &table))
}

pub enum ActionSource<'a> {
    /// Uniform over the action box; no network is consulted.
    Uniform,
    /// Sampled from the squashed Gaussian policy.
    Policy(&'a PolicyNetwork<f32>),
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    /// `L_0 .. L_T`.
    pub losses: Vec<f64>,
    pub policy_queries: usize,
}

impl Episode {
    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }

    pub fn total_return(&self) -> f64 {
        self.rewards().sum()
    }
}

fn choose_action(
    source: &ActionSource<'_>,
    state: &crate::imaging::ImageState,
    rng: &mut impl Rng,
) -> Result<ActionVector, SacError> {
    match source {
        ActionSource::Uniform => Ok(ActionVector::from_array(std::array::from_fn(|_| {
            rng.random_range(-ACTION_LIMIT..=ACTION_LIMIT)
        }))?),
        ActionSource::Policy(policy) => {
            let out = policy.forward(&state_tensor(state)?)?;
            let mu: Vec<f64> = out.mu.row(0).iter().map(|&v| f64::from(v)).collect();
            let ls: Vec<f64> = out.log_std.row(0).iter().map(|&v| f64::from(v)).collect();
            Ok(sample_action(&mu, &ls, rng).0)
        }
    }
}

/// Rolls out `episode_steps` tone-curve adjustments from `start` (the
/// cropped reward-resolution image). Each curve is applied both to the
/// reward image and to the downsampled state image, as at test time.
pub fn run_episode(
    start: &FloatImage,
    classes: &[String],
    source: &ActionSource<'_>,
    provider: &dyn LossProvider,
    config: &SacConfig,
    rng: &mut impl Rng,
) -> Result<Episode, SacError> {
    let scale = RewardScale::new(config.reward_scale)?;
    let mut big = start.clone();
    let mut small = Arc::new(downsample(start, config.state_size, config.state_size)?);
    let mut prev: Option<Arc<FloatImage>> = None;
    let mut losses = vec![provider.loss(&big, classes)?];
    let mut transitions = Vec::with_capacity(config.episode_steps);
    let mut policy_queries = 0;
    for t in 0..config.episode_steps {
        let state = build_state_shared(Arc::clone(&small), prev.clone())?;
        if matches!(source, ActionSource::Policy(_)) {
            policy_queries += 1;
        }
        let action = choose_action(source, &state, rng)?;
        let table = curve_for_action(&action, config.segments)?;
        big = apply_curve(&big, &table);
        let next_small = Arc::new(apply_curve(&small, &table));
        let loss = provider.loss(&big, classes)?;
        let reward = reward_from_losses(losses[t], loss, scale);
        losses.push(loss);
        let next_state = build_state_shared(Arc::clone(&next_small), Some(Arc::clone(&small)))?;
        transitions.push(Transition {
            state,
            action,
            reward,
            next_state,
            terminal: t + 1 == config.episode_steps,
        });
        prev = Some(small);
        small = next_small;
    }
    Ok(Episode {
        transitions,
        losses,
        policy_queries,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Update {
        step: usize,
        q_loss: f64,
        policy_loss: f64,
        alpha_loss: f64,
        alpha: f64,
        mean_return: f64,
    },
    Episode {
        step: usize,
        index: usize,
        #[serde(rename = "return")]
        episode_return: f64,
    },
    EpisodeDiscarded {
        step: usize,
        error: String,
    },
    Checkpoint {
        step: usize,
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub final_step: usize,
    pub updates: u64,
    pub episode_returns: Vec<f64>,
    pub discarded_episodes: usize,
    /// Policy forward passes made while acting.
    pub policy_queries: usize,
}

pub struct Trainer {
    config: SacConfig,
    agent: SacAgent<f32>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    step: usize,
}

fn stream_seed(seed: u64, step: usize) -> u64 {
    seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

impl Trainer {
    pub fn new(config: SacConfig, seed: u64) -> Result<Self, SacError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agent = SacAgent::new(&config, &mut rng);
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            config,
            agent,
            rng,
            step: 0,
        })
    }

    /// Continues from a checkpoint directory. The replay buffer starts empty
    /// and optimizer moments are reset; step numbering carries on.
    pub fn resume(config: SacConfig, checkpoint: &Path, seed: u64) -> Result<Self, SacError> {
        config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let (agent, state) = SacAgent::load_checkpoint(checkpoint, &config, &mut init_rng)?;
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, state.step)),
            config,
            agent,
            step: state.step,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn agent(&self) -> &SacAgent<f32> {
        &self.agent
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<(), SacError> {
        self.agent.save_checkpoint(dir, self.step)
    }

    /// Trains until `config.iterations` environment steps. Checkpoints go to
    /// `checkpoint_root/step-NNNNNNN` when a root is given.
    pub fn run(
        &mut self,
        data: &[TrainingImage],
        provider: &dyn LossProvider,
        checkpoint_root: Option<&Path>,
        sink: &mut dyn FnMut(&LogEvent),
    ) -> Result<TrainingReport, SacError> {
        if data.is_empty() {
            return Err(SacError::Manifest("no training images".into()));
        }
        let cfg = self.config.clone();
        let mut report = TrainingReport::default();
        let mut failures = 0;
        while self.step < cfg.iterations {
            let record = &data[self.rng.random_range(0..data.len())];
            let start = augment(&record.crop, cfg.segments, &mut self.rng)?;
            let source = if self.step < cfg.warmup_steps {
                ActionSource::Uniform
            } else {
                ActionSource::Policy(&self.agent.policy)
            };
            let episode = match run_episode(&start, &record.classes, &source, provider, &cfg, &mut self.rng) {
                Ok(ep) => ep,
                Err(SacError::Reward(e)) => {
                    failures += 1;
                    report.discarded_episodes += 1;
                    sink(&LogEvent::EpisodeDiscarded {
                        step: self.step,
                        error: e.to_string(),
                    });
                    if failures >= MAX_CONSECUTIVE_FAILURES {
                        return Err(SacError::Reward(e));
                    }
                    continue;
                }
                Err(e) => return Err(e),
            };
            failures = 0;
            report.policy_queries += episode.policy_queries;
            report.episode_returns.push(episode.total_return());
            sink(&LogEvent::Episode {
                step: self.step,
                index: report.episode_returns.len() - 1,
                episode_return: episode.total_return(),
            });
            let window = &report.episode_returns
                [report.episode_returns.len().saturating_sub(cfg.return_window)..];
            let mean_return = window.iter().sum::<f64>() / window.len() as f64;

            for transition in episode.transitions {
                if self.step >= cfg.iterations {
                    break;
                }
                self.buffer.push(transition)?;
                self.step += 1;
                if self.step > cfg.warmup_steps {
                    let sampled = self.buffer.sample(cfg.batch_size, &mut self.rng)?;
                    let batch = Batch::from_transitions(&sampled)?;
                    let stats = self.agent.update(&batch, &mut self.rng)?;
                    report.updates += 1;
                    sink(&LogEvent::Update {
                        step: self.step,
                        q_loss: stats.q_loss,
                        policy_loss: stats.policy_loss,
                        alpha_loss: stats.alpha_loss,
                        alpha: stats.alpha,
                        mean_return,
                    });
                }
                if let Some(root) = checkpoint_root {
                    if cfg.checkpoint_interval > 0 && self.step % cfg.checkpoint_interval == 0 {
                        let dir = root.join(format!("step-{:07}", self.step));
                        self.save_checkpoint(&dir)?;
                        sink(&LogEvent::Checkpoint {
                            step: self.step,
                            path: dir,
                        });
                    }
                }
            }
        }
        report.final_step = self.step;
        Ok(report)
    }
}
