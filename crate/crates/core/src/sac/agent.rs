use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::buffer::Batch;
use super::config::SacConfig;
use super::losses::{policy_loss, q_loss, soft_targets, temperature_loss, Noise};
use super::SacError;
use crate::neural::{
    Adam, PolicyNetwork, QNetwork, Scalar, ScalarAdam, WeightArchive,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean over critics.
    pub q_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    /// Temperature used by this update, before its own step.
    pub alpha: f64,
}

/// Policy, critics, target critics, temperature and their optimizers.
pub struct SacAgent<T: Scalar = f32> {
    pub policy: PolicyNetwork<T>,
    pub critics: Vec<QNetwork<T>>,
    pub targets: Vec<QNetwork<T>>,
    log_alpha: f64,
    policy_opt: Adam<T>,
    critic_opts: Vec<Adam<T>>,
    alpha_opt: ScalarAdam,
    updates: u64,
    gamma: f64,
    tau: f64,
    target_entropy: f64,
    target_update_interval: u64,
    learning_rate: f64,
}

pub fn draw_noise<T: Scalar>(n: usize, rng: &mut impl Rng) -> Vec<Noise<T>> {
    (0..n)
        .map(|_| std::array::from_fn(|_| T::from_f64_lossy(rng.sample(StandardNormal))))
        .collect()
}

impl<T: Scalar> SacAgent<T> {
    pub fn new(config: &SacConfig, rng: &mut impl Rng) -> Self {
        let policy = PolicyNetwork::new(rng);
        let n_critics = if config.twin_q { 2 } else { 1 };
        let critics: Vec<QNetwork<T>> = (0..n_critics).map(|_| QNetwork::new(rng)).collect();
        Self::from_parts(config, policy, critics.clone(), critics, config.initial_log_alpha)
    }

    pub fn from_parts(
        config: &SacConfig,
        policy: PolicyNetwork<T>,
        critics: Vec<QNetwork<T>>,
        targets: Vec<QNetwork<T>>,
        log_alpha: f64,
    ) -> Self {
        let lr = config.learning_rate;
        Self {
            policy_opt: Adam::new(policy.params(), lr),
            critic_opts: critics.iter().map(|q| Adam::new(q.params(), lr)).collect(),
            alpha_opt: ScalarAdam::new(lr),
            policy,
            critics,
            targets,
            log_alpha,
            updates: 0,
            gamma: config.gamma,
            tau: config.tau,
            target_entropy: config.target_entropy,
            target_update_interval: config.target_update_interval as u64,
            learning_rate: lr,
        }
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn set_log_alpha(&mut self, v: f64) {
        self.log_alpha = v;
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    fn target_refs(&self) -> Vec<&QNetwork<T>> {
        self.targets.iter().collect()
    }

    /// One Adam step on every critic against freshly computed soft targets.
    /// Returns the per-critic losses.
    pub fn update_q(&mut self, batch: &Batch<T>, rng: &mut impl Rng) -> Result<Vec<f64>, SacError> {
        let alpha = T::from_f64_lossy(self.alpha());
        let gamma = T::from_f64_lossy(self.gamma);
        let noise = draw_noise(batch.len(), rng);
        let y = soft_targets(&self.policy, &self.target_refs(), batch, alpha, gamma, &noise)?;
        let mut losses = Vec::with_capacity(self.critics.len());
        for (q, opt) in self.critics.iter_mut().zip(&mut self.critic_opts) {
            let enc = q.encode(&batch.states)?;
            let out = q_loss(q, &enc, &batch.actions, &y)?;
            opt.step(q.params_mut(), &out.grads);
            losses.push(out.loss.to_f64_lossy());
        }
        Ok(losses)
    }

    /// One Adam step on the policy. Returns the loss and the sampled
    /// log-probabilities.
    pub fn update_policy(
        &mut self,
        batch: &Batch<T>,
        rng: &mut impl Rng,
    ) -> Result<(f64, Vec<f64>), SacError> {
        let alpha = T::from_f64_lossy(self.alpha());
        let noise = draw_noise(batch.len(), rng);
        let encodings = self
            .critics
            .iter()
            .map(|q| q.encode(&batch.states))
            .collect::<Result<Vec<_>, _>>()?;
        let pairs: Vec<_> = self.critics.iter().zip(&encodings).collect();
        let out = policy_loss(&self.policy, &pairs, &batch.states, alpha, &noise)?;
        self.policy_opt.step(self.policy.params_mut(), &out.grads);
        Ok((
            out.loss.to_f64_lossy(),
            out.log_probs.iter().map(|v| v.to_f64_lossy()).collect(),
        ))
    }

    /// One Adam step on `log_alpha`.
    pub fn update_temperature(&mut self, log_probs: &[f64]) -> f64 {
        let (loss, grad) = temperature_loss(self.log_alpha, log_probs, self.target_entropy);
        self.alpha_opt.step(&mut self.log_alpha, grad);
        loss
    }

    /// `target <- tau * online + (1 - tau) * target`.
    pub fn update_target(&mut self) {
        let tau = T::from_f64_lossy(self.tau);
        for (t, q) in self.targets.iter_mut().zip(&self.critics) {
            t.params_mut().blend_from(q.params(), tau);
        }
    }

    /// A full update. Policy and critic losses are both evaluated at the
    /// current parameters, which lets them share the critics' state encoding.
    pub fn update(&mut self, batch: &Batch<T>, rng: &mut impl Rng) -> Result<UpdateStats, SacError> {
        let alpha_f64 = self.alpha();
        let alpha = T::from_f64_lossy(alpha_f64);
        let gamma = T::from_f64_lossy(self.gamma);
        let next_noise = draw_noise(batch.len(), rng);
        let noise = draw_noise(batch.len(), rng);

        let y = soft_targets(&self.policy, &self.target_refs(), batch, alpha, gamma, &next_noise)?;
        let encodings = self
            .critics
            .iter()
            .map(|q| q.encode(&batch.states))
            .collect::<Result<Vec<_>, _>>()?;
        let pairs: Vec<_> = self.critics.iter().zip(&encodings).collect();
        let pl = policy_loss(&self.policy, &pairs, &batch.states, alpha, &noise)?;
        let mut q_losses = Vec::with_capacity(self.critics.len());
        for (q, enc) in self.critics.iter().zip(&encodings) {
            q_losses.push(q_loss(q, enc, &batch.actions, &y)?);
        }
        drop(encodings);

        self.policy_opt.step(self.policy.params_mut(), &pl.grads);
        for ((q, opt), out) in self.critics.iter_mut().zip(&mut self.critic_opts).zip(&q_losses) {
            opt.step(q.params_mut(), &out.grads);
        }
        let log_probs: Vec<f64> = pl.log_probs.iter().map(|v| v.to_f64_lossy()).collect();
        let alpha_loss = self.update_temperature(&log_probs);
        self.updates += 1;
        if self.updates % self.target_update_interval == 0 {
            self.update_target();
        }
        let q_loss =
            q_losses.iter().map(|o| o.loss.to_f64_lossy()).sum::<f64>() / q_losses.len() as f64;
        Ok(UpdateStats {
            q_loss,
            policy_loss: pl.loss.to_f64_lossy(),
            alpha_loss,
            alpha: alpha_f64,
        })
    }
}

const CRITIC_FILES: [&str; 2] = ["q1", "q2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub step: usize,
    pub log_alpha: f64,
    pub twin_q: bool,
}

fn io_err(context: String) -> impl FnOnce(std::io::Error) -> SacError {
    move |source| SacError::Io { context, source }
}

impl SacAgent<f32> {
    /// Writes `policy.bin`, `q1.bin`, `q1_target.bin` (and the `q2` pair when
    /// twin critics are used) plus `trainer_state.json`.
    pub fn save_checkpoint(&self, dir: &Path, step: usize) -> Result<(), SacError> {
        std::fs::create_dir_all(dir).map_err(io_err(format!("creating {}", dir.display())))?;
        self.policy.to_archive().save(dir.join("policy.bin"))?;
        for (i, (q, t)) in self.critics.iter().zip(&self.targets).enumerate() {
            q.to_archive().save(dir.join(format!("{}.bin", CRITIC_FILES[i])))?;
            t.to_archive().save(dir.join(format!("{}_target.bin", CRITIC_FILES[i])))?;
        }
        let state = TrainerState {
            step,
            log_alpha: self.log_alpha,
            twin_q: self.critics.len() == 2,
        };
        let path = dir.join("trainer_state.json");
        std::fs::write(&path, serde_json::to_string_pretty(&state).expect("plain struct"))
            .map_err(io_err(format!("writing {}", path.display())))?;
        Ok(())
    }

    /// Restores networks and temperature. Optimizer moments start fresh.
    pub fn load_checkpoint(
        dir: &Path,
        config: &SacConfig,
        rng: &mut impl Rng,
    ) -> Result<(Self, TrainerState), SacError> {
        let path = dir.join("trainer_state.json");
        let text = std::fs::read_to_string(&path)
            .map_err(io_err(format!("reading {}", path.display())))?;
        let state: TrainerState = serde_json::from_str(&text)
            .map_err(|e| SacError::Checkpoint(format!("{}: {e}", path.display())))?;
        if state.twin_q != config.twin_q {
            return Err(SacError::Checkpoint(format!(
                "checkpoint twin_q = {} but config twin_q = {}",
                state.twin_q, config.twin_q
            )));
        }
        let mut policy = PolicyNetwork::<f32>::new(rng);
        policy.load_archive(&WeightArchive::load(dir.join("policy.bin"))?)?;
        let n = if state.twin_q { 2 } else { 1 };
        let mut critics = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for name in &CRITIC_FILES[..n] {
            let mut q = QNetwork::<f32>::new(rng);
            q.load_archive(&WeightArchive::load(dir.join(format!("{name}.bin")))?)?;
            critics.push(q);
            let mut t = QNetwork::<f32>::new(rng);
            t.load_archive(&WeightArchive::load(dir.join(format!("{name}_target.bin")))?)?;
            targets.push(t);
        }
        let agent = Self::from_parts(config, policy, critics, targets, state.log_alpha);
        Ok((agent, state))
    }
}

