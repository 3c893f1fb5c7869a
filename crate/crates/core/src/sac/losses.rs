//! Soft actor-critic objectives with explicit noise, so they are pure
//! functions of parameters and can be checked against finite differences.

use super::buffer::Batch;
use super::SacError;
use crate::neural::{
    squash, Grads, PolicyNetwork, QEncoding, QNetwork, Scalar, Tensor, ACTION_DIM,
};

pub type Noise<T> = [T; ACTION_DIM];

fn check_noise<T>(noise: &[Noise<T>], n: usize) -> Result<(), SacError> {
    if noise.len() == n {
        Ok(())
    } else {
        Err(SacError::Precondition(format!(
            "{} noise rows for a batch of {n}",
            noise.len()
        )))
    }
}

/// Squashed samples for every row of a policy output.
struct Sampled<T> {
    actions: Tensor<T>,
    samples: Vec<crate::neural::SquashedSample<T>>,
}

fn sample_rows<T: Scalar>(mu: &Tensor<T>, log_std: &Tensor<T>, noise: &[Noise<T>]) -> Sampled<T> {
    let samples: Vec<_> = (0..mu.rows())
        .map(|i| squash(mu.row(i), log_std.row(i), &noise[i]))
        .collect();
    let actions = Tensor::from_vec(
        &[samples.len(), ACTION_DIM],
        samples.iter().flat_map(|s| s.action).collect(),
    )
    .expect("rows of four");
    Sampled { actions, samples }
}

/// Bootstrap targets `y = r + gamma (1 - done) (min_j Qbar_j(s', a') - alpha log pi(a'|s'))`
/// with `a'` drawn from the current policy using `noise`.
pub fn soft_targets<T: Scalar>(
    policy: &PolicyNetwork<T>,
    targets: &[&QNetwork<T>],
    batch: &Batch<T>,
    alpha: T,
    gamma: T,
    noise: &[Noise<T>],
) -> Result<Vec<T>, SacError> {
    let n = batch.len();
    check_noise(noise, n)?;
    if batch.terminals.iter().all(|&d| d) {
        return Ok(batch.rewards.clone());
    }
    let out = policy.forward(&batch.next_states)?;
    let next = sample_rows(&out.mu, &out.log_std, noise);
    let mut min_q: Option<Vec<T>> = None;
    for q in targets {
        let v = q.forward(&batch.next_states, &next.actions)?.into_data();
        min_q = Some(match min_q {
            None => v,
            Some(m) => m.into_iter().zip(v).map(|(a, b)| a.min(b)).collect(),
        });
    }
    let min_q = min_q.ok_or_else(|| SacError::Precondition("no target critics".into()))?;
    Ok((0..n)
        .map(|i| {
            if batch.terminals[i] {
                batch.rewards[i]
            } else {
                batch.rewards[i] + gamma * (min_q[i] - alpha * next.samples[i].log_prob)
            }
        })
        .collect())
}

pub struct LossWithGrads<T> {
    pub loss: T,
    pub grads: Grads<T>,
}

/// `mean_i 0.5 (Q(s_i, a_i) - y_i)^2` and its gradient over all critic
/// parameters. `encoding` must come from `q.encode(states)`.
pub fn q_loss<T: Scalar>(
    q: &QNetwork<T>,
    encoding: &QEncoding<T>,
    actions: &Tensor<T>,
    targets: &[T],
) -> Result<LossWithGrads<T>, SacError> {
    let n = targets.len();
    if encoding.batch() != n {
        return Err(SacError::Precondition(format!(
            "{} encoded states for {n} targets",
            encoding.batch()
        )));
    }
    let (values, tape) = q.evaluate(encoding, actions)?;
    let scale = T::one() / T::from_f64_lossy(n as f64);
    let half = T::from_f64_lossy(0.5);
    let diffs: Vec<T> = values.data().iter().zip(targets).map(|(&v, &y)| v - y).collect();
    let loss = diffs.iter().fold(T::zero(), |acc, &d| acc + half * d * d) * scale;
    let grad_q = Tensor::from_vec(&[n], diffs.iter().map(|&d| d * scale).collect())?;
    let mut grads = q.params().zeros_like();
    let (g_features, _) = q.evaluate_backward(&tape, &grad_q, Some(&mut grads));
    q.encode_backward(encoding, &g_features, &mut grads);
    Ok(LossWithGrads { loss, grads })
}

pub struct PolicyLoss<T> {
    pub loss: T,
    pub grads: Grads<T>,
    /// `log pi(a|s)` of the reparameterized samples, reused by the
    /// temperature update.
    pub log_probs: Vec<T>,
}

/// `mean_i [alpha log pi(a_i|s_i) - min_j Q_j(s_i, a_i)]` with
/// `a_i = 2 tanh(mu_i + sigma_i noise_i)`; gradients flow to the policy only.
/// Each critic comes with its encoding of `states`.
pub fn policy_loss<T: Scalar>(
    policy: &PolicyNetwork<T>,
    critics: &[(&QNetwork<T>, &QEncoding<T>)],
    states: &Tensor<T>,
    alpha: T,
    noise: &[Noise<T>],
) -> Result<PolicyLoss<T>, SacError> {
    let n = states.shape().first().copied().unwrap_or(0);
    check_noise(noise, n)?;
    if critics.is_empty() {
        return Err(SacError::Precondition("no critics".into()));
    }
    let (out, tape) = policy.forward_with_tape(states)?;
    let sampled = sample_rows(&out.mu, &out.log_std, noise);
    let mut evaluated = Vec::with_capacity(critics.len());
    for (q, enc) in critics {
        evaluated.push(q.evaluate(enc, &sampled.actions)?);
    }
    // Index of the critic attaining the minimum, per row (first on ties).
    let argmin: Vec<usize> = (0..n)
        .map(|i| {
            (1..evaluated.len()).fold(0, |best, j| {
                if evaluated[j].0.data()[i] < evaluated[best].0.data()[i] {
                    j
                } else {
                    best
                }
            })
        })
        .collect();
    let scale = T::one() / T::from_f64_lossy(n as f64);
    let mut loss = T::zero();
    for i in 0..n {
        loss = loss + alpha * sampled.samples[i].log_prob - evaluated[argmin[i]].0.data()[i];
    }
    loss = loss * scale;

    let mut d_action = vec![T::zero(); n * ACTION_DIM];
    for (j, ((q, _), (_, head_tape))) in critics.iter().zip(&evaluated).enumerate() {
        if !argmin.contains(&j) {
            continue;
        }
        let grad_q = Tensor::from_vec(
            &[n],
            argmin.iter().map(|&m| if m == j { -scale } else { T::zero() }).collect(),
        )?;
        let (_, da) = q.evaluate_backward(head_tape, &grad_q, None);
        for (acc, &g) in d_action.iter_mut().zip(da.data()) {
            *acc = *acc + g;
        }
    }

    let mut grad_mu = vec![T::zero(); n * ACTION_DIM];
    let mut grad_log_std = vec![T::zero(); n * ACTION_DIM];
    for i in 0..n {
        let s = &sampled.samples[i];
        for k in 0..ACTION_DIM {
            let idx = i * ACTION_DIM + k;
            let through_q = d_action[idx] * s.da_du[k];
            grad_mu[idx] = alpha * scale * s.dlogp_dmu[k] + through_q;
            grad_log_std[idx] = alpha * scale * s.dlogp_dlog_std[k] + through_q * s.du_dlog_std[k];
        }
    }
    let mut grads = policy.params().zeros_like();
    policy.backward(
        &tape,
        &Tensor::from_vec(&[n, ACTION_DIM], grad_mu)?,
        &Tensor::from_vec(&[n, ACTION_DIM], grad_log_std)?,
        &mut grads,
    );
    Ok(PolicyLoss {
        loss,
        grads,
        log_probs: sampled.samples.iter().map(|s| s.log_prob).collect(),
    })
}

/// `mean_i [-log_alpha (log pi_i + target_entropy)]` and its derivative in
/// `log_alpha`.
pub fn temperature_loss(log_alpha: f64, log_probs: &[f64], target_entropy: f64) -> (f64, f64) {
    let n = log_probs.len().max(1) as f64;
    let mean_gap = log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / n;
    (-log_alpha * mean_gap, -mean_gap)
}
