//! Tanh-squashed diagonal Gaussian over the 4-D action box `[-2, 2]^4`.
//!
//! `u = mu + sigma * eps`, `a = 2 tanh(u)` and
//!
//! ```text
//! log pi(a) = sum_k log N(u_k; mu_k, sigma_k) - sum_k [ln 2 + ln(1 - tanh^2 u_k + 1e-6)]
//! ```

use rand::Rng;
use rand_distr::StandardNormal;

use super::nets::ACTION_DIM;
use super::tensor::Scalar;
use crate::tone_curve::{ActionVector, ACTION_LIMIT};

pub const SQUASH_EPS: f64 = 1e-6;

/// `0.5 * ln(2 pi)`.
const HALF_LN_TWO_PI: f64 = 0.918_938_533_204_672_8;

/// Per-component derivatives of one squashed sample, used by the policy loss.
#[derive(Debug, Clone, Copy)]
pub struct SquashedSample<T> {
    pub action: [T; ACTION_DIM],
    pub log_prob: T,
    /// `d log_prob / d mu_k` with the noise held fixed.
    pub dlogp_dmu: [T; ACTION_DIM],
    /// `d log_prob / d log_sigma_k` with the noise held fixed.
    pub dlogp_dlog_std: [T; ACTION_DIM],
    /// `d a_k / d u_k`.
    pub da_du: [T; ACTION_DIM],
    /// `sigma_k * eps_k`, i.e. `d u_k / d log_sigma_k`.
    pub du_dlog_std: [T; ACTION_DIM],
}

/// Reparameterized sample for fixed standard-normal noise.
pub fn squash<T: Scalar>(
    mu: &[T],
    log_std: &[T],
    noise: &[T],
) -> SquashedSample<T> {
    let two = T::from_f64_lossy(ACTION_LIMIT);
    let eps = T::from_f64_lossy(SQUASH_EPS);
    let half = T::from_f64_lossy(0.5);
    let const_term = T::from_f64_lossy(HALF_LN_TWO_PI + std::f64::consts::LN_2);
    let mut out = SquashedSample {
        action: [T::zero(); ACTION_DIM],
        log_prob: T::zero(),
        dlogp_dmu: [T::zero(); ACTION_DIM],
        dlogp_dlog_std: [T::zero(); ACTION_DIM],
        da_du: [T::zero(); ACTION_DIM],
        du_dlog_std: [T::zero(); ACTION_DIM],
    };
    for k in 0..ACTION_DIM {
        let sigma = log_std[k].exp();
        let du_dls = sigma * noise[k];
        let u = mu[k] + du_dls;
        let t = u.tanh();
        let sech2 = T::one() - t * t;
        let inner = sech2 + eps;
        out.action[k] = two * t;
        out.log_prob = out.log_prob - half * noise[k] * noise[k] - log_std[k] - const_term - inner.ln();
        // d/du of -ln(1 - tanh^2 u + eps).
        let dcorr = two * t * sech2 / inner;
        out.dlogp_dmu[k] = dcorr;
        out.dlogp_dlog_std[k] = -T::one() + dcorr * du_dls;
        out.da_du[k] = two * sech2;
        out.du_dlog_std[k] = du_dls;
    }
    out
}

/// Log-density of a squashed action, evaluated by inverting the squash.
pub fn log_prob_of_action(action: &[f64; ACTION_DIM], mu: &[f64], log_std: &[f64]) -> f64 {
    let mut lp = 0.0;
    for k in 0..ACTION_DIM {
        let t = (action[k] / ACTION_LIMIT).clamp(-1.0 + 1e-15, 1.0 - 1e-15);
        let u = t.atanh();
        let sigma = log_std[k].exp();
        let z = (u - mu[k]) / sigma;
        lp += -0.5 * z * z - log_std[k] - HALF_LN_TWO_PI;
        lp -= std::f64::consts::LN_2 + (1.0 - t * t + SQUASH_EPS).ln();
    }
    lp
}

/// Draws `u ~ N(mu, sigma)` and returns the squashed action with its
/// log-probability.
pub fn sample_action(mu: &[f64], log_std: &[f64], rng: &mut impl Rng) -> (ActionVector, f64) {
    let noise: [f64; ACTION_DIM] = std::array::from_fn(|_| rng.sample(StandardNormal));
    let s = squash(mu, log_std, &noise);
    (clamp_action(s.action), s.log_prob)
}

/// `2 tanh(mu)`, the test-time action.
pub fn deterministic_action(mu: &[f64]) -> ActionVector {
    let a: [f64; ACTION_DIM] = std::array::from_fn(|k| ACTION_LIMIT * mu[k].tanh());
    clamp_action(a)
}

/// Builds an [`ActionVector`] from squashed outputs, which lie in the box
/// by construction.
pub fn clamp_action<T: Scalar>(a: [T; ACTION_DIM]) -> ActionVector {
    let v: [f64; ACTION_DIM] =
        std::array::from_fn(|k| a[k].to_f64_lossy().clamp(-ACTION_LIMIT, ACTION_LIMIT));
    ActionVector::from_array(v).expect("clamped into range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, _) = sample_action(&[0.0; 4], &[-20.0; 4], &mut rng);
        assert!(a.to_array().iter().all(|v| v.abs() < 1e-6));

        let (a, lp) = sample_action(&[10.0; 4], &[-5.0; 4], &mut rng);
        assert!(a.to_array().iter().all(|&v| (v - 2.0).abs() < 1e-6));
        assert!(lp.is_finite());

        assert_eq!(deterministic_action(&[0.0; 4]), ActionVector::identity());
        let half = 0.5f64.atanh();
        let a = deterministic_action(&[half, -half, 40.0, -40.0]);
        assert!((a.theta1 - 1.0).abs() < 1e-12);
        assert!((a.theta2 + 1.0).abs() < 1e-12);
        assert_eq!(a.r1, 2.0);
        assert_eq!(a.r2, -2.0);
    }

    #[test]
    fn sampled_log_prob_matches_inverted_density() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mu = [0.3, -0.2, 0.1, 0.0];
        let ls = [-0.5, -1.0, -0.7, -0.2];
        for _ in 0..100 {
            let (a, lp) = sample_action(&mu, &ls, &mut rng);
            let inv = log_prob_of_action(&a.to_array(), &mu, &ls);
            assert!((lp - inv).abs() < 1e-6 * (1.0 + lp.abs()), "{lp} vs {inv}");
        }
    }

    #[test]
    fn squash_derivatives_match_finite_differences() {
        let mu: [f64; 4] = [0.4, -0.3, 0.8, -1.1];
        let ls: [f64; 4] = [-0.3, 0.2, -1.0, 0.5];
        let noise: [f64; 4] = [0.7, -1.2, 0.3, 0.9];
        let s = squash(&mu, &ls, &noise);
        let h = 1e-6;
        for k in 0..4 {
            let mut up = mu;
            let mut dn = mu;
            up[k] += h;
            dn[k] -= h;
            let fd = (squash(&up, &ls, &noise).log_prob - squash(&dn, &ls, &noise).log_prob) / (2.0 * h);
            assert!((fd - s.dlogp_dmu[k]).abs() < 1e-6);

            let mut up = ls;
            let mut dn = ls;
            up[k] += h;
            dn[k] -= h;
            let fd = (squash(&mu, &up, &noise).log_prob - squash(&mu, &dn, &noise).log_prob) / (2.0 * h);
            assert!((fd - s.dlogp_dlog_std[k]).abs() < 1e-6);
        }
    }
}
