//! Generalized advantage estimation over one finite episode.

use crate::error::{EmsError, Result};

/// Computes advantages and value targets for a finished episode.
///
/// `values[t]` is the critic's estimate at step `t`; the terminal value is
/// zero because the episode ends. Scanning backwards with the advantage
/// seeded at zero:
///
/// ```text
/// target[t]    = gamma * lambda * advantage[t+1] + rewards[t] + gamma * values[t+1]
/// advantage[t] = target[t] - values[t]
/// ```
///
/// which is the usual exponentially weighted sum of temporal-difference
/// residuals, with `target` the matching regression target for the critic.
pub fn gae_advantages_returns(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.is_empty() || rewards.len() != values.len() {
        return Err(EmsError::invalid(format!(
            "advantage estimation needs equal non-empty slices, got {} rewards and {} values",
            rewards.len(),
            values.len()
        )));
    }
    for (name, range) in [("rewards", rewards), ("values", values)] {
        if let Some(v) = range.iter().find(|v| !v.is_finite()) {
            return Err(EmsError::numeric(format!("non-finite entry {v} in {name}")));
        }
    }
    for (name, v) in [("gamma", gamma), ("lambda", lambda)] {
        if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
            return Err(EmsError::invalid(format!(
                "{name} must lie in [0, 1], got {v}"
            )));
        }
    }

    let t_max = rewards.len();
    let mut advantages = vec![0.0; t_max];
    let mut targets = vec![0.0; t_max];
    let mut adv_next = 0.0;
    let mut value_next = 0.0;
    for t in (0..t_max).rev() {
        let target = gamma * lambda * adv_next + rewards[t] + gamma * value_next;
        advantages[t] = target - values[t];
        targets[t] = target;
        adv_next = advantages[t];
        value_next = values[t];
    }
    Ok((advantages, targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of the defining sum: the advantage at `t` is the
    /// discounted sum of one-step residuals weighted by `(gamma * lambda)^l`.
    fn brute_force(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let t_max = rewards.len();
        let value_at = |t: usize| if t < t_max { values[t] } else { 0.0 };
        let delta =
            |t: usize| rewards[t] + gamma * value_at(t + 1) - value_at(t);
        (0..t_max)
            .map(|t| {
                (t..t_max)
                    .map(|l| (gamma * lambda).powi((l - t) as i32) * delta(l))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn single_step_episode() {
        let (adv, tgt) = gae_advantages_returns(&[2.0], &[0.5], 0.95, 0.95).unwrap();
        assert_eq!(tgt, vec![2.0]);
        assert_eq!(adv, vec![1.5]);
    }

    #[test]
    fn lambda_zero_reduces_to_one_step_residuals() {
        let rewards = [1.0, -2.0, 0.5];
        let values = [0.3, 0.1, -0.4];
        let gamma = 0.9;
        let (adv, _) = gae_advantages_returns(&rewards, &values, gamma, 0.0).unwrap();
        for t in 0..3 {
            let v_next = if t + 1 < 3 { values[t + 1] } else { 0.0 };
            let delta = rewards[t] + gamma * v_next - values[t];
            assert!((adv[t] - delta).abs() < 1e-15, "t={t}: {} vs {delta}", adv[t]);
        }
    }

    #[test]
    fn lambda_one_gives_discounted_returns_minus_values() {
        let rewards = [1.0, 2.0, 3.0];
        let values = [0.5, -0.5, 0.25];
        let gamma = 0.8;
        let (adv, tgt) = gae_advantages_returns(&rewards, &values, gamma, 1.0).unwrap();
        // With lambda = 1 the target telescopes to the full discounted return.
        let g2 = 3.0;
        let g1 = 2.0 + gamma * g2;
        let g0 = 1.0 + gamma * g1;
        for (t, g) in [g0, g1, g2].iter().enumerate() {
            assert!((tgt[t] - g).abs() < 1e-12);
            assert!((adv[t] - (g - values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_on_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let len = rng.gen_range(1..=40);
            let rewards: Vec<f64> = (0..len).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let gamma = rng.gen_range(0.0..=1.0);
            let lambda = rng.gen_range(0.0..=1.0);
            let (adv, tgt) =
                gae_advantages_returns(&rewards, &values, gamma, lambda).unwrap();
            let oracle = brute_force(&rewards, &values, gamma, lambda);
            for t in 0..len {
                worst = worst.max((adv[t] - oracle[t]).abs());
                // Target and advantage always differ by the value estimate.
                assert!((tgt[t] - (adv[t] + values[t])).abs() < 1e-12);
            }
        }
        assert!(worst < 1e-10, "worst recursion/sum disagreement {worst}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(gae_advantages_returns(&[], &[], 0.9, 0.9).is_err());
        assert!(gae_advantages_returns(&[1.0], &[1.0, 2.0], 0.9, 0.9).is_err());
        assert!(gae_advantages_returns(&[f64::NAN], &[0.0], 0.9, 0.9).is_err());
        assert!(gae_advantages_returns(&[1.0], &[0.0], 1.5, 0.9).is_err());
        assert!(gae_advantages_returns(&[1.0], &[0.0], 0.9, -0.1).is_err());
    }
}
