//! Proximal policy optimization for the battery dispatch task.
//!
//! Two scheme variants share the machinery here:
//!
//! * **With prediction** — a feedforward actor/critic pair consumes the raw
//!   state plus forecasts of generation, demand and price supplied by a
//!   frozen forecaster bundle.
//! * **Without prediction** — a recurrent actor/critic pair consumes the raw
//!   state only and carries a hidden state across the episode, learning
//!   temporal structure end to end.
//!
//! Both sample a tanh-squashed Gaussian action (battery power in kW), score
//! trajectories with generalized advantage estimation, and update with the
//! clipped surrogate objective. Update-time log-probabilities are replayed
//! through graph code that is bit-identical to the inference code used
//! while sampling, so the importance ratio of the first update pass is
//! exactly one.

mod gae;
mod nets;
mod observation;
mod rollout;
mod trainer;
mod update;

pub use gae::gae_advantages_returns;
pub use nets::ActorCritic;
pub use observation::{build_observation, observation_width};
pub use rollout::{
    collect_rollouts, evaluate_policy, EpisodeSample, EvalEpisode, EvalReport, StepSample,
};
pub use trainer::{train_policy, EvalPoint, IterationRecord, TrainOutcome};
pub use update::{clipped_surrogate, ppo_update, UpdateStats};

use serde::{Deserialize, Serialize};

use crate::error::{EmsError, Result};

/// Which of the two scheme variants a policy belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    /// Feedforward actor/critic over state + forecast features.
    WithPrediction,
    /// Recurrent actor/critic over the raw state.
    WithoutPrediction,
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SchemeKind::WithPrediction => write!(f, "with-prediction"),
            SchemeKind::WithoutPrediction => write!(f, "without-prediction"),
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = EmsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "with-prediction" => Ok(SchemeKind::WithPrediction),
            "without-prediction" => Ok(SchemeKind::WithoutPrediction),
            other => Err(EmsError::invalid(format!(
                "unknown scheme '{other}': expected 'with-prediction' or 'without-prediction'"
            ))),
        }
    }
}

/// Hyperparameters of the policy optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub iterations: usize,
    /// Rollout workers per iteration; each collects `episodes_per_worker`
    /// episodes with its own deterministic seed.
    pub workers: usize,
    pub episodes_per_worker: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    /// Full passes over the freshly collected batch per iteration.
    pub update_epochs: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Global gradient-norm ceiling per network; zero disables clipping.
    pub grad_clip_norm: f64,
    pub normalize_advantages: bool,
    pub normalize_observations: bool,
    /// Rewards are multiplied by this inside the learner so value targets
    /// sit near unit scale; evaluation always reports raw rewards.
    pub reward_scale: f64,
    /// Hidden width of the recurrent encoder (without-prediction scheme).
    pub gru_hidden: usize,
    /// Hours of forecast lookahead in the observation (with-prediction
    /// scheme).
    pub lookahead: usize,
    /// Run a deterministic held-out evaluation every this many iterations
    /// (and after the final one); zero disables periodic evaluation.
    pub eval_every: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            iterations: 500,
            workers: 10,
            episodes_per_worker: 1,
            gamma: 0.95,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            update_epochs: 3,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            grad_clip_norm: 0.5,
            normalize_advantages: true,
            normalize_observations: true,
            reward_scale: 0.01,
            gru_hidden: 32,
            lookahead: 1,
            eval_every: 10,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0
            || self.workers == 0
            || self.episodes_per_worker == 0
            || self.update_epochs == 0
            || self.gru_hidden == 0
            || self.lookahead == 0
        {
            return Err(EmsError::invalid(
                "ppo config: iterations, workers, episodes_per_worker, update_epochs, \
                 gru_hidden and lookahead must all be at least 1",
            ));
        }
        for (name, v, lo, hi) in [
            ("gamma", self.gamma, 0.0, 1.0),
            ("gae_lambda", self.gae_lambda, 0.0, 1.0),
            ("clip_epsilon", self.clip_epsilon, f64::MIN_POSITIVE, 1.0),
        ] {
            if !(v.is_finite() && v >= lo && v <= hi) {
                return Err(EmsError::invalid(format!(
                    "ppo config: {name} must lie in [{lo}, {hi}], got {v}"
                )));
            }
        }
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("reward_scale", self.reward_scale),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(EmsError::invalid(format!(
                    "ppo config: {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.grad_clip_norm.is_finite() && self.grad_clip_norm >= 0.0) {
            return Err(EmsError::invalid(format!(
                "ppo config: grad_clip_norm must be zero (disabled) or positive, got {}",
                self.grad_clip_norm
            )));
        }
        Ok(())
    }
}

/// Streaming per-feature mean/variance (Welford) used to normalize
/// observations. Degenerate early states fall back gracefully: with no data
/// it is the identity, with one sample it only centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    width: usize,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningNorm {
    pub fn new(width: usize) -> Self {
        RunningNorm {
            width,
            count: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.width {
            return Err(EmsError::invalid(format!(
                "normalizer of width {} fed a vector of width {}",
                self.width,
                x.len()
            )));
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.width {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
        Ok(())
    }

    /// Standardizes and clamps to ±10. Identity until the first update.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return x.to_vec();
        }
        let n = self.count as f64;
        (0..self.width)
            .map(|i| {
                let std = if self.count >= 2 {
                    (self.m2[i] / n).sqrt().max(1e-8)
                } else {
                    1.0
                };
                ((x[i] - self.mean[i]) / std).clamp(-10.0, 10.0)
            })
            .collect()
    }
}
