//! Trajectory collection: parallel exploration rollouts for updates and
//! deterministic rollouts for evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::SeriesView;
use crate::env::{episode_count, Env, EnvParams, ResetMode, StepRecord};
use crate::error::{EmsError, Result};
use crate::forecast::ForecasterBundle;
use crate::nn::{gaussian_sample, policy_mode};
use crate::rl::gae::gae_advantages_returns;
use crate::rl::nets::ActorCritic;
use crate::rl::observation::build_observation;
use crate::rl::{PpoConfig, RunningNorm};
use crate::seed_for;

/// One decision step as stored for the update.
#[derive(Debug, Clone)]
pub struct StepSample {
    /// Observation before normalization (feeds the running normalizer).
    pub obs_raw: Vec<f64>,
    /// Observation as the networks consumed it.
    pub obs_norm: Vec<f64>,
    /// Sampled action in environment units, as requested from the plant.
    pub action: f64,
    /// Log-probability of `action` at sampling time.
    pub log_prob_old: f64,
    /// Critic estimate at sampling time (scaled-reward space).
    pub value: f64,
    /// Reward after learner-side scaling.
    pub reward_scaled: f64,
    /// Full environment accounting for this step (raw reward inside).
    pub record: StepRecord,
}

/// One collected episode with its advantage estimates.
#[derive(Debug, Clone)]
pub struct EpisodeSample {
    /// Episode index within the view the rollout ran on.
    pub episode: usize,
    pub steps: Vec<StepSample>,
    pub advantages: Vec<f64>,
    /// Critic regression targets (scaled-reward space).
    pub returns: Vec<f64>,
    /// Sum of raw rewards over the episode.
    pub total_reward_raw: f64,
}

fn run_exploration_episode(
    ac: &ActorCritic,
    bundle: Option<&ForecasterBundle>,
    view: SeriesView<'_>,
    params: &EnvParams,
    norm: &RunningNorm,
    cfg: &PpoConfig,
    episode: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeSample> {
    let bounds = params.action_bounds()?;
    let log_std = ac.log_std()?;
    let (mut env, mut state) = Env::reset(view, params, episode, ResetMode::Train, rng)?;
    let mut h_actor = ac.initial_hidden();
    let mut h_critic = ac.initial_hidden();
    let mut steps = Vec::with_capacity(params.horizon);
    let mut total_raw = 0.0;
    loop {
        let obs_raw = build_observation(
            ac.kind,
            &state,
            &view,
            env.current_hour(),
            bundle,
            cfg.lookahead,
        )?;
        let obs_norm = norm.normalize(&obs_raw);
        let (mean, h_a) = ac.actor_step_infer(&obs_norm, &h_actor)?;
        let (value, h_c) = ac.critic_step_infer(&obs_norm, &h_critic)?;
        let (action, log_prob) = gaussian_sample(mean, log_std, &bounds, rng)?;
        let outcome = env.step(action)?;
        total_raw += outcome.record.reward;
        steps.push(StepSample {
            obs_raw,
            obs_norm,
            action,
            log_prob_old: log_prob,
            value,
            reward_scaled: outcome.record.reward * cfg.reward_scale,
            record: outcome.record,
        });
        h_actor = h_a;
        h_critic = h_c;
        state = outcome.state;
        if outcome.done {
            break;
        }
    }
    let rewards: Vec<f64> = steps.iter().map(|s| s.reward_scaled).collect();
    let values: Vec<f64> = steps.iter().map(|s| s.value).collect();
    let (advantages, returns) =
        gae_advantages_returns(&rewards, &values, cfg.gamma, cfg.gae_lambda)?;
    Ok(EpisodeSample {
        episode,
        steps,
        advantages,
        returns,
        total_reward_raw: total_raw,
    })
}

/// Collects `workers * episodes_per_worker` exploration episodes.
///
/// Every worker draws its episode indices and actions from its own
/// deterministic stream keyed by `(master_seed, iteration, worker)`, and
/// results are concatenated in worker order, so the batch is identical
/// however the threads are scheduled.
pub fn collect_rollouts(
    ac: &ActorCritic,
    bundle: Option<&ForecasterBundle>,
    view: SeriesView<'_>,
    params: &EnvParams,
    norm: &RunningNorm,
    cfg: &PpoConfig,
    master_seed: u64,
    iteration: usize,
) -> Result<Vec<EpisodeSample>> {
    let available = episode_count(view.len(), params.horizon);
    if available == 0 {
        return Err(EmsError::data(format!(
            "view of {} hours is too short for even one {}-step episode",
            view.len(),
            params.horizon
        )));
    }

    let worker_results: Vec<Result<Vec<EpisodeSample>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..cfg.workers)
            .map(|w| {
                let seed = seed_for(master_seed, &format!("rollout/{iteration}/{w}"));
                scope.spawn(move || -> Result<Vec<EpisodeSample>> {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut episodes = Vec::with_capacity(cfg.episodes_per_worker);
                    for _ in 0..cfg.episodes_per_worker {
                        let episode = rng.gen_range(0..available);
                        episodes.push(run_exploration_episode(
                            ac, bundle, view, params, norm, cfg, episode, &mut rng,
                        )?);
                    }
                    Ok(episodes)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| match h.join() {
                Ok(r) => r,
                Err(_) => Err(EmsError::env("rollout worker panicked")),
            })
            .collect()
    });

    let mut batch = Vec::with_capacity(cfg.workers * cfg.episodes_per_worker);
    for result in worker_results {
        batch.extend(result?);
    }
    Ok(batch)
}

/// One deterministically replayed evaluation episode.
#[derive(Debug, Clone)]
pub struct EvalEpisode {
    pub episode: usize,
    /// Sum of raw rewards (the negative of the day's operating cost).
    pub total_reward: f64,
    pub records: Vec<StepRecord>,
}

/// Deterministic evaluation over every episode a view supports.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub episodes: Vec<EvalEpisode>,
    pub mean_total_reward: f64,
}

impl EvalReport {
    /// Mean daily operating cost (positive number) across episodes.
    pub fn mean_daily_cost(&self) -> f64 {
        -self.mean_total_reward
    }

    /// All step records across episodes, in order.
    pub fn all_records(&self) -> impl Iterator<Item = &StepRecord> {
        self.episodes.iter().flat_map(|e| e.records.iter())
    }
}

/// Rolls the deterministic policy (squashed action mean, fixed initial
/// state of charge) over every episode of `view` and reports raw rewards.
pub fn evaluate_policy(
    ac: &ActorCritic,
    bundle: Option<&ForecasterBundle>,
    view: SeriesView<'_>,
    params: &EnvParams,
    norm: &RunningNorm,
    lookahead: usize,
) -> Result<EvalReport> {
    let available = episode_count(view.len(), params.horizon);
    if available == 0 {
        return Err(EmsError::data(format!(
            "view of {} hours is too short for even one {}-step episode",
            view.len(),
            params.horizon
        )));
    }
    let bounds = params.action_bounds()?;
    // Evaluation never consumes randomness; the stream only satisfies the
    // reset signature.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut episodes = Vec::with_capacity(available);
    let mut total = 0.0;
    for episode in 0..available {
        let (mut env, mut state) = Env::reset(view, params, episode, ResetMode::Eval, &mut rng)?;
        let mut h_actor = ac.initial_hidden();
        let mut records = Vec::with_capacity(params.horizon);
        let mut reward_sum = 0.0;
        loop {
            let obs_raw =
                build_observation(ac.kind, &state, &view, env.current_hour(), bundle, lookahead)?;
            let obs_norm = norm.normalize(&obs_raw);
            let (mean, h_a) = ac.actor_step_infer(&obs_norm, &h_actor)?;
            let action = policy_mode(mean, &bounds);
            let outcome = env.step(action)?;
            reward_sum += outcome.record.reward;
            records.push(outcome.record);
            h_actor = h_a;
            state = outcome.state;
            if outcome.done {
                break;
            }
        }
        total += reward_sum;
        episodes.push(EvalEpisode {
            episode,
            total_reward: reward_sum,
            records,
        });
    }
    Ok(EvalReport {
        mean_total_reward: total / available as f64,
        episodes,
    })
}
