//! The outer training loop: collect, normalize, update, repeat.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SeriesView;
use crate::env::EnvParams;
use crate::error::{EmsError, Result};
use crate::forecast::{required_horizons, ForecasterBundle};
use crate::rl::nets::ActorCritic;
use crate::rl::observation::observation_width;
use crate::rl::rollout::{collect_rollouts, evaluate_policy};
use crate::rl::update::ppo_update;
use crate::rl::{PpoConfig, RunningNorm, SchemeKind};
use crate::seed_for;

/// Summary of one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Mean raw episode reward of the freshly collected batch.
    pub mean_total_reward_raw: f64,
    pub actor_loss_first: f64,
    pub actor_loss_last: f64,
    pub critic_loss_first: f64,
    pub critic_loss_last: f64,
    pub mean_abs_ratio_minus_one: f64,
    pub median_abs_ratio_minus_one: f64,
    pub actor_grad_norm: f64,
    pub critic_grad_norm: f64,
    pub log_std: f64,
}

/// One deterministic held-out evaluation taken during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Iteration after which the evaluation ran (0-based, like records).
    pub iteration: usize,
    /// Mean raw episode reward over every held-out episode.
    pub mean_total_reward: f64,
}

/// Everything a finished (or safely aborted) training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub nets: ActorCritic,
    pub obs_norm: RunningNorm,
    pub records: Vec<IterationRecord>,
    /// Periodic deterministic evaluations on the held-out view, when one
    /// was provided and `eval_every` is non-zero.
    pub eval_points: Vec<EvalPoint>,
    /// Set when optimization blew up; `nets` then holds the parameters from
    /// the last completed iteration.
    pub divergence: Option<String>,
}

/// Trains a policy of the given kind on `view`.
///
/// The with-prediction kind requires a forecaster bundle covering every
/// horizon `cfg.lookahead` implies; the bundle stays frozen throughout (the
/// function checks this and fails loudly if it were ever violated). The
/// without-prediction kind must not be handed a bundle.
///
/// A numeric blow-up during an iteration does not destroy the run: the
/// parameters and normalizer roll back to the end of the previous iteration
/// and training stops early with the cause recorded.
///
/// When `eval_view` is given and `cfg.eval_every` is non-zero, the policy is
/// additionally evaluated deterministically on that view every `eval_every`
/// iterations and after the last one. Evaluation consumes no training
/// randomness, so supplying it never changes the trained parameters.
pub fn train_policy(
    kind: SchemeKind,
    view: SeriesView<'_>,
    eval_view: Option<SeriesView<'_>>,
    env_params: &EnvParams,
    cfg: &PpoConfig,
    bundle: Option<&ForecasterBundle>,
    master_seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    env_params.validate()?;
    match kind {
        SchemeKind::WithPrediction => {
            let b = bundle.ok_or_else(|| {
                EmsError::invalid("with-prediction training needs a forecaster bundle")
            })?;
            for (q, horizons) in required_horizons(cfg.lookahead) {
                for h in horizons {
                    if !b.has(q, h) {
                        return Err(EmsError::invalid(format!(
                            "bundle lacks the {h}-step {q} model a lookahead of \
                             {} hours requires",
                            cfg.lookahead
                        )));
                    }
                }
            }
            if b.warmup_hours > env_params.horizon {
                return Err(EmsError::invalid(format!(
                    "forecaster warm-up of {} hours exceeds the {} hours of history \
                     available at an episode start",
                    b.warmup_hours, env_params.horizon
                )));
            }
        }
        SchemeKind::WithoutPrediction => {
            if bundle.is_some() {
                return Err(EmsError::invalid(
                    "without-prediction training does not take a forecaster bundle",
                ));
            }
        }
    }
    let bundle_fingerprint = bundle.map(|b| b.fingerprint());

    let obs_width = observation_width(kind, cfg.lookahead);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(master_seed, "policy-init"));
    let mut ac = ActorCritic::new(kind, obs_width, cfg.gru_hidden, &mut rng)?;
    let mut norm = RunningNorm::new(obs_width);
    let bounds = env_params.action_bounds()?;

    let mut records = Vec::with_capacity(cfg.iterations);
    let mut eval_points = Vec::new();
    let mut divergence = None;
    for iteration in 0..cfg.iterations {
        let actor_snapshot = ac.actor.snapshot();
        let critic_snapshot = ac.critic.snapshot();
        let norm_snapshot = norm.clone();
        let eval_due = cfg.eval_every != 0
            && ((iteration + 1) % cfg.eval_every == 0 || iteration + 1 == cfg.iterations);

        let attempt = (|| -> Result<(IterationRecord, Option<EvalPoint>)> {
            let batch = collect_rollouts(
                &ac,
                bundle,
                view,
                env_params,
                &norm,
                cfg,
                master_seed,
                iteration,
            )?;
            if cfg.normalize_observations {
                for ep in &batch {
                    for s in &ep.steps {
                        norm.update(&s.obs_raw)?;
                    }
                }
            }
            let stats = ppo_update(&mut ac, &batch, &bounds, cfg)?;
            let mean_reward = batch.iter().map(|e| e.total_reward_raw).sum::<f64>()
                / batch.len() as f64;
            let record = IterationRecord {
                iteration,
                mean_total_reward_raw: mean_reward,
                actor_loss_first: stats.actor_losses[0],
                actor_loss_last: *stats.actor_losses.last().expect("at least one pass"),
                critic_loss_first: stats.critic_losses[0],
                critic_loss_last: *stats.critic_losses.last().expect("at least one pass"),
                mean_abs_ratio_minus_one: stats.mean_abs_ratio_minus_one,
                median_abs_ratio_minus_one: stats.median_abs_ratio_minus_one,
                actor_grad_norm: stats.actor_grad_norm,
                critic_grad_norm: stats.critic_grad_norm,
                log_std: ac.log_std()?,
            };
            let point = match (eval_due, eval_view) {
                (true, Some(held_out)) => {
                    let report =
                        evaluate_policy(&ac, bundle, held_out, env_params, &norm, cfg.lookahead)?;
                    Some(EvalPoint {
                        iteration,
                        mean_total_reward: report.mean_total_reward,
                    })
                }
                _ => None,
            };
            Ok((record, point))
        })();

        match attempt {
            Ok((record, point)) => {
                records.push(record);
                eval_points.extend(point);
            }
            Err(e) => {
                ac.actor.restore(&actor_snapshot)?;
                ac.critic.restore(&critic_snapshot)?;
                norm = norm_snapshot;
                divergence = Some(format!("iteration {iteration}: {e}"));
                break;
            }
        }
    }

    if let (Some(before), Some(b)) = (bundle_fingerprint, bundle) {
        if b.fingerprint() != before {
            return Err(EmsError::invalid(
                "forecaster bundle changed during policy training; it must stay frozen",
            ));
        }
    }

    Ok(TrainOutcome {
        nets: ac,
        obs_norm: norm,
        records,
        eval_points,
        divergence,
    })
}
