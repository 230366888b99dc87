//! Clipped-surrogate policy and value updates over a collected batch.

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{EmsError, Result};
use crate::nn::{
    gaussian_log_prob_graph, ActionBounds, ParameterStore, LOG_STD_MAX, LOG_STD_MIN,
};
use crate::rl::nets::{step_graph, ActorCritic, LOG_STD_NAME};
use crate::rl::rollout::EpisodeSample;
use crate::rl::PpoConfig;

/// The pessimistic per-step policy objective: the smaller of the importance-
/// weighted advantage and its clipped counterpart,
/// `min(ratio * adv, clamp(ratio, 1-eps, 1+eps) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

/// Diagnostics from one update call.
#[derive(Debug, Clone)]
pub struct UpdateStats {
    /// Actor loss before each pass's step (negated mean surrogate).
    pub actor_losses: Vec<f64>,
    /// Critic loss before each pass's step (mean squared target error).
    pub critic_losses: Vec<f64>,
    /// Mean |ratio - 1| measured on the final pass.
    pub mean_abs_ratio_minus_one: f64,
    /// Median |ratio - 1| measured on the final pass.
    pub median_abs_ratio_minus_one: f64,
    /// Actor gradient norm on the final pass, before clipping.
    pub actor_grad_norm: f64,
    /// Critic gradient norm on the final pass, before clipping.
    pub critic_grad_norm: f64,
}

struct PassOutcome {
    losses: Vec<f64>,
    final_grad_norm: f64,
    final_ratios: Vec<f64>,
}

/// Runs `passes` forward/backward/step cycles over a prebuilt graph,
/// refreshing the graph's parameters from the store before each pass.
fn run_passes(
    store: &mut ParameterStore,
    g: &mut Graph,
    loss: NodeId,
    ratio_nodes: &[NodeId],
    lr: f64,
    passes: usize,
    grad_clip: f64,
    clamp_after: Option<(&str, f64, f64)>,
    label: &str,
) -> Result<PassOutcome> {
    let mut losses = Vec::with_capacity(passes);
    let mut final_grad_norm = 0.0;
    let mut final_ratios = Vec::new();
    for pass in 0..passes {
        store.write_params(g)?;
        let loss_value = g
            .forward(loss, &[])
            .and_then(|t| t.item())
            .map_err(|e| EmsError::diverged(format!("{label} pass {pass}: {e}")))?;
        losses.push(loss_value);
        if pass + 1 == passes {
            for &id in ratio_nodes {
                final_ratios.push(g.value(id)?.values()[0]);
            }
        }
        let grads = g.backward(loss, 1.0)?;
        store.zero_grads();
        store.accumulate_grads(&grads)?;
        final_grad_norm = store.grad_norm();
        if grad_clip > 0.0 {
            store.clip_grad_norm(grad_clip);
        }
        store
            .adam_step(lr)
            .map_err(|e| EmsError::diverged(format!("{label} pass {pass}: {e}")))?;
        if let Some((name, lo, hi)) = clamp_after {
            store.clamp_value(name, lo, hi)?;
        }
    }
    Ok(PassOutcome {
        losses,
        final_grad_norm,
        final_ratios,
    })
}

/// Applies `cfg.update_epochs` clipped-surrogate passes to the actor and as
/// many squared-error passes to the critic, mutating both stores in place.
///
/// Log-probabilities are replayed through graph code bit-identical to the
/// sampling-time inference code, so on the first pass every importance
/// ratio is exactly one.
pub fn ppo_update(
    ac: &mut ActorCritic,
    batch: &[EpisodeSample],
    bounds: &ActionBounds,
    cfg: &PpoConfig,
) -> Result<UpdateStats> {
    cfg.validate()?;
    if batch.is_empty() || batch.iter().any(|e| e.steps.is_empty()) {
        return Err(EmsError::invalid("update needs a non-empty batch"));
    }

    // Flatten and optionally standardize the advantages (they multiply the
    // ratio nodes as plain constants).
    let mut advantages: Vec<f64> = batch
        .iter()
        .flat_map(|e| e.advantages.iter().copied())
        .collect();
    if cfg.normalize_advantages {
        let n = advantages.len() as f64;
        let mean = advantages.iter().sum::<f64>() / n;
        let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        for a in advantages.iter_mut() {
            *a = (*a - mean) / (std + 1e-8);
        }
    }

    let hidden_width = ac.gru_hidden.max(1);

    // ----------------------------------------------------------- actor graph
    let mut ag = Graph::new();
    let log_std_node = ac.actor.param_node(&mut ag, LOG_STD_NAME)?;
    let mut surrogates = Vec::new();
    let mut ratio_nodes = Vec::new();
    let mut flat = 0usize;
    for ep in batch {
        let mut h = ag.constant(Tensor::zeros(&[hidden_width]))?;
        for step in &ep.steps {
            let obs = ag.constant(Tensor::vector(step.obs_norm.clone()))?;
            let (mean, h_next) = step_graph(ac, &ac.actor, &mut ag, obs, h)?;
            h = h_next;
            let lp = gaussian_log_prob_graph(&mut ag, mean, log_std_node, bounds, step.action)?;
            let delta = ag.shift(lp, -step.log_prob_old)?;
            let ratio = ag.exp(delta)?;
            ratio_nodes.push(ratio);
            let adv = advantages[flat];
            flat += 1;
            let unclipped = ag.scale(ratio, adv)?;
            let clipped_ratio = ag.clip(ratio, 1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon)?;
            let clipped = ag.scale(clipped_ratio, adv)?;
            surrogates.push(ag.min(unclipped, clipped)?);
        }
    }
    let stacked = ag.concat(&surrogates)?;
    let objective = ag.mean(stacked)?;
    let actor_loss = ag.scale(objective, -1.0)?;

    let actor_out = run_passes(
        &mut ac.actor,
        &mut ag,
        actor_loss,
        &ratio_nodes,
        cfg.actor_lr,
        cfg.update_epochs,
        cfg.grad_clip_norm,
        Some((LOG_STD_NAME, LOG_STD_MIN, LOG_STD_MAX)),
        "actor",
    )?;

    // ---------------------------------------------------------- critic graph
    let mut cg = Graph::new();
    let mut squared = Vec::new();
    for ep in batch {
        let mut h = cg.constant(Tensor::zeros(&[hidden_width]))?;
        for (step, &target) in ep.steps.iter().zip(ep.returns.iter()) {
            let obs = cg.constant(Tensor::vector(step.obs_norm.clone()))?;
            let (value, h_next) = step_graph(ac, &ac.critic, &mut cg, obs, h)?;
            h = h_next;
            let err = cg.shift(value, -target)?;
            squared.push(cg.square(err)?);
        }
    }
    let stacked = cg.concat(&squared)?;
    let critic_loss = cg.mean(stacked)?;

    let critic_out = run_passes(
        &mut ac.critic,
        &mut cg,
        critic_loss,
        &[],
        cfg.critic_lr,
        cfg.update_epochs,
        cfg.grad_clip_norm,
        None,
        "critic",
    )?;

    // ------------------------------------------------------------ statistics
    let mut deviations: Vec<f64> = actor_out
        .final_ratios
        .iter()
        .map(|r| (r - 1.0).abs())
        .collect();
    deviations.sort_by(f64::total_cmp);
    let mean_dev = deviations.iter().sum::<f64>() / deviations.len() as f64;
    let median_dev = if deviations.len() % 2 == 1 {
        deviations[deviations.len() / 2]
    } else {
        0.5 * (deviations[deviations.len() / 2 - 1] + deviations[deviations.len() / 2])
    };

    Ok(UpdateStats {
        actor_losses: actor_out.losses,
        critic_losses: critic_out.losses,
        mean_abs_ratio_minus_one: mean_dev,
        median_abs_ratio_minus_one: median_dev,
        actor_grad_norm: actor_out.final_grad_norm,
        critic_grad_norm: critic_out.final_grad_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};
    use crate::env::EnvParams;
    use crate::forecast::ForecasterBundle;
    use crate::rl::rollout::collect_rollouts;
    use crate::rl::{RunningNorm, SchemeKind};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn surrogate_hand_examples() {
        // Ratio below the clip window with a negative advantage: the
        // pessimistic branch keeps the clipped value.
        assert_eq!(clipped_surrogate(0.5, -1.0, 0.2), -0.8);
        // Ratio above the window with a positive advantage: gain is capped.
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2), 1.2);
        // Shrinking a good action's probability is not capped.
        assert_eq!(clipped_surrogate(0.5, 1.0, 0.2), 0.5);
        // Growing a bad action's probability is fully penalized.
        assert_eq!(clipped_surrogate(1.5, -1.0, 0.2), -1.5);
        // At ratio one both branches agree.
        assert_eq!(clipped_surrogate(1.0, 3.25, 0.2), 3.25);
        assert_eq!(clipped_surrogate(1.0, -3.25, 0.2), -3.25);
    }

    proptest! {
        #[test]
        fn surrogate_is_pessimistic(
            ratio in 0.0f64..5.0,
            adv in -10.0f64..10.0,
            eps in 0.01f64..0.5,
        ) {
            let s = clipped_surrogate(ratio, adv, eps);
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
            prop_assert!(s <= unclipped + 1e-15);
            prop_assert!(s <= clipped + 1e-15);
            prop_assert!(s == unclipped || s == clipped);
            // Inside the trust region both branches coincide.
            if (ratio - 1.0).abs() <= eps {
                prop_assert_eq!(s, unclipped);
            }
        }
    }

    fn world() -> (crate::data::TimeSeriesDataset, EnvParams) {
        let ds = synth_generate(
            &SynthConfig {
                days: 8,
                ..SynthConfig::default()
            },
            31,
        )
        .unwrap();
        (ds, EnvParams::default())
    }

    fn batch_for(
        kind: SchemeKind,
        cfg: &PpoConfig,
        seed: u64,
    ) -> (ActorCritic, Vec<EpisodeSample>, ActionBounds) {
        let (ds, params) = world();
        let view = ds.full_view();
        let obs_width = crate::rl::observation_width(kind, cfg.lookahead);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ac = ActorCritic::new(kind, obs_width, cfg.gru_hidden, &mut rng).unwrap();
        let norm = RunningNorm::new(obs_width);
        let bundle = match kind {
            SchemeKind::WithPrediction => Some(ForecasterBundle::zero_stub(cfg.lookahead, 24)),
            SchemeKind::WithoutPrediction => None,
        };
        let batch = collect_rollouts(
            &ac,
            bundle.as_ref(),
            view,
            &params,
            &norm,
            cfg,
            seed,
            0,
        )
        .unwrap();
        (ac, batch, params.action_bounds().unwrap())
    }

    /// The objective of a first pass with unit ratios is the advantage mean,
    /// so its loss must equal the negated mean bit for bit.
    fn assert_first_pass_exact(kind: SchemeKind) {
        let cfg = PpoConfig {
            workers: 2,
            episodes_per_worker: 1,
            update_epochs: 1,
            normalize_advantages: false,
            gru_hidden: 8,
            ..PpoConfig::default()
        };
        let (mut ac, batch, bounds) = batch_for(kind, &cfg, 17);
        let flat: Vec<f64> = batch
            .iter()
            .flat_map(|e| e.advantages.iter().copied())
            .collect();
        let expected_loss = -(flat.iter().sum::<f64>() / flat.len() as f64);
        let stats = ppo_update(&mut ac, &batch, &bounds, &cfg).unwrap();
        assert_eq!(stats.mean_abs_ratio_minus_one, 0.0);
        assert_eq!(stats.median_abs_ratio_minus_one, 0.0);
        assert_eq!(
            stats.actor_losses[0].to_bits(),
            expected_loss.to_bits(),
            "{} vs {}",
            stats.actor_losses[0],
            expected_loss
        );
    }

    #[test]
    fn first_pass_ratios_are_exactly_one_feedforward() {
        assert_first_pass_exact(SchemeKind::WithPrediction);
    }

    #[test]
    fn first_pass_ratios_are_exactly_one_recurrent() {
        assert_first_pass_exact(SchemeKind::WithoutPrediction);
    }

    #[test]
    fn ratios_move_after_the_first_pass() {
        let cfg = PpoConfig {
            workers: 2,
            episodes_per_worker: 1,
            update_epochs: 3,
            gru_hidden: 8,
            ..PpoConfig::default()
        };
        let (mut ac, batch, bounds) = batch_for(SchemeKind::WithoutPrediction, &cfg, 23);
        let stats = ppo_update(&mut ac, &batch, &bounds, &cfg).unwrap();
        assert!(
            stats.median_abs_ratio_minus_one > 0.0,
            "parameters moved, ratios must drift: {stats:?}"
        );
        assert!(stats.mean_abs_ratio_minus_one < 0.5, "drift stays moderate");
    }

    #[test]
    fn critic_loss_decreases_over_passes() {
        let cfg = PpoConfig {
            workers: 3,
            episodes_per_worker: 1,
            update_epochs: 5,
            gru_hidden: 8,
            ..PpoConfig::default()
        };
        let (mut ac, batch, bounds) = batch_for(SchemeKind::WithoutPrediction, &cfg, 29);
        let stats = ppo_update(&mut ac, &batch, &bounds, &cfg).unwrap();
        assert_eq!(stats.critic_losses.len(), 5);
        assert!(
            stats.critic_losses.last().unwrap() < &stats.critic_losses[0],
            "{:?}",
            stats.critic_losses
        );
    }

    #[test]
    fn normalized_advantages_zero_the_first_objective() {
        let cfg = PpoConfig {
            workers: 2,
            episodes_per_worker: 2,
            update_epochs: 1,
            normalize_advantages: true,
            gru_hidden: 8,
            ..PpoConfig::default()
        };
        let (mut ac, batch, bounds) = batch_for(SchemeKind::WithoutPrediction, &cfg, 37);
        let stats = ppo_update(&mut ac, &batch, &bounds, &cfg).unwrap();
        // Unit ratios turn the objective into the mean of standardized
        // advantages, which is zero up to rounding.
        assert!(
            stats.actor_losses[0].abs() < 1e-9,
            "{}",
            stats.actor_losses[0]
        );
    }

    #[test]
    fn log_std_stays_in_bounds() {
        let cfg = PpoConfig {
            workers: 2,
            episodes_per_worker: 1,
            update_epochs: 3,
            actor_lr: 0.5, // aggressive on purpose
            gru_hidden: 8,
            ..PpoConfig::default()
        };
        let (mut ac, batch, bounds) = batch_for(SchemeKind::WithoutPrediction, &cfg, 41);
        ppo_update(&mut ac, &batch, &bounds, &cfg).unwrap();
        let ls = ac.log_std().unwrap();
        assert!((LOG_STD_MIN..=LOG_STD_MAX).contains(&ls), "log_std {ls}");
    }

    #[test]
    fn empty_batch_is_rejected() {
        let cfg = PpoConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ac = ActorCritic::new(SchemeKind::WithoutPrediction, 4, 8, &mut rng).unwrap();
        let bounds = EnvParams::default().action_bounds().unwrap();
        assert!(ppo_update(&mut ac, &[], &bounds, &cfg).is_err());
    }
}
