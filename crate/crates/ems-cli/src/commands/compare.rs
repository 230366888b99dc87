//! `ems compare` — trains both schemes on the identical dataset across
//! several seeds and reports per-seed rewards, the aggregate means, and a
//! sign-test verdict on the ordering.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use ems_core::config::ExperimentConfig;
use ems_core::forecast::ForecasterBundle;
use ems_core::rl::{evaluate_policy, train_policy, IterationRecord, SchemeKind};
use ems_core::stats::sign_test;

use crate::commands::parse_scheme;
use crate::context::{
    apply_workers_override, fmt_f64, load_config, prepare_out_dir, write_output, CommandOutcome,
    CommonArgs, Manifest,
};

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Configuration for side B; defaults to side A's configuration. Must
    /// describe the identical dataset and environment.
    #[arg(long, value_name = "FILE")]
    pub config_b: Option<PathBuf>,

    /// Scheme for side A (default: the config's scheme).
    #[arg(long, value_parser = parse_scheme)]
    pub scheme_a: Option<SchemeKind>,

    /// Scheme for side B (default: the opposite of side A).
    #[arg(long, value_parser = parse_scheme)]
    pub scheme_b: Option<SchemeKind>,

    /// Comma-separated master seeds, one matched training run per scheme
    /// and seed (at least 2).
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
}

/// One seed's matched pair of runs.
#[derive(Debug, Serialize)]
struct SeedResult {
    seed: u64,
    /// Final mean episode reward per side: the logged training reward
    /// (already averaged across rollout workers) averaged again over the
    /// last ten iterations. This is the comparison metric.
    reward_a: f64,
    reward_b: f64,
    /// Deterministic held-out evaluation per side, reported for context.
    held_out_reward_a: f64,
    held_out_reward_b: f64,
    /// "a", "b", or "tie".
    winner: String,
    divergence_a: Option<String>,
    divergence_b: Option<String>,
}

/// Where a training curve settles: the mean logged episode reward over the
/// final ten iterations.
fn final_training_reward(records: &[IterationRecord]) -> f64 {
    let tail = &records[records.len().saturating_sub(10)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().map(|r| r.mean_total_reward_raw).sum::<f64>() / tail.len() as f64
}

#[derive(Debug, Serialize)]
struct SignTestSummary {
    b_higher: usize,
    a_higher: usize,
    ties: usize,
    p_value: f64,
}

/// The comparison verdict, serialized as `compare.json`.
#[derive(Debug, Serialize)]
struct CompareSummary {
    scheme_a: SchemeKind,
    scheme_b: SchemeKind,
    seeds: Vec<SeedResult>,
    mean_reward_a: f64,
    mean_reward_b: f64,
    sign_test: SignTestSummary,
    verdict: String,
}

pub fn run(args: CompareArgs) -> Result<CommandOutcome> {
    let started = Instant::now();
    let mut cfg_a = load_config(&args.common)?;
    apply_workers_override(&mut cfg_a)?;
    let mut cfg_b = match &args.config_b {
        Some(path) => {
            let mut cfg = ExperimentConfig::load(path)?;
            apply_workers_override(&mut cfg)?;
            cfg
        }
        None => cfg_a.clone(),
    };

    let kind_a = args.scheme_a.unwrap_or(cfg_a.scheme.kind);
    let kind_b = match (args.scheme_b, &args.config_b) {
        (Some(kind), _) => kind,
        (None, Some(_)) => cfg_b.scheme.kind,
        (None, None) => match kind_a {
            SchemeKind::WithPrediction => SchemeKind::WithoutPrediction,
            SchemeKind::WithoutPrediction => SchemeKind::WithPrediction,
        },
    };
    cfg_a.scheme.kind = kind_a;
    cfg_b.scheme.kind = kind_b;

    if cfg_a.data != cfg_b.data || cfg_a.synth != cfg_b.synth {
        bail!("mismatched datasets: both sides must train on the identical data");
    }
    if cfg_a.env != cfg_b.env {
        bail!("mismatched environments: both sides must control the identical battery");
    }

    let seeds = parse_seeds(&args.seeds)?;
    let (ds, _) = cfg_a.dataset()?;
    let (train, test) = ds.split(cfg_a.data.train_fraction)?;

    // Forecaster bundles are a function of (dataset, forecast config,
    // lookahead, seed); share one between sides when those all agree.
    let mut bundles: HashMap<u64, ForecasterBundle> = HashMap::new();
    let sides_share_forecaster =
        cfg_a.forecast == cfg_b.forecast && cfg_a.ppo.lookahead == cfg_b.ppo.lookahead;

    let mut results = Vec::with_capacity(seeds.len());
    let mut curves: Vec<(char, SchemeKind, u64, Vec<IterationRecord>)> = Vec::new();
    let mut diverged = false;

    for &seed in &seeds {
        let mut side_outcomes = Vec::with_capacity(2);
        for (side, kind, cfg) in [('a', kind_a, &cfg_a), ('b', kind_b, &cfg_b)] {
            let bundle = match kind {
                SchemeKind::WithPrediction => {
                    let need_train = !bundles.contains_key(&seed)
                        || (side == 'b' && !sides_share_forecaster);
                    if need_train {
                        println!("[seed {seed}] training forecasters for side {side}");
                        let (bundle, _) = ForecasterBundle::train(
                            &train,
                            &cfg.forecast,
                            cfg.ppo.lookahead,
                            seed,
                        )
                        .with_context(|| format!("seed {seed}, side {side}: forecaster"))?;
                        bundles.insert(seed, bundle);
                    }
                    Some(&bundles[&seed])
                }
                SchemeKind::WithoutPrediction => None,
            };

            println!("[seed {seed}] training side {side} ({kind})");
            let outcome = train_policy(
                kind,
                train,
                Some(test),
                &cfg.env,
                &cfg.ppo,
                bundle,
                seed,
            )
            .with_context(|| format!("seed {seed}, side {side} ({kind})"))?;
            if let Some(reason) = &outcome.divergence {
                eprintln!("[seed {seed}] side {side} diverged: {reason}");
                diverged = true;
            }
            let eval = evaluate_policy(
                &outcome.nets,
                bundle,
                test,
                &cfg.env,
                &outcome.obs_norm,
                cfg.ppo.lookahead,
            )
            .with_context(|| format!("seed {seed}, side {side}: evaluation"))?;
            let final_reward = final_training_reward(&outcome.records);
            println!(
                "[seed {seed}] side {side} final mean episode reward: {:.3} \
                 (held-out evaluation {:.3})",
                final_reward, eval.mean_total_reward
            );
            curves.push((side, kind, seed, outcome.records.clone()));
            side_outcomes.push((final_reward, eval.mean_total_reward, outcome.divergence));
        }
        let (reward_b, held_out_b, divergence_b) = side_outcomes.pop().expect("side b");
        let (reward_a, held_out_a, divergence_a) = side_outcomes.pop().expect("side a");
        let winner = if reward_b > reward_a {
            "b"
        } else if reward_a > reward_b {
            "a"
        } else {
            "tie"
        };
        results.push(SeedResult {
            seed,
            reward_a,
            reward_b,
            held_out_reward_a: held_out_a,
            held_out_reward_b: held_out_b,
            winner: winner.to_string(),
            divergence_a,
            divergence_b,
        });
    }

    let rewards_a: Vec<f64> = results.iter().map(|r| r.reward_a).collect();
    let rewards_b: Vec<f64> = results.iter().map(|r| r.reward_b).collect();
    let mean_a = rewards_a.iter().sum::<f64>() / rewards_a.len() as f64;
    let mean_b = rewards_b.iter().sum::<f64>() / rewards_b.len() as f64;

    let sign = match sign_test(&rewards_b, &rewards_a) {
        Ok(s) => SignTestSummary {
            b_higher: s.positive,
            a_higher: s.negative,
            ties: s.ties,
            p_value: s.p_value,
        },
        // Every pair tied (e.g. both sides are the identical scheme): no
        // evidence of any difference.
        Err(_) => SignTestSummary {
            b_higher: 0,
            a_higher: 0,
            ties: results.len(),
            p_value: 1.0,
        },
    };

    let verdict = format!(
        "side b ({kind_b}) beat side a ({kind_a}) in {} of {} seeds \
         (final mean episode reward {:.3} vs {:.3}, averaged over the last \
         ten training iterations; two-sided sign test p = {:.4})",
        sign.b_higher,
        results.len(),
        mean_b,
        mean_a,
        sign.p_value
    );
    println!("{verdict}");

    let summary = CompareSummary {
        scheme_a: kind_a,
        scheme_b: kind_b,
        seeds: results,
        mean_reward_a: mean_a,
        mean_reward_b: mean_b,
        sign_test: sign,
        verdict,
    };

    let out = prepare_out_dir(&args.common)?;
    let mut manifest = Manifest::new("compare", &cfg_a)?;
    manifest.divergence = diverged.then(|| {
        "at least one run diverged; see compare.json per-seed entries".to_string()
    });
    write_output(out, "training_curves.csv", &curves_csv(&curves), &mut manifest.outputs)?;
    write_output(
        out,
        "compare.json",
        &serde_json::to_string_pretty(&summary).context("summary serialization")?,
        &mut manifest.outputs,
    )?;
    manifest.finish(out, started)?;
    Ok(CommandOutcome { diverged })
}

fn parse_seeds(raw: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in raw.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let seed: u64 = part
            .parse()
            .with_context(|| format!("'{part}' is not a seed"))?;
        if seeds.contains(&seed) {
            bail!("seed {seed} appears twice; matched pairs need distinct seeds");
        }
        seeds.push(seed);
    }
    if seeds.len() < 2 {
        bail!("need at least 2 seeds for a comparison, got {}", seeds.len());
    }
    Ok(seeds)
}

fn curves_csv(curves: &[(char, SchemeKind, u64, Vec<IterationRecord>)]) -> String {
    let mut text = String::from("side,scheme,seed,iteration,mean_total_reward_raw\n");
    for (side, kind, seed, records) in curves {
        for r in records {
            let _ = writeln!(
                text,
                "{},{},{},{},{}",
                side,
                kind,
                seed,
                r.iteration,
                fmt_f64(r.mean_total_reward_raw)
            );
        }
    }
    text
}
