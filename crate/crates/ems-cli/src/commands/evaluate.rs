//! `ems evaluate` — deterministic rollout of a trained policy over held-out
//! episodes, with step traces and the action–price correlation.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;

use ems_core::checkpoint::{ForecasterCheckpoint, PolicyCheckpoint};
use ems_core::forecast::{required_horizons, ForecasterBundle};
use ems_core::rl::{evaluate_policy, EvalEpisode, SchemeKind};
use ems_core::stats::pearson;

use crate::context::{
    fmt_f64, load_config, prepare_out_dir, write_output, CommandOutcome, CommonArgs, Manifest,
};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Trained policy checkpoint to evaluate.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,

    /// Trained forecaster checkpoint; required by with-prediction policies.
    #[arg(long, value_name = "FILE")]
    pub forecaster: Option<PathBuf>,

    /// Evaluate only the first N held-out episodes.
    #[arg(long)]
    pub episodes: Option<usize>,
}

/// The figures `evaluate` reports, serialized as `eval_report.json`.
#[derive(Debug, Serialize)]
struct EvalSummary {
    scheme: SchemeKind,
    lookahead: usize,
    episodes: usize,
    mean_total_reward: f64,
    std_total_reward: f64,
    mean_daily_cost: f64,
    /// Pearson correlation between executed charging power and price across
    /// all evaluated steps; null if either series is degenerate.
    action_price_correlation: Option<f64>,
    policy_config_hash: String,
}

pub fn run(args: EvaluateArgs) -> Result<CommandOutcome> {
    let started = Instant::now();
    let cfg = load_config(&args.common)?;

    let ckpt = PolicyCheckpoint::load(&args.checkpoint)?;
    let scheme = ckpt.scheme;
    let lookahead = ckpt.lookahead;
    let policy_config_hash = ckpt.config_hash.clone();
    let (nets, norm) = ckpt.into_parts()?;

    let bundle: Option<ForecasterBundle> = match scheme {
        SchemeKind::WithPrediction => {
            let path = args.forecaster.as_ref().with_context(|| {
                "this is a with-prediction policy: pass --forecaster with the \
                 forecaster checkpoint it was trained against"
            })?;
            let bundle = ForecasterCheckpoint::load(path)?.into_bundle()?;
            for (q, horizons) in required_horizons(lookahead) {
                for h in horizons {
                    if !bundle.has(q, h) {
                        bail!(
                            "horizon mismatch: the policy's lookahead of {lookahead} needs a \
                             {h}-step {q} model the forecaster checkpoint does not provide"
                        );
                    }
                }
            }
            if bundle.warmup_hours > cfg.env.horizon {
                bail!(
                    "horizon mismatch: forecaster warm-up of {} hours exceeds the {}-hour \
                     episode history",
                    bundle.warmup_hours,
                    cfg.env.horizon
                );
            }
            Some(bundle)
        }
        SchemeKind::WithoutPrediction => {
            if args.forecaster.is_some() {
                bail!("without-prediction policies do not take --forecaster");
            }
            None
        }
    };

    let (ds, _) = cfg.dataset()?;
    let (_, test) = ds.split(cfg.data.train_fraction)?;
    let report = evaluate_policy(&nets, bundle.as_ref(), test, &cfg.env, &norm, lookahead)?;

    let mut episodes = report.episodes;
    if let Some(n) = args.episodes {
        if n == 0 {
            bail!("--episodes must be at least 1");
        }
        episodes.truncate(n);
    }
    let rewards: Vec<f64> = episodes.iter().map(|e| e.total_reward).collect();
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / rewards.len() as f64;

    let actions: Vec<f64> = episodes
        .iter()
        .flat_map(|e| e.records.iter().map(|r| r.action_executed))
        .collect();
    let prices: Vec<f64> = episodes
        .iter()
        .flat_map(|e| e.records.iter().map(|r| r.price))
        .collect();
    let correlation = pearson(&actions, &prices).ok();

    let summary = EvalSummary {
        scheme,
        lookahead,
        episodes: episodes.len(),
        mean_total_reward: mean,
        std_total_reward: var.sqrt(),
        mean_daily_cost: -mean,
        action_price_correlation: correlation,
        policy_config_hash,
    };

    let out = prepare_out_dir(&args.common)?;
    let mut manifest = Manifest::new("evaluate", &cfg)?;
    write_output(out, "traces.csv", &traces_csv(&episodes), &mut manifest.outputs)?;
    write_output(
        out,
        "eval_report.json",
        &serde_json::to_string_pretty(&summary).context("report serialization")?,
        &mut manifest.outputs,
    )?;

    println!(
        "{} episodes: mean episode reward {:.3} (std {:.3}), mean daily cost {:.3}",
        summary.episodes, summary.mean_total_reward, summary.std_total_reward,
        summary.mean_daily_cost
    );
    match summary.action_price_correlation {
        Some(c) => println!("action-price correlation: {c:.3}"),
        None => println!("action-price correlation: undefined (degenerate series)"),
    }

    manifest.finish(out, started)?;
    Ok(CommandOutcome::default())
}

fn traces_csv(episodes: &[EvalEpisode]) -> String {
    let mut text = String::from(
        "episode,step,soc,prev_generation,prev_demand,price,action_requested,action_executed,\
         grid_kw,reward\n",
    );
    for e in episodes {
        for r in &e.records {
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{},{},{}",
                e.episode,
                r.t,
                fmt_f64(r.soc),
                fmt_f64(r.prev_generation),
                fmt_f64(r.prev_demand),
                fmt_f64(r.price),
                fmt_f64(r.action_requested),
                fmt_f64(r.action_executed),
                fmt_f64(r.grid_kw),
                fmt_f64(r.reward)
            );
        }
    }
    text
}
