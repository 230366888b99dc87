//! `ems train-policy` — PPO training for either scheme, with per-iteration
//! logs, periodic held-out evaluation, and divergence-safe checkpointing.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use clap::Args;

use ems_core::checkpoint::{ForecasterCheckpoint, PolicyCheckpoint};
use ems_core::forecast::ForecasterBundle;
use ems_core::rl::{train_policy, EvalPoint, IterationRecord, SchemeKind};

use crate::commands::parse_scheme;
use crate::context::{
    apply_workers_override, fmt_f64, load_config, prepare_out_dir, write_output, CommandOutcome,
    CommonArgs, Manifest,
};

#[derive(Debug, Args)]
pub struct TrainPolicyArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Scheme to train (overrides the config): with-prediction or
    /// without-prediction.
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Option<SchemeKind>,

    /// Trained forecaster checkpoint; required by the with-prediction scheme.
    #[arg(long, value_name = "FILE")]
    pub forecaster: Option<PathBuf>,
}

pub fn run(args: TrainPolicyArgs) -> Result<CommandOutcome> {
    let started = Instant::now();
    let mut cfg = load_config(&args.common)?;
    if let Some(seed) = args.common.seed {
        cfg.run.master_seed = seed;
    }
    apply_workers_override(&mut cfg)?;
    let master_seed = cfg.run.master_seed;
    let kind = args.scheme.unwrap_or(cfg.scheme.kind);

    let bundle: Option<ForecasterBundle> = match kind {
        SchemeKind::WithPrediction => match &args.forecaster {
            Some(path) => Some(ForecasterCheckpoint::load(path)?.into_bundle()?),
            None => bail!(
                "the with-prediction scheme needs --forecaster pointing at a trained \
                 forecaster checkpoint (run `ems train-forecaster` first)"
            ),
        },
        SchemeKind::WithoutPrediction => {
            if args.forecaster.is_some() {
                bail!("the without-prediction scheme does not take --forecaster");
            }
            None
        }
    };

    let (ds, _) = cfg.dataset()?;
    let (train, test) = ds.split(cfg.data.train_fraction)?;
    println!(
        "training {kind} policy: {} iterations x {} worker(s), seed {master_seed}",
        cfg.ppo.iterations, cfg.ppo.workers
    );

    let outcome = train_policy(
        kind,
        train,
        Some(test),
        &cfg.env,
        &cfg.ppo,
        bundle.as_ref(),
        master_seed,
    )?;

    let out = prepare_out_dir(&args.common)?;
    let mut manifest = Manifest::new("train-policy", &cfg)?;
    manifest.divergence = outcome.divergence.clone();

    write_output(
        out,
        "training_log.csv",
        &training_log_csv(&outcome.records),
        &mut manifest.outputs,
    )?;
    write_output(
        out,
        "eval_log.csv",
        &eval_log_csv(&outcome.eval_points),
        &mut manifest.outputs,
    )?;
    let ckpt = PolicyCheckpoint::new(
        &outcome.nets,
        &outcome.obs_norm,
        cfg.ppo.lookahead,
        &manifest.config_hash,
        master_seed,
    )?;
    ckpt.save(&out.join("policy.json"))?;
    manifest.outputs.push("policy.json".to_string());

    if let (Some(first), Some(last)) = (outcome.records.first(), outcome.records.last()) {
        println!(
            "mean episode reward: {:.3} (iteration 0) -> {:.3} (iteration {})",
            first.mean_total_reward_raw, last.mean_total_reward_raw, last.iteration
        );
    }
    if let Some(p) = outcome.eval_points.last() {
        println!(
            "held-out mean episode reward after iteration {}: {:.3}",
            p.iteration, p.mean_total_reward
        );
    }
    if let Some(reason) = &outcome.divergence {
        eprintln!("divergence: {reason}");
    }
    println!("checkpoint: {}", out.join("policy.json").display());

    let diverged = outcome.divergence.is_some();
    manifest.finish(out, started)?;
    Ok(CommandOutcome { diverged })
}

fn training_log_csv(records: &[IterationRecord]) -> String {
    let mut text = String::from(
        "iteration,mean_total_reward_raw,actor_loss_first,actor_loss_last,critic_loss_first,\
         critic_loss_last,mean_abs_ratio_minus_one,median_abs_ratio_minus_one,actor_grad_norm,\
         critic_grad_norm,log_std\n",
    );
    for r in records {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            fmt_f64(r.mean_total_reward_raw),
            fmt_f64(r.actor_loss_first),
            fmt_f64(r.actor_loss_last),
            fmt_f64(r.critic_loss_first),
            fmt_f64(r.critic_loss_last),
            fmt_f64(r.mean_abs_ratio_minus_one),
            fmt_f64(r.median_abs_ratio_minus_one),
            fmt_f64(r.actor_grad_norm),
            fmt_f64(r.critic_grad_norm),
            fmt_f64(r.log_std)
        );
    }
    text
}

fn eval_log_csv(points: &[EvalPoint]) -> String {
    let mut text = String::from("iteration,mean_total_reward\n");
    for p in points {
        let _ = writeln!(text, "{},{}", p.iteration, fmt_f64(p.mean_total_reward));
    }
    text
}
