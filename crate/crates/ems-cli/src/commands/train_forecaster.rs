//! `ems train-forecaster` — supervised training of every (quantity, horizon)
//! forecaster, scored on the held-out split.

use std::fmt::Write as _;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;

use ems_core::checkpoint::ForecasterCheckpoint;
use ems_core::forecast::{evaluate_bundle, ForecastScore, ForecasterBundle, TrainedModel};

use crate::context::{
    fmt_f64, load_config, prepare_out_dir, write_output, CommandOutcome, CommonArgs, Manifest,
};

#[derive(Debug, Args)]
pub struct TrainForecasterArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn run(args: TrainForecasterArgs) -> Result<CommandOutcome> {
    let started = Instant::now();
    let mut cfg = load_config(&args.common)?;
    if let Some(seed) = args.common.seed {
        cfg.run.master_seed = seed;
    }
    let master_seed = cfg.run.master_seed;

    let (ds, load_report) = cfg.dataset()?;
    if let Some(report) = load_report {
        if report.interpolated_hours > 0 {
            println!(
                "note: repaired {} missing hour(s) by interpolation",
                report.interpolated_hours
            );
        }
    }
    let (train, test) = ds.split(cfg.data.train_fraction)?;

    println!(
        "training forecasters on {} h, scoring on {} h (seed {master_seed})",
        train.len(),
        test.len()
    );
    let (bundle, trained) =
        ForecasterBundle::train(&train, &cfg.forecast, cfg.ppo.lookahead, master_seed)
            .context("forecaster training failed")?;
    let scores = evaluate_bundle(&bundle, &test)?;

    let out = prepare_out_dir(&args.common)?;
    let mut manifest = Manifest::new("train-forecaster", &cfg)?;

    let ckpt = ForecasterCheckpoint::new(&bundle, &manifest.config_hash, master_seed)?;
    ckpt.save(&out.join("forecaster.json"))?;
    manifest.outputs.push("forecaster.json".to_string());

    write_output(out, "loss_curves.csv", &loss_curves_csv(&trained), &mut manifest.outputs)?;
    write_output(out, "forecast_report.csv", &report_csv(&scores), &mut manifest.outputs)?;

    println!(
        "{:<12} {:>7} {:>12} {:>12} {:>8}",
        "quantity", "horizon", "mape_%", "rmse", "samples"
    );
    for s in &scores {
        println!(
            "{:<12} {:>7} {:>12.3} {:>12.4} {:>8}",
            s.quantity.to_string(),
            s.horizon,
            s.mape_percent,
            s.rmse,
            s.count
        );
    }
    println!("checkpoint: {}", out.join("forecaster.json").display());

    manifest.finish(out, started)?;
    Ok(CommandOutcome::default())
}

fn loss_curves_csv(trained: &[TrainedModel]) -> String {
    let mut text = String::from("quantity,horizon,epoch,mse\n");
    for model in trained {
        for (epoch, loss) in model.losses.iter().enumerate() {
            let _ = writeln!(
                text,
                "{},{},{},{}",
                model.quantity,
                model.horizon,
                epoch,
                fmt_f64(*loss)
            );
        }
    }
    text
}

fn report_csv(scores: &[ForecastScore]) -> String {
    let mut text = String::from("quantity,horizon,mape_percent,rmse,samples,dropped_zero_actuals\n");
    for s in scores {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            s.quantity,
            s.horizon,
            fmt_f64(s.mape_percent),
            fmt_f64(s.rmse),
            s.count,
            s.mape_dropped_zero_actuals
        );
    }
    text
}
