//! `ems synth` — deterministic synthetic dataset generation.

use std::time::Instant;

use anyhow::{Context, Result};
use clap::Args;

use ems_core::data::{synth_generate, Quantity, TimeSeriesDataset};

use crate::context::{
    load_config, prepare_out_dir, CommandOutcome, CommonArgs, Manifest,
};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Number of days to generate (overrides the config).
    #[arg(long)]
    pub days: Option<usize>,
}

pub fn run(args: SynthArgs) -> Result<CommandOutcome> {
    let started = Instant::now();
    let mut cfg = load_config(&args.common)?;
    if let Some(days) = args.days {
        cfg.synth.days = days;
    }
    if let Some(seed) = args.common.seed {
        cfg.data.synth_seed = seed;
    }
    cfg.validate()?;

    let ds = synth_generate(&cfg.synth, cfg.data.synth_seed)?;
    let out = prepare_out_dir(&args.common)?;
    let csv_path = out.join("dataset.csv");
    ds.write_csv(&csv_path)
        .with_context(|| format!("cannot write {}", csv_path.display()))?;

    println!(
        "wrote {} rows ({} days starting {}) to {}",
        ds.len(),
        ds.len() / 24,
        ds.start(),
        csv_path.display()
    );
    print_summary(&ds);

    let mut manifest = Manifest::new("synth", &cfg)?;
    manifest.outputs.push("dataset.csv".to_string());
    manifest.finish(out, started)?;
    Ok(CommandOutcome::default())
}

fn print_summary(ds: &TimeSeriesDataset) {
    let view = ds.full_view();
    println!("{:<12} {:>12} {:>12} {:>12}", "series", "mean", "min", "max");
    for q in Quantity::ALL {
        let series = view.series(q);
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let min = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = series.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("{q:<12} {mean:>12.3} {min:>12.3} {max:>12.3}");
    }
}
