//! Shared command plumbing: configuration resolution, output-directory
//! handling, and the run manifest every command writes.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use ems_core::config::ExperimentConfig;

/// Environment variable overriding `ppo.workers` for training commands.
pub const WORKERS_ENV: &str = "EMS_WORKERS";

/// Flags every subcommand accepts.
#[derive(Debug, clap::Args)]
pub struct CommonArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Seed override: the dataset seed for `synth`, the master training
    /// seed for every other command.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Directory all outputs are written to (created if missing).
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
}

/// What a finished command reports back to `main` for exit-code selection.
#[derive(Debug, Default)]
pub struct CommandOutcome {
    /// True when training diverged: outputs exist (last good checkpoint
    /// retained) but the run did not complete, so the exit code is 2.
    pub diverged: bool,
}

/// Loads the configuration named by `--config` (or the defaults), without
/// applying any seed override.
pub fn load_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let cfg = ExperimentConfig::default();
            cfg.validate()?;
            cfg
        }
    };
    Ok(cfg)
}

/// Applies the `EMS_WORKERS` override, if set, to `ppo.workers`.
pub fn apply_workers_override(cfg: &mut ExperimentConfig) -> Result<()> {
    if let Ok(raw) = std::env::var(WORKERS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .with_context(|| format!("{WORKERS_ENV}='{raw}' is not a worker count"))?;
        if n == 0 {
            bail!("{WORKERS_ENV} must be at least 1");
        }
        cfg.ppo.workers = n;
    }
    Ok(())
}

/// Creates the output directory and returns it.
pub fn prepare_out_dir(common: &CommonArgs) -> Result<&Path> {
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("cannot create output directory {}", common.out.display()))?;
    Ok(&common.out)
}

/// Writes `contents` into `dir/name` and records the name in `outputs`.
pub fn write_output(
    dir: &Path,
    name: &str,
    contents: &str,
    outputs: &mut Vec<String>,
) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    outputs.push(name.to_string());
    Ok(())
}

/// The provenance record every command leaves beside its outputs. Wall time
/// is the only field that varies between identical runs; all other artifacts
/// are byte-stable.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub code_version: String,
    pub master_seed: u64,
    pub config_hash: String,
    pub resolved_config: String,
    pub outputs: Vec<String>,
    pub divergence: Option<String>,
    pub wall_time_seconds: f64,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Manifest {
            command: command.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed: cfg.run.master_seed,
            config_hash: cfg.config_hash()?,
            resolved_config: cfg.to_toml_string()?,
            outputs: Vec::new(),
            divergence: None,
            wall_time_seconds: 0.0,
        })
    }

    /// Finalizes and writes `manifest.json`.
    pub fn finish(mut self, dir: &Path, started: Instant) -> Result<()> {
        self.outputs.push("manifest.json".to_string());
        self.wall_time_seconds = started.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self).context("manifest serialization")?;
        let path = dir.join("manifest.json");
        std::fs::write(&path, text)
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(())
    }
}

/// Shortest round-trippable decimal rendering, used for all CSV numbers so
/// log files are deterministic and lossless.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
