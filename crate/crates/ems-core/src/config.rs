//! Experiment configuration: one TOML file drives data, environment,
//! forecasting and policy optimization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{LoadReport, SynthConfig, TimeSeriesDataset};
use crate::env::EnvParams;
use crate::error::{EmsError, Result};
use crate::forecast::ForecastConfig;
use crate::rl::{PpoConfig, SchemeKind};

/// Which scheme variant commands operate on by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemeSection {
    pub kind: SchemeKind,
}

impl Default for SchemeSection {
    fn default() -> Self {
        SchemeSection {
            kind: SchemeKind::WithPrediction,
        }
    }
}

/// Where the hourly dataset comes from and how it is split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// CSV file to load; when absent, the `[synth]` section generates the
    /// dataset instead.
    pub csv_path: Option<PathBuf>,
    /// Chronological train fraction; the split lands on a day boundary.
    pub train_fraction: f64,
    /// Seed of the synthetic generator. Part of the dataset's identity, so
    /// it is separate from the run seed: several training seeds can share
    /// one dataset.
    pub synth_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            csv_path: None,
            train_fraction: 0.8,
            synth_seed: 1,
        }
    }
}

/// Run-level settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Master seed from which every component seed is derived.
    pub master_seed: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { master_seed: 0 }
    }
}

/// The complete experiment configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: SchemeSection,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub env: EnvParams,
    pub forecast: ForecastConfig,
    pub ppo: PpoConfig,
    pub run: RunSection,
}

impl ExperimentConfig {
    /// Parses and validates a TOML document. Unknown keys are rejected so
    /// typos fail loudly instead of silently falling back to defaults.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)
            .map_err(|e| EmsError::invalid(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and parses a configuration file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            EmsError::invalid(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
            .map_err(|e| EmsError::invalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(EmsError::invalid(format!(
                "data.train_fraction must lie strictly between 0 and 1, got {}",
                self.data.train_fraction
            )));
        }
        self.synth.validate()?;
        self.env.validate()?;
        self.forecast.validate()?;
        self.ppo.validate()?;
        if self.scheme.kind == SchemeKind::WithPrediction
            && self.forecast.warmup_hours > self.env.horizon
        {
            return Err(EmsError::invalid(format!(
                "forecast.warmup_hours ({}) exceeds env.horizon ({}): episodes would \
                 not have enough history for the first observation",
                self.forecast.warmup_hours, self.env.horizon
            )));
        }
        Ok(())
    }

    /// Canonical TOML rendering (field order is fixed by the type).
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self)
            .map_err(|e| EmsError::invalid(format!("config serialization failed: {e}")))
    }

    /// Hex digest of the canonical rendering; recorded in checkpoints and
    /// manifests so artifacts can be traced to their exact configuration.
    pub fn config_hash(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Materializes the dataset this configuration describes: loads the CSV
    /// when one is named, otherwise synthesizes. The report is `Some` only
    /// for loaded files.
    pub fn dataset(&self) -> Result<(TimeSeriesDataset, Option<LoadReport>)> {
        match &self.data.csv_path {
            Some(path) => {
                let (ds, report) = TimeSeriesDataset::load_csv(path)?;
                Ok((ds, Some(report)))
            }
            None => {
                let ds = crate::data::synth_generate(&self.synth, self.data.synth_seed)?;
                Ok((ds, None))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "[ppo]\niterations = 7\n\n[scheme]\nkind = \"without-prediction\"\n",
        )
        .unwrap();
        assert_eq!(cfg.ppo.iterations, 7);
        assert_eq!(cfg.ppo.workers, PpoConfig::default().workers);
        assert_eq!(cfg.scheme.kind, SchemeKind::WithoutPrediction);
        assert_eq!(cfg.data.train_fraction, 0.8);

        let empty = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(empty, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("[ppo]\niterationz = 7\n").unwrap_err();
        assert!(err.to_string().contains("parse error"), "{err}");
        assert!(ExperimentConfig::from_toml_str("[nope]\nx = 1\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(ExperimentConfig::from_toml_str("[data]\ntrain_fraction = 1.5\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[ppo]\ngamma = 2.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[env]\neta_charge = 0.0\n").is_err());
        // Warm-up longer than the pre-episode history is only a problem for
        // the with-prediction scheme.
        let long_warmup = "[forecast]\nwarmup_hours = 48\n";
        assert!(ExperimentConfig::from_toml_str(long_warmup).is_err());
        let without = format!("{long_warmup}\n[scheme]\nkind = \"without-prediction\"\n");
        assert!(ExperimentConfig::from_toml_str(&without).is_ok());
    }

    #[test]
    fn hash_is_stable_and_field_sensitive() {
        let a = ExperimentConfig::default();
        let h1 = a.config_hash().unwrap();
        let h2 = a.config_hash().unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);
        assert!(h1.chars().all(|c| c.is_ascii_hexdigit()));

        let mut b = a.clone();
        b.ppo.iterations += 1;
        assert_ne!(h1, b.config_hash().unwrap());
    }

    #[test]
    fn dataset_synthesizes_by_default_and_loads_csv_when_named() {
        let mut cfg = ExperimentConfig::default();
        cfg.synth.days = 6;
        let (ds, report) = cfg.dataset().unwrap();
        assert_eq!(ds.len(), 6 * 24);
        assert!(report.is_none());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        ds.write_csv(&path).unwrap();
        cfg.data.csv_path = Some(path);
        let (loaded, report) = cfg.dataset().unwrap();
        assert_eq!(loaded.len(), ds.len());
        assert_eq!(report.unwrap().interpolated_hours, 0);
        assert_eq!(loaded.price(17), ds.price(17));
    }
}
