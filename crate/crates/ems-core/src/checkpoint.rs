//! Bit-exact JSON checkpoints for trained policies and forecaster bundles.
//!
//! Parameters are stored as decimal floating-point literals produced by the
//! shortest-round-trip formatter, so loading a checkpoint reproduces every
//! `f64` exactly. Checkpoints carry the configuration hash and master seed
//! they were produced under, purely as provenance metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::data::Quantity;
use crate::error::{EmsError, Result};
use crate::forecast::{ForecasterBundle, NormStats};
use crate::nn::{GruSpec, ParameterStore};
use crate::rl::{observation_width, ActorCritic, RunningNorm, SchemeKind};

pub const POLICY_FORMAT_VERSION: u32 = 1;
pub const FORECASTER_FORMAT_VERSION: u32 = 1;

/// One named tensor in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

fn store_to_arrays(store: &ParameterStore) -> Vec<NamedArray> {
    store
        .names()
        .into_iter()
        .map(|name| {
            let t = store.get(&name).expect("listed name");
            NamedArray {
                name,
                shape: t.shape().to_vec(),
                values: t.values().to_vec(),
            }
        })
        .collect()
}

fn arrays_to_store(arrays: &[NamedArray], what: &str) -> Result<ParameterStore> {
    let mut store = ParameterStore::new();
    for a in arrays {
        let tensor = Tensor::new(a.shape.clone(), a.values.clone()).map_err(|e| {
            EmsError::checkpoint(format!("{what} parameter {}: {e}", a.name))
        })?;
        store.register(&a.name, tensor).map_err(|e| {
            EmsError::checkpoint(format!("{what} parameter {}: {e}", a.name))
        })?;
    }
    Ok(store)
}

fn check_finite(arrays: &[NamedArray], what: &str) -> Result<()> {
    for a in arrays {
        if let Some(v) = a.values.iter().find(|v| !v.is_finite()) {
            return Err(EmsError::checkpoint(format!(
                "{what} parameter {} holds a non-finite value {v}",
                a.name
            )));
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| EmsError::checkpoint(format!("serialization failed: {e}")))?;
    std::fs::write(path, text).map_err(|e| {
        EmsError::checkpoint(format!("cannot write {}: {e}", path.display()))
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        EmsError::checkpoint(format!("cannot read {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text).map_err(|e| {
        EmsError::checkpoint(format!("{} is not a valid checkpoint: {e}", path.display()))
    })
}

// ------------------------------------------------------------------ policies

/// A trained policy with everything needed to act: both networks, the
/// observation normalizer, and the shape metadata to rebuild them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub format_version: u32,
    pub scheme: SchemeKind,
    pub obs_width: usize,
    pub gru_hidden: usize,
    pub lookahead: usize,
    pub config_hash: String,
    pub master_seed: u64,
    pub obs_norm: RunningNorm,
    pub actor: Vec<NamedArray>,
    pub critic: Vec<NamedArray>,
}

impl PolicyCheckpoint {
    pub fn new(
        nets: &ActorCritic,
        obs_norm: &RunningNorm,
        lookahead: usize,
        config_hash: &str,
        master_seed: u64,
    ) -> Result<Self> {
        if obs_norm.width() != nets.obs_width {
            return Err(EmsError::checkpoint(format!(
                "normalizer width {} does not match observation width {}",
                obs_norm.width(),
                nets.obs_width
            )));
        }
        let actor = store_to_arrays(&nets.actor);
        let critic = store_to_arrays(&nets.critic);
        check_finite(&actor, "actor")?;
        check_finite(&critic, "critic")?;
        Ok(PolicyCheckpoint {
            format_version: POLICY_FORMAT_VERSION,
            scheme: nets.kind,
            obs_width: nets.obs_width,
            gru_hidden: nets.gru_hidden,
            lookahead,
            config_hash: config_hash.to_string(),
            master_seed,
            obs_norm: obs_norm.clone(),
            actor,
            critic,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: PolicyCheckpoint = read_json(path)?;
        ckpt.validate()
            .map_err(|e| EmsError::checkpoint(format!("{}: {e}", path.display())))?;
        Ok(ckpt)
    }

    fn validate(&self) -> Result<()> {
        if self.format_version != POLICY_FORMAT_VERSION {
            return Err(EmsError::checkpoint(format!(
                "format version {} unsupported (this build reads version {})",
                self.format_version, POLICY_FORMAT_VERSION
            )));
        }
        let expected = observation_width(self.scheme, self.lookahead);
        if self.obs_width != expected {
            return Err(EmsError::checkpoint(format!(
                "observation width {} inconsistent with a {} policy at lookahead {} \
                 (expected {expected})",
                self.obs_width, self.scheme, self.lookahead
            )));
        }
        match self.scheme {
            SchemeKind::WithPrediction if self.gru_hidden != 0 => {
                return Err(EmsError::checkpoint(
                    "with-prediction policies are feedforward but gru_hidden is non-zero",
                ));
            }
            SchemeKind::WithoutPrediction if self.gru_hidden == 0 => {
                return Err(EmsError::checkpoint(
                    "without-prediction policies are recurrent but gru_hidden is zero",
                ));
            }
            _ => {}
        }
        if self.obs_norm.width() != self.obs_width {
            return Err(EmsError::checkpoint(format!(
                "normalizer width {} does not match observation width {}",
                self.obs_norm.width(),
                self.obs_width
            )));
        }
        check_finite(&self.actor, "actor")?;
        check_finite(&self.critic, "critic")?;
        Ok(())
    }

    /// Rebuilds the live networks and normalizer. A probe forward pass
    /// verifies the parameter set is complete and correctly shaped.
    pub fn into_parts(self) -> Result<(ActorCritic, RunningNorm)> {
        let nets = ActorCritic {
            kind: self.scheme,
            obs_width: self.obs_width,
            gru_hidden: self.gru_hidden,
            actor: arrays_to_store(&self.actor, "actor")?,
            critic: arrays_to_store(&self.critic, "critic")?,
        };
        let probe_obs = vec![0.0; nets.obs_width];
        let hidden = nets.initial_hidden();
        nets.actor_step_infer(&probe_obs, &hidden).map_err(|e| {
            EmsError::checkpoint(format!("actor parameters incomplete: {e}"))
        })?;
        nets.critic_step_infer(&probe_obs, &hidden).map_err(|e| {
            EmsError::checkpoint(format!("critic parameters incomplete: {e}"))
        })?;
        nets.log_std()
            .map_err(|e| EmsError::checkpoint(format!("actor parameters incomplete: {e}")))?;
        Ok((nets, self.obs_norm))
    }
}

// --------------------------------------------------------------- forecasters

/// One trained forecaster model inside a bundle checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterModelEntry {
    pub quantity: Quantity,
    pub horizon: usize,
    pub params: Vec<NamedArray>,
}

/// Normalization statistics for one quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsEntry {
    pub quantity: Quantity,
    pub mean: f64,
    pub std: f64,
}

/// A serialized forecaster bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterCheckpoint {
    pub format_version: u32,
    pub hidden: usize,
    pub warmup_hours: usize,
    pub config_hash: String,
    pub master_seed: u64,
    pub stats: Vec<StatsEntry>,
    pub models: Vec<ForecasterModelEntry>,
}

impl ForecasterCheckpoint {
    pub fn new(bundle: &ForecasterBundle, config_hash: &str, master_seed: u64) -> Result<Self> {
        let stats = bundle
            .stats
            .iter()
            .map(|(&quantity, s)| StatsEntry {
                quantity,
                mean: s.mean,
                std: s.std,
            })
            .collect();
        let mut models = Vec::with_capacity(bundle.models.len());
        for (&(quantity, horizon), store) in &bundle.models {
            let params = store_to_arrays(store);
            check_finite(&params, &format!("{quantity}/{horizon}"))?;
            models.push(ForecasterModelEntry {
                quantity,
                horizon,
                params,
            });
        }
        Ok(ForecasterCheckpoint {
            format_version: FORECASTER_FORMAT_VERSION,
            hidden: bundle.spec.hidden,
            warmup_hours: bundle.warmup_hours,
            config_hash: config_hash.to_string(),
            master_seed,
            stats,
            models,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: ForecasterCheckpoint = read_json(path)?;
        if ckpt.format_version != FORECASTER_FORMAT_VERSION {
            return Err(EmsError::checkpoint(format!(
                "{}: format version {} unsupported (this build reads version {})",
                path.display(),
                ckpt.format_version,
                FORECASTER_FORMAT_VERSION
            )));
        }
        Ok(ckpt)
    }

    /// Rebuilds the live bundle. Every model is probed with a zero window to
    /// verify its parameter set is complete.
    pub fn into_bundle(self) -> Result<ForecasterBundle> {
        if self.hidden == 0 || self.warmup_hours == 0 {
            return Err(EmsError::checkpoint(
                "forecaster checkpoint has zero hidden width or warm-up",
            ));
        }
        let mut stats = std::collections::BTreeMap::new();
        for s in &self.stats {
            if !(s.std > 0.0 && s.std.is_finite() && s.mean.is_finite()) {
                return Err(EmsError::checkpoint(format!(
                    "invalid normalization for {}: mean {}, std {}",
                    s.quantity, s.mean, s.std
                )));
            }
            if stats.insert(s.quantity, NormStats { mean: s.mean, std: s.std }).is_some() {
                return Err(EmsError::checkpoint(format!(
                    "duplicate normalization entry for {}",
                    s.quantity
                )));
            }
        }
        let mut models = std::collections::BTreeMap::new();
        for m in self.models {
            if !stats.contains_key(&m.quantity) {
                return Err(EmsError::checkpoint(format!(
                    "model {}/{} has no normalization statistics",
                    m.quantity, m.horizon
                )));
            }
            let store = arrays_to_store(&m.params, &format!("{}/{}", m.quantity, m.horizon))?;
            if models.insert((m.quantity, m.horizon), store).is_some() {
                return Err(EmsError::checkpoint(format!(
                    "duplicate model entry {}/{}",
                    m.quantity, m.horizon
                )));
            }
        }
        let bundle = ForecasterBundle {
            spec: GruSpec::new(1, self.hidden, 1)?,
            warmup_hours: self.warmup_hours,
            stats,
            models,
        };
        let probe = vec![0.0; bundle.warmup_hours];
        for &(q, h) in bundle.models.keys() {
            bundle.predict(q, h, &probe).map_err(|e| {
                EmsError::checkpoint(format!("model {q}/{h} is incomplete: {e}"))
            })?;
        }
        Ok(bundle)
    }
}
