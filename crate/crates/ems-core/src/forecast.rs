//! Supervised k-step-ahead forecasting of generation, demand and price.
//!
//! One recurrent model is trained per (quantity, horizon) pair. Training
//! threads the hidden state through the entire (normalized) training series,
//! accumulates the gradient of the squared k-step error over the whole pass,
//! and applies exactly one optimizer update per epoch. Prediction feeds a
//! fixed-length trailing window through the net from a zero hidden state and
//! reads the last output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor};
use crate::data::{Quantity, SeriesView};
use crate::error::{EmsError, Result};
use crate::nn::{gru_step_graph, gru_step_infer, init_gru, GruSpec, ParameterStore};
use crate::seed_for;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Training hyperparameters shared by every forecaster model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastConfig {
    /// Hidden width of each recurrent model.
    pub hidden: usize,
    /// Full-series passes; one optimizer update per epoch.
    pub epochs: usize,
    pub learning_rate: f64,
    /// Trailing window length fed to the net before reading a prediction.
    pub warmup_hours: usize,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        ForecastConfig {
            hidden: 32,
            epochs: 200,
            learning_rate: 0.01,
            warmup_hours: 24,
        }
    }
}

impl ForecastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.epochs == 0 || self.warmup_hours == 0 {
            return Err(EmsError::invalid(
                "forecast config: hidden, epochs and warmup_hours must be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(EmsError::invalid(format!(
                "forecast config: learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    pub fn gru_spec(&self) -> GruSpec {
        GruSpec {
            input: 1,
            hidden: self.hidden,
            output: 1,
        }
    }
}

/// Mean/standard-deviation normalization fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    /// Fits on a series; the standard deviation is floored so constant
    /// series normalize to zeros instead of dividing by zero.
    pub fn fit(series: &[f64]) -> Result<Self> {
        if series.is_empty() {
            return Err(EmsError::invalid("cannot fit normalization on empty series"));
        }
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(NormStats {
            mean,
            std: var.sqrt().max(1e-8),
        })
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Trains one model to predict `series[t + horizon]` from `series[..=t]`.
/// Returns the parameters and the per-epoch loss curve (mean squared error
/// in normalized space, measured before each update).
pub fn train_forecaster(
    series_raw: &[f64],
    stats: &NormStats,
    horizon: usize,
    cfg: &ForecastConfig,
    seed: u64,
) -> Result<(ParameterStore, Vec<f64>)> {
    cfg.validate()?;
    if horizon == 0 {
        return Err(EmsError::invalid("forecast horizon must be at least 1"));
    }
    if series_raw.len() < horizon + 2 {
        return Err(EmsError::invalid(format!(
            "series of {} values is too short to train a {horizon}-step forecaster",
            series_raw.len()
        )));
    }

    let spec = cfg.gru_spec();
    let mut store = ParameterStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_gru(&mut store, "gru", &spec, &mut rng)?;

    let xs: Vec<f64> = series_raw.iter().map(|&v| stats.normalize(v)).collect();

    // Build the unrolled graph once; epochs only swap parameter values.
    let mut g = Graph::new();
    let mut h = g.constant(Tensor::zeros(&[spec.hidden]))?;
    let mut squared_errors = Vec::with_capacity(xs.len() - horizon);
    for t in 0..xs.len() - horizon {
        let x = g.constant(Tensor::vector(vec![xs[t]]))?;
        let (y, h_next) = gru_step_graph(&mut g, &store, "gru", &spec, x, h)?;
        let target = g.constant(Tensor::vector(vec![xs[t + horizon]]))?;
        let err = g.sub(y, target)?;
        squared_errors.push(g.square(err)?);
        h = h_next;
    }
    let stacked = g.concat(&squared_errors)?;
    let loss_node = g.mean(stacked)?;

    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        store.write_params(&mut g)?;
        let loss = g
            .forward(loss_node, &[])
            .and_then(|t| t.item())
            .map_err(|e| EmsError::diverged(format!("epoch {epoch}: {e}")))?;
        losses.push(loss);
        let grads = g.backward(loss_node, 1.0)?;
        store.zero_grads();
        store.accumulate_grads(&grads)?;
        store
            .adam_step(cfg.learning_rate)
            .map_err(|e| EmsError::diverged(format!("epoch {epoch}: {e}")))?;
    }
    Ok((store, losses))
}

/// Feeds a raw trailing window through a trained model (hidden state starts
/// at zero) and returns the denormalized prediction of the value `horizon`
/// hours past the window's end. The window must be at least `warmup_hours`
/// long.
pub fn predict_k_step(
    store: &ParameterStore,
    spec: &GruSpec,
    stats: &NormStats,
    window_raw: &[f64],
    warmup_hours: usize,
) -> Result<f64> {
    if window_raw.len() < warmup_hours {
        return Err(EmsError::invalid(format!(
            "prediction window of {} values is shorter than the {warmup_hours}-hour warm-up",
            window_raw.len()
        )));
    }
    let mut h = vec![0.0; spec.hidden];
    let mut y = vec![0.0; spec.output];
    for &raw in window_raw {
        let x = [stats.normalize(raw)];
        let (out, h_next) = gru_step_infer(store, "gru", spec, &x, &h)?;
        y = out;
        h = h_next;
    }
    let pred = stats.denormalize(y[0]);
    if !pred.is_finite() {
        return Err(EmsError::numeric(format!("non-finite prediction {pred}")));
    }
    Ok(pred)
}

/// A set of trained forecasters, one per (quantity, horizon).
#[derive(Debug, Clone)]
pub struct ForecasterBundle {
    pub spec: GruSpec,
    pub warmup_hours: usize,
    pub stats: BTreeMap<Quantity, NormStats>,
    pub models: BTreeMap<(Quantity, usize), ParameterStore>,
}

/// Horizons each quantity needs so a policy can look `lookahead` hours
/// ahead: generation and demand are metered with a one-hour delay (their
/// windows end one hour earlier, requiring horizons up to `lookahead + 1`),
/// price is announced for the current hour (horizons up to `lookahead`).
/// Horizons 1 and 2 are always included so accuracy reports cover both.
pub fn required_horizons(lookahead: usize) -> BTreeMap<Quantity, Vec<usize>> {
    let mut map = BTreeMap::new();
    map.insert(Quantity::Generation, (1..=(lookahead + 1).max(2)).collect());
    map.insert(Quantity::Demand, (1..=(lookahead + 1).max(2)).collect());
    map.insert(Quantity::Price, (1..=lookahead.max(2)).collect());
    map
}

impl ForecasterBundle {
    /// Trains every model required for `lookahead` on the training view.
    /// Returns the bundle and the per-model loss curves in training order.
    pub fn train(
        train: &SeriesView<'_>,
        cfg: &ForecastConfig,
        lookahead: usize,
        master_seed: u64,
    ) -> Result<(Self, Vec<TrainedModel>)> {
        cfg.validate()?;
        if lookahead == 0 {
            return Err(EmsError::invalid("lookahead must be at least 1 hour"));
        }
        let mut stats = BTreeMap::new();
        let mut models = BTreeMap::new();
        let mut reports = Vec::new();
        for (q, horizons) in required_horizons(lookahead) {
            let series = train.series(q);
            let st = NormStats::fit(&series)?;
            stats.insert(q, st);
            for h in horizons {
                let seed = seed_for(master_seed, &format!("forecast/{q}/{h}"));
                let (store, losses) = train_forecaster(&series, &st, h, cfg, seed)?;
                models.insert((q, h), store);
                reports.push(TrainedModel {
                    quantity: q,
                    horizon: h,
                    losses,
                });
            }
        }
        Ok((
            ForecasterBundle {
                spec: cfg.gru_spec(),
                warmup_hours: cfg.warmup_hours,
                stats,
                models,
            },
            reports,
        ))
    }

    /// A bundle whose every prediction is exactly zero (zero parameters,
    /// identity normalization). Useful as a stub in tests.
    pub fn zero_stub(lookahead: usize, warmup_hours: usize) -> Self {
        let spec = GruSpec {
            input: 1,
            hidden: 4,
            output: 1,
        };
        let mut stats = BTreeMap::new();
        let mut models = BTreeMap::new();
        for (q, horizons) in required_horizons(lookahead) {
            stats.insert(q, NormStats { mean: 0.0, std: 1.0 });
            for h in horizons {
                let mut store = ParameterStore::new();
                for (name, shape) in [
                    ("gru.wz", vec![4, 1]),
                    ("gru.uz", vec![4, 4]),
                    ("gru.bz", vec![4]),
                    ("gru.wr", vec![4, 1]),
                    ("gru.ur", vec![4, 4]),
                    ("gru.br", vec![4]),
                    ("gru.wh", vec![4, 1]),
                    ("gru.uh", vec![4, 4]),
                    ("gru.bh", vec![4]),
                    ("gru.wo", vec![1, 4]),
                    ("gru.bo", vec![1]),
                ] {
                    store.register(name, Tensor::zeros(&shape)).expect("fresh store");
                }
                models.insert((q, h), store);
            }
        }
        ForecasterBundle {
            spec,
            warmup_hours,
            stats,
            models,
        }
    }

    pub fn has(&self, q: Quantity, horizon: usize) -> bool {
        self.models.contains_key(&(q, horizon))
    }

    /// Predicts `horizon` hours past the end of `window_raw`.
    pub fn predict(&self, q: Quantity, horizon: usize, window_raw: &[f64]) -> Result<f64> {
        let store = self.models.get(&(q, horizon)).ok_or_else(|| {
            EmsError::invalid(format!(
                "forecaster bundle has no {horizon}-step model for {q}"
            ))
        })?;
        let stats = self
            .stats
            .get(&q)
            .ok_or_else(|| EmsError::invalid(format!("bundle missing stats for {q}")))?;
        predict_k_step(store, &self.spec, stats, window_raw, self.warmup_hours)
    }

    /// Deterministic digest of every parameter value; used to verify the
    /// bundle stays frozen during policy training.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over model keys, parameter names and value bits.
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for ((q, h), store) in &self.models {
            eat(q.to_string().as_bytes());
            eat(&h.to_le_bytes());
            for name in store.names() {
                eat(name.as_bytes());
                for v in store.get(&name).expect("listed name").values() {
                    eat(&v.to_bits().to_le_bytes());
                }
            }
        }
        hash
    }
}

/// Loss curve of one trained model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub quantity: Quantity,
    pub horizon: usize,
    /// Mean squared error (normalized space) before each epoch's update.
    pub losses: Vec<f64>,
}

// ------------------------------------------------------------------- metrics

/// Mean absolute percentage error with exact-zero actuals dropped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapeScore {
    pub percent: f64,
    /// Pairs excluded because the actual value was exactly zero.
    pub dropped_zero_actuals: usize,
}

/// `100 / n * sum(|pred - actual| / |actual|)` over pairs with non-zero
/// actuals. All-zero actuals are an error.
pub fn mape(pred: &[f64], actual: &[f64]) -> Result<MapeScore> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(EmsError::invalid(format!(
            "mape needs equal non-empty slices, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    let mut dropped = 0usize;
    for (&p, &a) in pred.iter().zip(actual.iter()) {
        if a == 0.0 {
            dropped += 1;
        } else {
            total += (p - a).abs() / a.abs();
            used += 1;
        }
    }
    if used == 0 {
        return Err(EmsError::invalid(
            "mape undefined: every actual value is zero",
        ));
    }
    Ok(MapeScore {
        percent: 100.0 * total / used as f64,
        dropped_zero_actuals: dropped,
    })
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], actual: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.is_empty() {
        return Err(EmsError::invalid(format!(
            "rmse needs equal non-empty slices, got {} and {}",
            pred.len(),
            actual.len()
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(actual.iter())
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((total / pred.len() as f64).sqrt())
}

/// Accuracy of one model on a held-out view.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastScore {
    pub quantity: Quantity,
    pub horizon: usize,
    pub mape_percent: f64,
    pub mape_dropped_zero_actuals: usize,
    pub rmse: f64,
    /// Number of (prediction, actual) pairs scored.
    pub count: usize,
}

/// Scores a bundle on a held-out view with rolling trailing windows, exactly
/// as predictions are produced during control. Horizons 1 and 2 are scored
/// for every quantity.
pub fn evaluate_bundle(bundle: &ForecasterBundle, test: &SeriesView<'_>) -> Result<Vec<ForecastScore>> {
    let mut scores = Vec::new();
    let w = bundle.warmup_hours;
    for q in Quantity::ALL {
        let series = test.series(q);
        for horizon in [1usize, 2] {
            if !bundle.has(q, horizon) {
                return Err(EmsError::invalid(format!(
                    "bundle missing {horizon}-step model for {q}"
                )));
            }
            if series.len() < w + horizon + 1 {
                return Err(EmsError::data(format!(
                    "test split of {} hours is too short to score a {horizon}-step forecast \
                     with a {w}-hour window",
                    series.len()
                )));
            }
            let mut preds = Vec::new();
            let mut actuals = Vec::new();
            for t in (w - 1)..(series.len() - horizon) {
                let window = &series[t + 1 - w..=t];
                preds.push(bundle.predict(q, horizon, window)?);
                actuals.push(series[t + horizon]);
            }
            let m = mape(&preds, &actuals)?;
            scores.push(ForecastScore {
                quantity: q,
                horizon,
                mape_percent: m.percent,
                mape_dropped_zero_actuals: m.dropped_zero_actuals,
                rmse: rmse(&preds, &actuals)?,
                count: preds.len(),
            });
        }
    }
    Ok(scores)
}
