//! Tanh-squashed Gaussian action distribution over a bounded interval.
//!
//! A pre-squash variable `u ~ Normal(mean, exp(log_std))` is mapped to an
//! action `a = center + scale * tanh(u)`, which keeps actions strictly inside
//! `[-discharge_max, charge_max]`. Log-densities include the change-of-
//! variables correction `-log(scale * (1 - tanh(u)^2))`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{EmsError, Result};

/// Clamp range for the policy's log standard deviation.
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Action interval `[-discharge_max, charge_max]` in kW (discharge negative,
/// charge positive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBounds {
    pub discharge_max: f64,
    pub charge_max: f64,
}

impl ActionBounds {
    pub fn new(discharge_max: f64, charge_max: f64) -> Result<Self> {
        if !(discharge_max > 0.0 && charge_max > 0.0)
            || !discharge_max.is_finite()
            || !charge_max.is_finite()
        {
            return Err(EmsError::invalid(format!(
                "action bounds must be positive and finite: discharge_max={discharge_max}, charge_max={charge_max}"
            )));
        }
        Ok(ActionBounds {
            discharge_max,
            charge_max,
        })
    }

    pub fn low(&self) -> f64 {
        -self.discharge_max
    }

    pub fn high(&self) -> f64 {
        self.charge_max
    }

    /// Midpoint of the interval.
    pub fn center(&self) -> f64 {
        (self.charge_max - self.discharge_max) / 2.0
    }

    /// Half-width of the interval.
    pub fn scale(&self) -> f64 {
        (self.charge_max + self.discharge_max) / 2.0
    }
}

/// Maps a pre-squash value to an action inside the bounds.
pub fn squash(u: f64, bounds: &ActionBounds) -> f64 {
    bounds.center() + bounds.scale() * u.tanh()
}

/// `log(1 - tanh(u)^2)` evaluated stably for large `|u|`:
/// `2 * (ln 2 - |u| - ln(1 + exp(-2|u|)))`.
fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u.abs() - (-2.0 * u.abs()).exp().ln_1p())
}

/// Inverts the squash for log-prob evaluation. Actions are first pulled into
/// the open interval by `1e-6 * scale` so `atanh` stays finite at the edges.
fn unsquash(action: f64, bounds: &ActionBounds) -> Result<f64> {
    if !action.is_finite() {
        return Err(EmsError::numeric(format!("non-finite action {action}")));
    }
    let eps = 1e-6 * bounds.scale();
    let a = action.clamp(bounds.low() + eps, bounds.high() - eps);
    let y = (a - bounds.center()) / bounds.scale();
    Ok(y.atanh())
}

/// The terms of the log-density that do not depend on mean or log-std:
/// `-0.5 * ln(2π) - ln(scale) - log(1 - tanh(u)^2)`.
fn log_prob_offset(u: f64, bounds: &ActionBounds) -> f64 {
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    -0.5 * ln_2pi - bounds.scale().ln() - log_one_minus_tanh_sq(u)
}

/// Log-density of `action` under the squashed Gaussian.
///
/// Bit-identical to evaluating the graph built by
/// [`gaussian_log_prob_graph`] at the same `mean` / `log_std`.
pub fn gaussian_log_prob(
    mean: f64,
    log_std: f64,
    bounds: &ActionBounds,
    action: f64,
) -> Result<f64> {
    if !mean.is_finite() || !log_std.is_finite() {
        return Err(EmsError::numeric(format!(
            "non-finite distribution parameters: mean={mean}, log_std={log_std}"
        )));
    }
    let u = unsquash(action, bounds)?;
    let z = (u - mean) * (log_std * -1.0).exp();
    let lp = (((z * z) * -0.5) - log_std) + log_prob_offset(u, bounds);
    Ok(lp)
}

/// Graph version of [`gaussian_log_prob`]: `mean` and `log_std` are scalar
/// nodes, the action is folded in as constants. Gradients flow to mean and
/// log-std only.
pub fn gaussian_log_prob_graph(
    g: &mut Graph,
    mean: NodeId,
    log_std: NodeId,
    bounds: &ActionBounds,
    action: f64,
) -> Result<NodeId> {
    let u = unsquash(action, bounds)?;
    let u_node = g.constant_scalar(u);
    let diff = g.sub(u_node, mean)?;
    let neg_ls = g.scale(log_std, -1.0)?;
    let inv_std = g.exp(neg_ls)?;
    let z = g.mul(diff, inv_std)?;
    let z_sq = g.square(z)?;
    let half = g.scale(z_sq, -0.5)?;
    let centered = g.sub(half, log_std)?;
    g.shift(centered, log_prob_offset(u, bounds))
}

/// Draws an action and returns `(action, log_prob)`.
///
/// The log-prob is computed by the same squash-then-invert path later used
/// during updates, so replaying the stored action reproduces it exactly.
pub fn gaussian_sample(
    mean: f64,
    log_std: f64,
    bounds: &ActionBounds,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    if !mean.is_finite() || !log_std.is_finite() {
        return Err(EmsError::numeric(format!(
            "non-finite distribution parameters: mean={mean}, log_std={log_std}"
        )));
    }
    let noise: f64 = rng.sample(StandardNormal);
    let u = mean + log_std.exp() * noise;
    let action = squash(u, bounds);
    let log_prob = gaussian_log_prob(mean, log_std, bounds, action)?;
    Ok((action, log_prob))
}

/// Deterministic action: the squashed mean.
pub fn policy_mode(mean: f64, bounds: &ActionBounds) -> f64 {
    squash(mean, bounds)
}
