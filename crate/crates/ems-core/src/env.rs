//! Hourly microgrid battery simulator.
//!
//! Episodes are one day (24 hourly steps). At step `t` the controller sees
//! the state `[soc, prev_generation, prev_demand, price]` — generation and
//! demand are metered with a one-hour delay, while the current hour's price
//! is announced up front. The action is battery power in kW (charge
//! positive, discharge negative); any shortfall after solar and battery is
//! bought from the grid at the current price, surplus is curtailed, and
//! cycling incurs a state-of-charge-dependent degradation cost.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{SeriesView, HOURS_PER_DAY};
use crate::error::{EmsError, Result};
use crate::nn::ActionBounds;

/// Physical and economic parameters of the battery/grid system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvParams {
    /// Maximum discharge power, kW (actions are clamped at `-discharge_max`).
    pub discharge_max_kw: f64,
    /// Maximum charge power, kW.
    pub charge_max_kw: f64,
    /// Battery capacity, kWh.
    pub capacity_kwh: f64,
    /// Charge efficiency in (0, 1].
    pub eta_charge: f64,
    /// Discharge efficiency in (0, 1].
    pub eta_discharge: f64,
    /// Degradation cost per |kW| cycled while state of charge is below 0.5.
    pub lambda_low_soc: f64,
    /// Degradation cost per |kW| cycled while state of charge is 0.5 or
    /// above.
    pub lambda_high_soc: f64,
    /// Episode length in hourly steps.
    pub horizon: usize,
    /// Initial state of charge for evaluation episodes.
    pub initial_soc_eval: f64,
    /// Training episodes start uniformly inside this state-of-charge range.
    pub initial_soc_train: (f64, f64),
}

impl Default for EnvParams {
    fn default() -> Self {
        EnvParams {
            discharge_max_kw: 400.0,
            charge_max_kw: 400.0,
            capacity_kwh: 2000.0,
            eta_charge: 0.95,
            eta_discharge: 0.95,
            lambda_low_soc: 0.013,
            lambda_high_soc: 0.005,
            horizon: HOURS_PER_DAY,
            initial_soc_eval: 0.5,
            initial_soc_train: (0.2, 0.8),
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.discharge_max_kw > 0.0 && self.charge_max_kw > 0.0 && self.capacity_kwh > 0.0) {
            return Err(EmsError::invalid(format!(
                "power limits and capacity must be positive: discharge_max {}, charge_max {}, capacity {}",
                self.discharge_max_kw, self.charge_max_kw, self.capacity_kwh
            )));
        }
        for (name, eta) in [
            ("eta_charge", self.eta_charge),
            ("eta_discharge", self.eta_discharge),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(EmsError::invalid(format!(
                    "{name} must be in (0, 1], got {eta}"
                )));
            }
        }
        if self.lambda_low_soc < 0.0 || self.lambda_high_soc < 0.0 {
            return Err(EmsError::invalid(
                "degradation slopes must be non-negative",
            ));
        }
        if self.horizon == 0 {
            return Err(EmsError::invalid("horizon must be at least 1"));
        }
        let (lo, hi) = self.initial_soc_train;
        if !(0.0..=1.0).contains(&self.initial_soc_eval) || !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(EmsError::invalid(format!(
                "initial state of charge out of [0, 1]: eval {}, train range ({lo}, {hi})",
                self.initial_soc_eval
            )));
        }
        Ok(())
    }

    pub fn action_bounds(&self) -> Result<ActionBounds> {
        ActionBounds::new(self.discharge_max_kw, self.charge_max_kw)
    }
}

/// State of charge after applying battery power `a` (kW over one hour) at
/// state of charge `b`. Charging fills at `eta_charge`; discharging drains
/// at `1 / eta_discharge`. The result is clamped to `[0, 1]` — callers that
/// pre-clamp the action to the feasible range never trigger the clamp.
pub fn soc_transition(b: f64, a: f64, p: &EnvParams) -> f64 {
    let next = if a >= 0.0 {
        b + (p.eta_charge / p.capacity_kwh) * a
    } else {
        b + a / (p.capacity_kwh * p.eta_discharge)
    };
    next.clamp(0.0, 1.0)
}

/// Degradation cost of cycling `|a|` kW at state of charge `b`: cycling a
/// low battery (below 0.5) costs more per kW than cycling a full one.
pub fn degradation_cost(b: f64, a: f64, p: &EnvParams) -> f64 {
    let rate = if b < 0.5 {
        p.lambda_low_soc
    } else {
        p.lambda_high_soc
    };
    rate * a.abs()
}

/// Grid energy purchased this hour: demand not covered by solar generation
/// plus battery charging, floored at zero (exports are curtailed, not sold).
pub fn grid_purchase(demand: f64, generation: f64, a: f64) -> f64 {
    (demand - generation + a).max(0.0)
}

/// Reward for one hour: negative purchase cost minus degradation. `b` is the
/// state of charge *before* the battery action is applied.
pub fn step_reward(price: f64, grid_kw: f64, b: f64, a: f64, p: &EnvParams) -> f64 {
    -(price * grid_kw) - degradation_cost(b, a, p)
}

/// Observable state at the start of an hour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub soc: f64,
    pub prev_generation: f64,
    pub prev_demand: f64,
    pub price: f64,
}

impl EnvState {
    pub const WIDTH: usize = 4;

    pub fn to_array(&self) -> [f64; 4] {
        [self.soc, self.prev_generation, self.prev_demand, self.price]
    }
}

/// Everything that happened during one simulator step, for logs and traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// Step index within the episode, 0-based.
    pub t: usize,
    /// State of charge before the action.
    pub soc: f64,
    pub prev_generation: f64,
    pub prev_demand: f64,
    pub price: f64,
    /// Action as requested by the controller.
    pub action_requested: f64,
    /// Action actually executed after power and state-of-charge clamping.
    pub action_executed: f64,
    /// Grid purchase, kW.
    pub grid_kw: f64,
    pub reward: f64,
}

/// Outcome of [`Env::step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub record: StepRecord,
}

/// How the initial state of charge is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResetMode {
    /// Uniform in `initial_soc_train` (exploration of storage levels).
    Train,
    /// Fixed at `initial_soc_eval`.
    Eval,
}

/// A running one-day episode over a window of a dataset.
///
/// Episode `e` covers view hours `[(e + 1) * horizon, (e + 2) * horizon)`,
/// so there is always at least one hour of history for the lagged
/// generation/demand readings and a full warm-up day for forecast windows.
#[derive(Debug, Clone)]
pub struct Env<'d> {
    view: SeriesView<'d>,
    params: EnvParams,
    /// View index of the episode's first hour.
    start: usize,
    t: usize,
    soc: f64,
    done: bool,
}

/// Number of whole episodes a view of `len` hours supports.
pub fn episode_count(len: usize, horizon: usize) -> usize {
    // Episode e needs hours up to (e + 2) * horizon - 1 plus one more hour
    // for the final state's price.
    if len < 2 * horizon + 1 {
        0
    } else {
        (len - 1) / horizon - 1
    }
}

impl<'d> Env<'d> {
    /// Starts episode `episode` over `view` and returns the initial state.
    pub fn reset(
        view: SeriesView<'d>,
        params: &EnvParams,
        episode: usize,
        mode: ResetMode,
        rng: &mut impl Rng,
    ) -> Result<(Self, EnvState)> {
        params.validate()?;
        let available = episode_count(view.len(), params.horizon);
        if episode >= available {
            return Err(EmsError::env(format!(
                "episode {episode} out of range: view of {} hours supports {available} episodes \
                 of {} steps",
                view.len(),
                params.horizon
            )));
        }
        let start = (episode + 1) * params.horizon;
        let soc = match mode {
            ResetMode::Eval => params.initial_soc_eval,
            ResetMode::Train => {
                let (lo, hi) = params.initial_soc_train;
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
        };
        let env = Env {
            view,
            params: *params,
            start,
            t: 0,
            soc,
            done: false,
        };
        let state = env.state();
        Ok((env, state))
    }

    /// Current observable state.
    pub fn state(&self) -> EnvState {
        let i = self.start + self.t;
        EnvState {
            soc: self.soc,
            prev_generation: self.view.generation(i - 1),
            prev_demand: self.view.demand(i - 1),
            price: self.view.price(i),
        }
    }

    /// View index of the current hour (useful for building forecast
    /// windows).
    pub fn current_hour(&self) -> usize {
        self.start + self.t
    }

    pub fn soc(&self) -> f64 {
        self.soc
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Applies an action. The request is clamped first to the power limits,
    /// then to the state-of-charge feasible range, so the executed action
    /// can always be absorbed by the battery. Stepping a finished episode is
    /// an error.
    pub fn step(&mut self, action_requested: f64) -> Result<StepOutcome> {
        if self.done {
            return Err(EmsError::env("step called on a finished episode"));
        }
        if !action_requested.is_finite() {
            return Err(EmsError::env(format!(
                "non-finite action {action_requested}"
            )));
        }
        let p = &self.params;
        let state = self.state();
        let i = self.start + self.t;
        let (generation, demand, price) = (
            self.view.generation(i),
            self.view.demand(i),
            self.view.price(i),
        );

        // Power limits, then feasibility: the most the battery can absorb or
        // supply in one hour from its current state of charge.
        let power_clamped = action_requested.clamp(-p.discharge_max_kw, p.charge_max_kw);
        let charge_limit = (1.0 - self.soc) * p.capacity_kwh / p.eta_charge;
        let discharge_limit = -(self.soc * p.capacity_kwh * p.eta_discharge);
        let executed = power_clamped.clamp(discharge_limit, charge_limit);

        let grid_kw = grid_purchase(demand, generation, executed);
        let reward = step_reward(price, grid_kw, self.soc, executed, p);

        // When the feasibility clamp binds, land exactly on the bound rather
        // than recomputing it through the transition arithmetic.
        let next_soc = if power_clamped > charge_limit {
            1.0
        } else if power_clamped < discharge_limit {
            0.0
        } else {
            soc_transition(self.soc, executed, p)
        };

        let record = StepRecord {
            t: self.t,
            soc: self.soc,
            prev_generation: state.prev_generation,
            prev_demand: state.prev_demand,
            price,
            action_requested,
            action_executed: executed,
            grid_kw,
            reward,
        };

        self.soc = next_soc;
        self.t += 1;
        self.done = self.t == p.horizon;
        Ok(StepOutcome {
            state: self.state(),
            reward,
            done: self.done,
            record,
        })
    }
}
