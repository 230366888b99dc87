//! Observation vectors for the two scheme variants.

use crate::data::SeriesView;
use crate::env::EnvState;
use crate::error::{EmsError, Result};
use crate::forecast::ForecasterBundle;
use crate::rl::SchemeKind;
use crate::data::Quantity;

/// Width of the observation vector.
///
/// Without prediction the policy sees the raw state. With prediction it
/// additionally sees nowcasts of the two delayed meters and, per lookahead
/// hour `j`, forecasts of price, generation and demand:
///
/// ```text
/// [ soc, gen[t-1], dem[t-1], price[t],
///   gen_hat[t], dem_hat[t],
///   (price_hat[t+j], gen_hat[t+j], dem_hat[t+j]) for j = 1..=lookahead ]
/// ```
pub fn observation_width(kind: SchemeKind, lookahead: usize) -> usize {
    match kind {
        SchemeKind::WithoutPrediction => EnvState::WIDTH,
        SchemeKind::WithPrediction => EnvState::WIDTH + 2 + 3 * lookahead,
    }
}

/// Builds the observation for the current hour.
///
/// `hour` is the view index of the hour being decided. Generation and
/// demand are metered with a one-hour delay, so their forecast windows end
/// at `hour - 1`; the price window ends at `hour` because the current price
/// is announced. Nothing past `hour` is ever read.
pub fn build_observation(
    kind: SchemeKind,
    state: &EnvState,
    view: &SeriesView<'_>,
    hour: usize,
    bundle: Option<&ForecasterBundle>,
    lookahead: usize,
) -> Result<Vec<f64>> {
    match kind {
        SchemeKind::WithoutPrediction => Ok(state.to_array().to_vec()),
        SchemeKind::WithPrediction => {
            let bundle = bundle.ok_or_else(|| {
                EmsError::invalid(
                    "with-prediction observations need a forecaster bundle",
                )
            })?;
            let w = bundle.warmup_hours;
            if hour < w {
                return Err(EmsError::invalid(format!(
                    "hour {hour} lacks the {w} hours of history forecasting needs"
                )));
            }
            if lookahead == 0 {
                return Err(EmsError::invalid("lookahead must be at least 1 hour"));
            }

            // Trailing windows: delayed meters end one hour back.
            let meter_window = |q: Quantity| -> Vec<f64> {
                (hour - w..hour).map(|i| view.value(q, i)).collect()
            };
            let gen_win = meter_window(Quantity::Generation);
            let dem_win = meter_window(Quantity::Demand);
            let price_win: Vec<f64> = (hour + 1 - w..=hour)
                .map(|i| view.value(Quantity::Price, i))
                .collect();

            let mut obs = Vec::with_capacity(observation_width(kind, lookahead));
            obs.extend_from_slice(&state.to_array());
            // Nowcasts of the delayed meters (one step past their windows).
            obs.push(bundle.predict(Quantity::Generation, 1, &gen_win)?);
            obs.push(bundle.predict(Quantity::Demand, 1, &dem_win)?);
            for j in 1..=lookahead {
                obs.push(bundle.predict(Quantity::Price, j, &price_win)?);
                obs.push(bundle.predict(Quantity::Generation, j + 1, &gen_win)?);
                obs.push(bundle.predict(Quantity::Demand, j + 1, &dem_win)?);
            }
            Ok(obs)
        }
    }
}
