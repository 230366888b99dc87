pub mod compare;
pub mod evaluate;
pub mod synth;
pub mod train_forecaster;
pub mod train_policy;

use std::str::FromStr;

use ems_core::rl::SchemeKind;

/// Clap value parser for scheme names.
pub fn parse_scheme(s: &str) -> Result<SchemeKind, String> {
    SchemeKind::from_str(s).map_err(|e| e.to_string())
}
