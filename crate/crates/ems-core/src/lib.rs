//! Core library for microgrid battery energy management experiments.
//!
//! The crate is organised bottom-up:
//!
//! * [`autodiff`] — a small reverse-mode automatic differentiation engine
//!   (define-by-run graph over `f64` tensors) with finite-difference checking.
//! * [`nn`] — network building blocks on top of the graph: parameter storage,
//!   Adam, feedforward and gated recurrent cells, and a squashed Gaussian
//!   action head.
//! * [`env`] — the hourly battery/grid simulator: state-of-charge dynamics,
//!   degradation cost and grid-purchase pricing.
//! * [`data`] — hourly time-series datasets: CSV loading, synthetic
//!   generation and chronological splits.
//! * [`forecast`] — supervised k-step-ahead forecasting with recurrent nets.
//! * [`rl`] — policy-gradient training for the two control schemes, with and
//!   without a separate forecasting stage.
//! * [`config`], [`checkpoint`] — run configuration and bit-exact model
//!   serialization.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod env;
pub mod error;
pub mod forecast;
pub mod nn;
pub mod rl;
pub mod stats;

pub use error::{EmsError, Result};

/// Derives a child RNG seed from a master seed and a textual tag.
///
/// Used everywhere a component needs its own deterministic stream (one per
/// forecaster model, one per rollout worker, ...) so that seeds never collide
/// and runs are reproducible regardless of scheduling.
pub fn seed_for(master: u64, tag: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is long enough"))
}
