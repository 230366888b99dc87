//! Network building blocks on top of the autodiff graph.
//!
//! Every block comes in two flavours that are kept bit-identical:
//!
//! * a *graph* builder (`*_graph`) used during updates, which registers the
//!   block's parameters in a [`crate::autodiff::Graph`] and returns node ids;
//! * a plain *inference* function (`*_infer`) used during rollouts and
//!   evaluation, which performs the exact same floating-point operations in
//!   the exact same order.
//!
//! Parameters live in a [`ParameterStore`] keyed by qualified names such as
//! `actor.w0`; the same names are used inside graphs so gradients map back
//! onto store entries directly.

mod gaussian;
mod gru;
mod mlp;
mod store;

pub use gaussian::{
    gaussian_log_prob, gaussian_log_prob_graph, gaussian_sample, policy_mode, squash,
    ActionBounds, LOG_STD_MAX, LOG_STD_MIN,
};
pub use gru::{
    gru_cell_graph, gru_cell_infer, gru_step_graph, gru_step_infer, init_gru, init_gru_cell,
    GruSpec,
};
pub use mlp::{init_mlp, mlp_graph, mlp_infer, MlpSpec};
pub use store::{ParameterStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use crate::autodiff::Tensor;
use rand::Rng;

/// Glorot (Xavier) uniform initialisation for a `[rows, cols]` matrix:
/// entries drawn from `U(-limit, limit)` with `limit = sqrt(6 / (fan_in +
/// fan_out))`, where `fan_in = cols` and `fan_out = rows`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::matrix(rows, cols, values).expect("consistent element count")
}
