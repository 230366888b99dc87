//! Actor and critic networks for both scheme variants.
//!
//! The feedforward variant maps the observation straight through a
//! two-hidden-layer perceptron. The recurrent variant first folds the
//! observation into a gated recurrent hidden state carried across the
//! episode, then applies the same perceptron head to the hidden state.
//!
//! Every forward path exists twice: a plain inference function used while
//! collecting rollouts and a graph builder used during updates. The pairs
//! perform the same floating-point operations in the same order, so a
//! replayed trajectory reproduces its sampling-time log-probabilities bit
//! for bit.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{EmsError, Result};
use crate::nn::{
    gru_cell_graph, gru_cell_infer, init_gru_cell, init_mlp, mlp_graph, mlp_infer, GruSpec,
    MlpSpec, ParameterStore,
};
use crate::rl::SchemeKind;

/// Name of the state-independent log standard deviation in the actor store.
pub const LOG_STD_NAME: &str = "log_std";
/// Prefix of the recurrent encoder parameters.
pub const ENCODER_PREFIX: &str = "enc";
/// Prefix of the perceptron head parameters.
pub const HEAD_PREFIX: &str = "head";

/// Actor and critic parameter stores plus the shapes needed to rebuild
/// their forward passes.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub kind: SchemeKind,
    pub obs_width: usize,
    /// Hidden width of the recurrent encoder; zero for the feedforward kind.
    pub gru_hidden: usize,
    pub actor: ParameterStore,
    pub critic: ParameterStore,
}

impl ActorCritic {
    /// Initializes both networks. The feedforward kind ignores `gru_hidden`.
    pub fn new(
        kind: SchemeKind,
        obs_width: usize,
        gru_hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if obs_width == 0 {
            return Err(EmsError::invalid("observation width must be at least 1"));
        }
        let gru_hidden = match kind {
            SchemeKind::WithPrediction => 0,
            SchemeKind::WithoutPrediction => {
                if gru_hidden == 0 {
                    return Err(EmsError::invalid(
                        "recurrent networks need a non-zero hidden width",
                    ));
                }
                gru_hidden
            }
        };
        let head_input = if gru_hidden == 0 { obs_width } else { gru_hidden };
        let head = MlpSpec::default_head(head_input, 1);

        let mut actor = ParameterStore::new();
        let mut critic = ParameterStore::new();
        if gru_hidden > 0 {
            let enc = GruSpec::new(obs_width, gru_hidden, 1)?;
            init_gru_cell(&mut actor, ENCODER_PREFIX, &enc, rng)?;
            init_mlp(&mut actor, HEAD_PREFIX, &head, rng)?;
            actor.register(LOG_STD_NAME, Tensor::vector(vec![0.0]))?;
            init_gru_cell(&mut critic, ENCODER_PREFIX, &enc, rng)?;
            init_mlp(&mut critic, HEAD_PREFIX, &head, rng)?;
        } else {
            init_mlp(&mut actor, HEAD_PREFIX, &head, rng)?;
            actor.register(LOG_STD_NAME, Tensor::vector(vec![0.0]))?;
            init_mlp(&mut critic, HEAD_PREFIX, &head, rng)?;
        }
        Ok(ActorCritic {
            kind,
            obs_width,
            gru_hidden,
            actor,
            critic,
        })
    }

    pub fn head_spec(&self) -> MlpSpec {
        let input = if self.gru_hidden == 0 {
            self.obs_width
        } else {
            self.gru_hidden
        };
        MlpSpec::default_head(input, 1)
    }

    pub fn gru_spec(&self) -> Option<GruSpec> {
        if self.gru_hidden == 0 {
            None
        } else {
            Some(GruSpec::new(self.obs_width, self.gru_hidden, 1).expect("validated widths"))
        }
    }

    pub fn log_std(&self) -> Result<f64> {
        self.actor.get_scalar(LOG_STD_NAME)
    }

    /// Zero hidden state for episode starts (empty for feedforward nets).
    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.gru_hidden]
    }

    fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_width {
            return Err(EmsError::invalid(format!(
                "network expects observations of width {}, got {}",
                self.obs_width,
                obs.len()
            )));
        }
        Ok(())
    }

    /// Actor forward pass at sampling time: pre-squash action mean and the
    /// next hidden state (empty for feedforward nets).
    pub fn actor_step_infer(&self, obs: &[f64], hidden: &[f64]) -> Result<(f64, Vec<f64>)> {
        step_infer(self, &self.actor, obs, hidden)
    }

    /// Critic forward pass at sampling time: value estimate and next hidden
    /// state.
    pub fn critic_step_infer(&self, obs: &[f64], hidden: &[f64]) -> Result<(f64, Vec<f64>)> {
        step_infer(self, &self.critic, obs, hidden)
    }
}

fn step_infer(
    ac: &ActorCritic,
    store: &ParameterStore,
    obs: &[f64],
    hidden: &[f64],
) -> Result<(f64, Vec<f64>)> {
    ac.check_obs(obs)?;
    let head = ac.head_spec();
    match ac.gru_spec() {
        None => {
            let out = mlp_infer(store, HEAD_PREFIX, &head, obs)?;
            Ok((out[0], Vec::new()))
        }
        Some(enc) => {
            if hidden.len() != ac.gru_hidden {
                return Err(EmsError::invalid(format!(
                    "recurrent step expects hidden width {}, got {}",
                    ac.gru_hidden,
                    hidden.len()
                )));
            }
            let h_next = gru_cell_infer(store, ENCODER_PREFIX, &enc, obs, hidden)?;
            let out = mlp_infer(store, HEAD_PREFIX, &head, &h_next)?;
            Ok((out[0], h_next))
        }
    }
}

/// Graph twin of [`ActorCritic::actor_step_infer`] /
/// [`ActorCritic::critic_step_infer`]: consumes an observation node and a
/// hidden node (ignored by feedforward nets), returns the scalar output
/// node and the next hidden node.
pub fn step_graph(
    ac: &ActorCritic,
    store: &ParameterStore,
    g: &mut Graph,
    obs: NodeId,
    hidden: NodeId,
) -> Result<(NodeId, NodeId)> {
    let head = ac.head_spec();
    match ac.gru_spec() {
        None => {
            let out = mlp_graph(g, store, HEAD_PREFIX, &head, obs)?;
            Ok((out, hidden))
        }
        Some(enc) => {
            let h_next = gru_cell_graph(g, store, ENCODER_PREFIX, &enc, obs, hidden)?;
            let out = mlp_graph(g, store, HEAD_PREFIX, &head, h_next)?;
            Ok((out, h_next))
        }
    }
}
