//! Gated recurrent cell with an optional linear readout.
//!
//! Update rule for state `h` and input `x`:
//!
//! ```text
//! z      = sigmoid(Wz x + Uz h + bz)        (update gate)
//! r      = sigmoid(Wr x + Ur h + br)        (reset gate)
//! h_cand = tanh(Wh x + Uh (r ⊙ h) + bh)     (candidate state)
//! h_next = (1 - z) ⊙ h + z ⊙ h_cand
//! y      = Wo h_next + bo                   (readout, step variant only)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, ParameterStore};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{EmsError, Result};

/// Shape of a recurrent block: input width, hidden width, readout width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GruSpec {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl GruSpec {
    pub fn new(input: usize, hidden: usize, output: usize) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(EmsError::invalid(format!(
                "gru spec widths must be non-zero, got input={input}, hidden={hidden}, output={output}"
            )));
        }
        Ok(GruSpec {
            input,
            hidden,
            output,
        })
    }
}

const GATE_PARAMS: [(&str, &str, &str); 3] = [
    ("wz", "uz", "bz"),
    ("wr", "ur", "br"),
    ("wh", "uh", "bh"),
];

fn name(prefix: &str, part: &str) -> String {
    format!("{prefix}.{part}")
}

/// Registers the gate parameters (`wz/uz/bz`, `wr/ur/br`, `wh/uh/bh`):
/// Glorot-initialised matrices, zero biases.
pub fn init_gru_cell(
    store: &mut ParameterStore,
    prefix: &str,
    spec: &GruSpec,
    rng: &mut impl Rng,
) -> Result<()> {
    for (w, u, b) in GATE_PARAMS {
        store.register(&name(prefix, w), glorot_uniform(spec.hidden, spec.input, rng))?;
        store.register(&name(prefix, u), glorot_uniform(spec.hidden, spec.hidden, rng))?;
        store.register(&name(prefix, b), Tensor::zeros(&[spec.hidden]))?;
    }
    Ok(())
}

/// Registers the gate parameters plus the readout (`wo`, `bo`).
pub fn init_gru(
    store: &mut ParameterStore,
    prefix: &str,
    spec: &GruSpec,
    rng: &mut impl Rng,
) -> Result<()> {
    init_gru_cell(store, prefix, spec, rng)?;
    store.register(&name(prefix, "wo"), glorot_uniform(spec.output, spec.hidden, rng))?;
    store.register(&name(prefix, "bo"), Tensor::zeros(&[spec.output]))?;
    Ok(())
}

/// One cell update in a graph: returns the next hidden state node.
///
/// Shapes are validated by the graph operations themselves; the spec
/// argument keeps the signature parallel to [`gru_cell_infer`].
pub fn gru_cell_graph(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    _spec: &GruSpec,
    x: NodeId,
    h: NodeId,
) -> Result<NodeId> {
    let gate = |g: &mut Graph, w: &str, u: &str, b: &str, state: NodeId| -> Result<NodeId> {
        let w = store.param_node(g, &name(prefix, w))?;
        let u = store.param_node(g, &name(prefix, u))?;
        let b = store.param_node(g, &name(prefix, b))?;
        let wx = g.matvec(w, x)?;
        let uh = g.matvec(u, state)?;
        let s = g.add(wx, uh)?;
        g.add(s, b)
    };
    let z_pre = gate(g, "wz", "uz", "bz", h)?;
    let z = g.sigmoid(z_pre)?;
    let r_pre = gate(g, "wr", "ur", "br", h)?;
    let r = g.sigmoid(r_pre)?;
    let rh = g.mul(r, h)?;
    let c_pre = gate(g, "wh", "uh", "bh", rh)?;
    let cand = g.tanh(c_pre)?;
    // (1 - z) as shift(scale(z, -1), 1) avoids a ones constant per step.
    let neg_z = g.scale(z, -1.0)?;
    let one_minus_z = g.shift(neg_z, 1.0)?;
    let keep = g.mul(one_minus_z, h)?;
    let take = g.mul(z, cand)?;
    g.add(keep, take)
}

/// One cell update plus readout in a graph: returns `(y, h_next)`.
pub fn gru_step_graph(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    spec: &GruSpec,
    x: NodeId,
    h: NodeId,
) -> Result<(NodeId, NodeId)> {
    let h_next = gru_cell_graph(g, store, prefix, spec, x, h)?;
    let wo = store.param_node(g, &name(prefix, "wo"))?;
    let bo = store.param_node(g, &name(prefix, "bo"))?;
    let wh = g.matvec(wo, h_next)?;
    let y = g.add(wh, bo)?;
    Ok((y, h_next))
}

fn matvec_infer(w: &Tensor, x: &[f64]) -> Vec<f64> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let wv = w.values();
    let mut out = vec![0.0; m];
    for r in 0..m {
        let row = &wv[r * n..(r + 1) * n];
        let mut acc = 0.0;
        for c in 0..n {
            acc += row[c] * x[c];
        }
        out[r] = acc;
    }
    out
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One cell update without a graph, bit-identical to [`gru_cell_graph`].
///
/// Pure function of its arguments: calling it twice with the same inputs
/// returns the same hidden state.
pub fn gru_cell_infer(
    store: &ParameterStore,
    prefix: &str,
    spec: &GruSpec,
    x: &[f64],
    h: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != spec.input || h.len() != spec.hidden {
        return Err(EmsError::invalid(format!(
            "gru cell: input {} / hidden {} do not match spec input {} / hidden {}",
            x.len(),
            h.len(),
            spec.input,
            spec.hidden
        )));
    }
    let gate = |w: &str, u: &str, b: &str, state: &[f64]| -> Result<Vec<f64>> {
        let wx = matvec_infer(store.get(&name(prefix, w))?, x);
        let us = matvec_infer(store.get(&name(prefix, u))?, state);
        let bv = store.get(&name(prefix, b))?.values().to_vec();
        Ok(wx
            .iter()
            .zip(us.iter())
            .zip(bv.iter())
            .map(|((a, c), d)| (a + c) + d)
            .collect())
    };
    let z: Vec<f64> = gate("wz", "uz", "bz", h)?.iter().map(|&v| sigmoid(v)).collect();
    let r: Vec<f64> = gate("wr", "ur", "br", h)?.iter().map(|&v| sigmoid(v)).collect();
    let rh: Vec<f64> = r.iter().zip(h.iter()).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = gate("wh", "uh", "bh", &rh)?.iter().map(|&v| v.tanh()).collect();
    let mut h_next = vec![0.0; spec.hidden];
    for i in 0..spec.hidden {
        let one_minus_z = (z[i] * -1.0) + 1.0;
        h_next[i] = (one_minus_z * h[i]) + (z[i] * cand[i]);
    }
    Ok(h_next)
}

/// One cell update plus readout, bit-identical to [`gru_step_graph`].
pub fn gru_step_infer(
    store: &ParameterStore,
    prefix: &str,
    spec: &GruSpec,
    x: &[f64],
    h: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let h_next = gru_cell_infer(store, prefix, spec, x, h)?;
    let wo = store.get(&name(prefix, "wo"))?;
    let bo = store.get(&name(prefix, "bo"))?.values();
    let wh = matvec_infer(wo, &h_next);
    let y: Vec<f64> = wh.iter().zip(bo.iter()).map(|(a, b)| a + b).collect();
    Ok((y, h_next))
}
