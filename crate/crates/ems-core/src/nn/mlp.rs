//! Feedforward networks with tanh hidden activations and a linear output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{glorot_uniform, ParameterStore};
use crate::autodiff::{Graph, NodeId, Tensor};
use crate::error::{EmsError, Result};

/// Layer widths of a feedforward network, input first, output last.
/// `[9, 64, 64, 1]` is a two-hidden-layer net mapping 9 inputs to 1 output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(EmsError::invalid(format!(
                "mlp spec needs at least two non-zero widths, got {widths:?}"
            )));
        }
        Ok(MlpSpec { widths })
    }

    /// Standard policy/value head: `[input, 64, 64, output]`.
    pub fn default_head(input: usize, output: usize) -> Self {
        MlpSpec {
            widths: vec![input, 64, 64, output],
        }
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    fn weight_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.w{layer}")
    }

    fn bias_name(prefix: &str, layer: usize) -> String {
        format!("{prefix}.b{layer}")
    }
}

/// Registers Glorot-initialised weights and zero biases for every layer
/// under `{prefix}.w{i}` / `{prefix}.b{i}`.
pub fn init_mlp(
    store: &mut ParameterStore,
    prefix: &str,
    spec: &MlpSpec,
    rng: &mut impl Rng,
) -> Result<()> {
    for layer in 0..spec.layer_count() {
        let (fan_in, fan_out) = (spec.widths[layer], spec.widths[layer + 1]);
        store.register(
            &MlpSpec::weight_name(prefix, layer),
            glorot_uniform(fan_out, fan_in, rng),
        )?;
        store.register(
            &MlpSpec::bias_name(prefix, layer),
            Tensor::zeros(&[fan_out]),
        )?;
    }
    Ok(())
}

/// Builds the network forward pass in a graph: `tanh(W x + b)` for hidden
/// layers, linear for the last layer. Returns the output node.
pub fn mlp_graph(
    g: &mut Graph,
    store: &ParameterStore,
    prefix: &str,
    spec: &MlpSpec,
    x: NodeId,
) -> Result<NodeId> {
    let mut h = x;
    for layer in 0..spec.layer_count() {
        let w = store.param_node(g, &MlpSpec::weight_name(prefix, layer))?;
        let b = store.param_node(g, &MlpSpec::bias_name(prefix, layer))?;
        let wx = g.matvec(w, h)?;
        let pre = g.add(wx, b)?;
        h = if layer + 1 < spec.layer_count() {
            g.tanh(pre)?
        } else {
            pre
        };
    }
    Ok(h)
}

/// Plain forward pass, bit-identical to [`mlp_graph`] evaluation.
pub fn mlp_infer(
    store: &ParameterStore,
    prefix: &str,
    spec: &MlpSpec,
    x: &[f64],
) -> Result<Vec<f64>> {
    if x.len() != spec.input_width() {
        return Err(EmsError::invalid(format!(
            "mlp input has {} values, spec expects {}",
            x.len(),
            spec.input_width()
        )));
    }
    let mut h = x.to_vec();
    for layer in 0..spec.layer_count() {
        let w = store.get(&MlpSpec::weight_name(prefix, layer))?;
        let b = store.get(&MlpSpec::bias_name(prefix, layer))?;
        let (m, n) = (w.shape()[0], w.shape()[1]);
        let wv = w.values();
        let bv = b.values();
        let mut next = vec![0.0; m];
        for r in 0..m {
            let row = &wv[r * n..(r + 1) * n];
            let mut acc = 0.0;
            for c in 0..n {
                acc += row[c] * h[c];
            }
            next[r] = acc + bv[r];
        }
        if layer + 1 < spec.layer_count() {
            for v in next.iter_mut() {
                *v = v.tanh();
            }
        }
        h = next;
    }
    Ok(h)
}
