//! Define-by-run computation graph with reverse-mode differentiation.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{EmsError, Result};

/// Handle to a node in a [`Graph`]. Only valid for the graph that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Named input leaf, bound at forward time.
    Input(String),
    /// Named parameter leaf; graphs deduplicate by name, so reusing a
    /// parameter across time steps accumulates its gradient.
    Param(String),
    /// Constant leaf.
    Const,
    /// Matrix `[m, n]` times vector `[n]` -> `[m]`.
    MatVec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product.
    Mul(NodeId, NodeId),
    /// Multiply by a fixed scalar.
    Scale(NodeId, f64),
    /// Add a fixed scalar to every element.
    Shift(NodeId, f64),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    /// Concatenate 1-D tensors.
    Concat(Vec<NodeId>),
    /// Sum of all elements -> scalar.
    Sum(NodeId),
    /// Mean of all elements -> scalar.
    Mean(NodeId),
    /// Elementwise minimum; on ties the gradient flows to the first operand.
    Min(NodeId, NodeId),
    /// Elementwise clamp; at the boundaries the gradient passes through
    /// (identity branch).
    Clip { x: NodeId, lo: f64, hi: f64 },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Option<Tensor>,
    grad: Vec<f64>,
}

/// A reverse-mode automatic differentiation graph.
///
/// Operations append nodes and return ids, so ids are already in topological
/// order; [`Graph::forward`] evaluates a prefix in order and
/// [`Graph::backward`] sweeps it in reverse. Evaluation is deterministic:
/// identical graphs and values produce bit-identical results.
pub struct Graph {
    nodes: Vec<Node>,
    /// Declaration-ordered input leaves: `(name, id)`.
    inputs: Vec<(String, NodeId)>,
    /// Parameter name -> node id (deduplication and gradient export).
    params: BTreeMap<String, NodeId>,
    /// Highest node index covered by the most recent forward pass.
    forwarded: Option<usize>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            inputs: Vec::new(),
            params: BTreeMap::new(),
            forwarded: None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Option<Tensor>) -> NodeId {
        let n: usize = shape.iter().product();
        self.nodes.push(Node {
            op,
            shape,
            value,
            grad: vec![0.0; n],
        });
        // Any structural change invalidates cached forward results.
        self.forwarded = None;
        NodeId(self.nodes.len() - 1)
    }

    fn check_id(&self, id: NodeId, op: &str) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(EmsError::graph(format!(
                "{op}: node id {} out of range (graph has {} nodes)",
                id.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn shape_of(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    // ---------------------------------------------------------------- leaves

    /// Declares a named input leaf whose value is supplied to `forward`.
    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        if shape.iter().product::<usize>() == 0 {
            return Err(EmsError::graph(format!(
                "input '{name}': empty shape {shape:?}"
            )));
        }
        if self.inputs.iter().any(|(n, _)| n == name) {
            return Err(EmsError::graph(format!("input '{name}' declared twice")));
        }
        let id = self.push(Op::Input(name.to_string()), shape.to_vec(), None);
        self.inputs.push((name.to_string(), id));
        Ok(id)
    }

    /// Declares (or reuses) a named parameter leaf holding `value`.
    ///
    /// Registering the same name again returns the existing node id — this is
    /// how weight sharing across time steps works — and requires the same
    /// shape. The stored value of an existing name is left untouched; use
    /// [`Graph::set_param`] to overwrite it.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        if value.is_empty() {
            return Err(EmsError::graph(format!("param '{name}': empty tensor")));
        }
        if let Some(&id) = self.params.get(name) {
            if self.nodes[id.0].shape != value.shape() {
                return Err(EmsError::graph(format!(
                    "param '{name}' re-registered with shape {:?}, existing shape {:?}",
                    value.shape(),
                    self.nodes[id.0].shape
                )));
            }
            return Ok(id);
        }
        let shape = value.shape().to_vec();
        let id = self.push(Op::Param(name.to_string()), shape, Some(value));
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Adds a constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        if value.is_empty() {
            return Err(EmsError::graph("constant: empty tensor"));
        }
        let shape = value.shape().to_vec();
        Ok(self.push(Op::Const, shape, Some(value)))
    }

    /// Convenience: scalar constant.
    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        let t = Tensor::scalar(v);
        self.push(Op::Const, vec![1], Some(t))
    }

    /// Replaces the value of a registered parameter (same shape required).
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = *self
            .params
            .get(name)
            .ok_or_else(|| EmsError::graph(format!("set_param: unknown parameter '{name}'")))?;
        if self.nodes[id.0].shape != value.shape() {
            return Err(EmsError::graph(format!(
                "set_param '{name}': shape {:?} does not match registered shape {:?}",
                value.shape(),
                self.nodes[id.0].shape
            )));
        }
        self.nodes[id.0].value = Some(value);
        self.forwarded = None;
        Ok(())
    }

    /// Registered parameter names in sorted order.
    pub fn param_names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    /// Current value of a registered parameter.
    pub fn param_value(&self, name: &str) -> Result<&Tensor> {
        let id = self
            .params
            .get(name)
            .ok_or_else(|| EmsError::graph(format!("param_value: unknown parameter '{name}'")))?;
        self.nodes[id.0]
            .value
            .as_ref()
            .ok_or_else(|| EmsError::graph(format!("param '{name}' has no value")))
    }

    // ------------------------------------------------------------ operations

    fn binary_elementwise(&mut self, op_name: &str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        self.check_id(a, op_name)?;
        self.check_id(b, op_name)?;
        let sa = self.shape_of(a);
        let sb = self.shape_of(b);
        if sa != sb {
            return Err(EmsError::graph(format!(
                "{op_name}: mismatched shapes {sa:?} vs {sb:?}"
            )));
        }
        Ok(sa.to_vec())
    }

    /// Matrix–vector product: `w` of shape `[m, n]` times `x` of shape `[n]`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        self.check_id(w, "matvec")?;
        self.check_id(x, "matvec")?;
        let sw = self.shape_of(w).to_vec();
        let sx = self.shape_of(x).to_vec();
        if sw.len() != 2 || sx.len() != 1 || sw[1] != sx[0] {
            return Err(EmsError::graph(format!(
                "matvec: matrix shape {sw:?} incompatible with vector shape {sx:?}"
            )));
        }
        Ok(self.push(Op::MatVec(w, x), vec![sw[0]], None))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_elementwise("add", a, b)?;
        Ok(self.push(Op::Add(a, b), shape, None))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_elementwise("sub", a, b)?;
        Ok(self.push(Op::Sub(a, b), shape, None))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_elementwise("mul", a, b)?;
        Ok(self.push(Op::Mul(a, b), shape, None))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check_id(x, "scale")?;
        let shape = self.shape_of(x).to_vec();
        Ok(self.push(Op::Scale(x, c), shape, None))
    }

    pub fn shift(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check_id(x, "shift")?;
        let shape = self.shape_of(x).to_vec();
        Ok(self.push(Op::Shift(x, c), shape, None))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x, "sigmoid")?;
        let shape = self.shape_of(x).to_vec();
        Ok(self.push(Op::Sigmoid(x), shape, None))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x, "tanh")?;
        let shape = self.shape_of(x).to_vec();
        Ok(self.push(Op::Tanh(x), shape, None))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x, "exp")?;
        let shape = self.shape_of(x).to_vec();
        Ok(self.push(Op::Exp(x), shape, None))
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x, "log")?;
        let shape = self.shape_of(x).to_vec();
        Ok(self.push(Op::Log(x), shape, None))
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x, "square")?;
        let shape = self.shape_of(x).to_vec();
        Ok(self.push(Op::Square(x), shape, None))
    }

    /// Concatenates 1-D tensors in order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(EmsError::graph("concat: no operands"));
        }
        let mut total = 0usize;
        for &p in parts {
            self.check_id(p, "concat")?;
            let s = self.shape_of(p);
            if s.len() != 1 {
                return Err(EmsError::graph(format!(
                    "concat: operand of shape {s:?} is not 1-D"
                )));
            }
            total += s[0];
        }
        Ok(self.push(Op::Concat(parts.to_vec()), vec![total], None))
    }

    /// Sum of all elements, producing a scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x, "sum")?;
        Ok(self.push(Op::Sum(x), vec![1], None))
    }

    /// Mean of all elements, producing a scalar.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_id(x, "mean")?;
        Ok(self.push(Op::Mean(x), vec![1], None))
    }

    /// Elementwise minimum. On ties the gradient flows to the first operand.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let shape = self.binary_elementwise("min", a, b)?;
        Ok(self.push(Op::Min(a, b), shape, None))
    }

    /// Elementwise clamp to `[lo, hi]`. Boundary values count as inside, so
    /// their gradient passes through.
    pub fn clip(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.check_id(x, "clip")?;
        if !(lo <= hi) {
            return Err(EmsError::graph(format!(
                "clip: invalid interval [{lo}, {hi}]"
            )));
        }
        let shape = self.shape_of(x).to_vec();
        Ok(self.push(Op::Clip { x, lo, hi }, shape, None))
    }

    // ------------------------------------------------------------ evaluation

    /// Evaluates nodes up to `output` with the given input bindings and
    /// returns the output value.
    ///
    /// Every input leaf at or before `output` must be bound by name; unknown
    /// binding names are rejected. A non-finite output is an error.
    pub fn forward(&mut self, output: NodeId, bindings: &[(&str, &Tensor)]) -> Result<Tensor> {
        self.check_id(output, "forward")?;
        self.forwarded = None;

        for (name, _) in bindings {
            if !self.inputs.iter().any(|(n, _)| n == name) {
                return Err(EmsError::graph(format!(
                    "forward: binding for unknown input '{name}'"
                )));
            }
        }
        for (name, id) in self.inputs.clone() {
            if id.0 > output.0 {
                continue;
            }
            let bound = bindings.iter().find(|(n, _)| *n == name);
            match bound {
                None => {
                    return Err(EmsError::graph(format!(
                        "forward: missing binding for input '{name}'"
                    )))
                }
                Some((_, t)) => {
                    if t.shape() != self.nodes[id.0].shape {
                        return Err(EmsError::graph(format!(
                            "forward: input '{name}' bound with shape {:?}, declared {:?}",
                            t.shape(),
                            self.nodes[id.0].shape
                        )));
                    }
                    self.nodes[id.0].value = Some((*t).clone());
                }
            }
        }

        for i in 0..=output.0 {
            self.eval_node(i)?;
        }
        self.forwarded = Some(output.0);

        let out = self.nodes[output.0]
            .value
            .as_ref()
            .expect("evaluated node has a value")
            .clone();
        if !out.all_finite() {
            return Err(EmsError::numeric(
                "forward: non-finite values in output".to_string(),
            ));
        }
        Ok(out)
    }

    fn eval_node(&mut self, i: usize) -> Result<()> {
        let op = self.nodes[i].op.clone();
        let value = match op {
            Op::Input(name) => {
                if self.nodes[i].value.is_none() {
                    return Err(EmsError::graph(format!(
                        "forward: missing binding for input '{name}'"
                    )));
                }
                return Ok(());
            }
            Op::Param(name) => {
                if self.nodes[i].value.is_none() {
                    return Err(EmsError::graph(format!("param '{name}' has no value")));
                }
                return Ok(());
            }
            Op::Const => return Ok(()),
            Op::MatVec(w, x) => {
                let wt = self.value_ref(w);
                let xt = self.value_ref(x);
                let (m, n) = (wt.shape()[0], wt.shape()[1]);
                let wv = wt.values();
                let xv = xt.values();
                let mut out = vec![0.0; m];
                for r in 0..m {
                    let row = &wv[r * n..(r + 1) * n];
                    let mut acc = 0.0;
                    for c in 0..n {
                        acc += row[c] * xv[c];
                    }
                    out[r] = acc;
                }
                Tensor::vector(out)
            }
            Op::Add(a, b) => self.zip(a, b, |x, y| x + y),
            Op::Sub(a, b) => self.zip(a, b, |x, y| x - y),
            Op::Mul(a, b) => self.zip(a, b, |x, y| x * y),
            Op::Scale(x, c) => self.map(x, |v| v * c),
            Op::Shift(x, c) => self.map(x, |v| v + c),
            Op::Sigmoid(x) => self.map(x, |v| 1.0 / (1.0 + (-v).exp())),
            Op::Tanh(x) => self.map(x, f64::tanh),
            Op::Exp(x) => self.map(x, f64::exp),
            Op::Log(x) => self.map(x, f64::ln),
            Op::Square(x) => self.map(x, |v| v * v),
            Op::Concat(parts) => {
                let mut out = Vec::new();
                for p in &parts {
                    out.extend_from_slice(self.value_ref(*p).values());
                }
                Tensor::vector(out)
            }
            Op::Sum(x) => Tensor::scalar(self.value_ref(x).values().iter().sum()),
            Op::Mean(x) => {
                let v = self.value_ref(x).values();
                Tensor::scalar(v.iter().sum::<f64>() / v.len() as f64)
            }
            Op::Min(a, b) => self.zip(a, b, |x, y| if x <= y { x } else { y }),
            Op::Clip { x, lo, hi } => self.map(x, |v| v.clamp(lo, hi)),
        };
        self.nodes[i].value = Some(value);
        Ok(())
    }

    fn value_ref(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("parent evaluated before child")
    }

    fn zip(&self, a: NodeId, b: NodeId, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let av = self.value_ref(a);
        let bv = self.value_ref(b).values();
        let vals = av
            .values()
            .iter()
            .zip(bv.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), vals).expect("shape preserved")
    }

    fn map(&self, x: NodeId, f: impl Fn(f64) -> f64) -> Tensor {
        let xv = self.value_ref(x);
        let vals = xv.values().iter().map(|&v| f(v)).collect();
        Tensor::new(xv.shape().to_vec(), vals).expect("shape preserved")
    }

    /// Value of any node after the forward pass that covered it.
    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        self.check_id(id, "value")?;
        match self.forwarded {
            Some(hi) if id.0 <= hi => Ok(self.value_ref(id)),
            _ => Err(EmsError::graph(
                "value: node not covered by the last forward pass",
            )),
        }
    }

    /// Reverse sweep from a scalar `output`, seeding its gradient with
    /// `seed`. Returns the gradient of every registered parameter (parameters
    /// the output does not depend on get zero gradients).
    pub fn backward(&mut self, output: NodeId, seed: f64) -> Result<BTreeMap<String, Tensor>> {
        self.check_id(output, "backward")?;
        match self.forwarded {
            Some(hi) if output.0 <= hi => {}
            _ => {
                return Err(EmsError::graph(
                    "backward called before a forward pass covering the output",
                ))
            }
        }
        if self.nodes[output.0].shape != [1] {
            return Err(EmsError::graph(format!(
                "backward: output must be scalar, got shape {:?}",
                self.nodes[output.0].shape
            )));
        }

        for node in self.nodes.iter_mut() {
            for g in node.grad.iter_mut() {
                *g = 0.0;
            }
        }
        self.nodes[output.0].grad[0] = seed;

        for i in (0..=output.0).rev() {
            let (parents, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let gy = &node.grad;
            match &node.op {
                Op::Input(_) | Op::Param(_) | Op::Const => {}
                Op::MatVec(w, x) => {
                    let n = parents[x.0].shape[0];
                    let m = node.shape[0];
                    let xv: Vec<f64> = parents[x.0].value.as_ref().unwrap().values().to_vec();
                    let wv: Vec<f64> = parents[w.0].value.as_ref().unwrap().values().to_vec();
                    for r in 0..m {
                        let g = gy[r];
                        if g == 0.0 {
                            continue;
                        }
                        for c in 0..n {
                            parents[w.0].grad[r * n + c] += g * xv[c];
                        }
                    }
                    for c in 0..n {
                        let mut acc = 0.0;
                        for r in 0..m {
                            acc += gy[r] * wv[r * n + c];
                        }
                        parents[x.0].grad[c] += acc;
                    }
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    for (k, &g) in gy.iter().enumerate() {
                        parents[a.0].grad[k] += g;
                    }
                    for (k, &g) in gy.iter().enumerate() {
                        parents[b.0].grad[k] += g;
                    }
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    for (k, &g) in gy.iter().enumerate() {
                        parents[a.0].grad[k] += g;
                    }
                    for (k, &g) in gy.iter().enumerate() {
                        parents[b.0].grad[k] -= g;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let av: Vec<f64> = parents[a.0].value.as_ref().unwrap().values().to_vec();
                    let bv: Vec<f64> = parents[b.0].value.as_ref().unwrap().values().to_vec();
                    for (k, &g) in gy.iter().enumerate() {
                        parents[a.0].grad[k] += g * bv[k];
                    }
                    for (k, &g) in gy.iter().enumerate() {
                        parents[b.0].grad[k] += g * av[k];
                    }
                }
                Op::Scale(x, c) => {
                    for (k, &g) in gy.iter().enumerate() {
                        parents[x.0].grad[k] += g * c;
                    }
                }
                Op::Shift(x, _) => {
                    for (k, &g) in gy.iter().enumerate() {
                        parents[x.0].grad[k] += g;
                    }
                }
                Op::Sigmoid(x) => {
                    let yv = node.value.as_ref().unwrap().values();
                    for (k, &g) in gy.iter().enumerate() {
                        let y = yv[k];
                        parents[x.0].grad[k] += g * y * (1.0 - y);
                    }
                }
                Op::Tanh(x) => {
                    let yv = node.value.as_ref().unwrap().values();
                    for (k, &g) in gy.iter().enumerate() {
                        let y = yv[k];
                        parents[x.0].grad[k] += g * (1.0 - y * y);
                    }
                }
                Op::Exp(x) => {
                    let yv = node.value.as_ref().unwrap().values();
                    for (k, &g) in gy.iter().enumerate() {
                        parents[x.0].grad[k] += g * yv[k];
                    }
                }
                Op::Log(x) => {
                    let xv: Vec<f64> = parents[x.0].value.as_ref().unwrap().values().to_vec();
                    for (k, &g) in gy.iter().enumerate() {
                        parents[x.0].grad[k] += g / xv[k];
                    }
                }
                Op::Square(x) => {
                    let xv: Vec<f64> = parents[x.0].value.as_ref().unwrap().values().to_vec();
                    for (k, &g) in gy.iter().enumerate() {
                        parents[x.0].grad[k] += g * 2.0 * xv[k];
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0usize;
                    for p in parts {
                        let len = parents[p.0].shape[0];
                        for k in 0..len {
                            parents[p.0].grad[k] += gy[offset + k];
                        }
                        offset += len;
                    }
                }
                Op::Sum(x) => {
                    let g = gy[0];
                    for slot in parents[x.0].grad.iter_mut() {
                        *slot += g;
                    }
                }
                Op::Mean(x) => {
                    let n = parents[x.0].grad.len() as f64;
                    let g = gy[0] / n;
                    for slot in parents[x.0].grad.iter_mut() {
                        *slot += g;
                    }
                }
                Op::Min(a, b) => {
                    let (a, b) = (*a, *b);
                    let av: Vec<f64> = parents[a.0].value.as_ref().unwrap().values().to_vec();
                    let bv: Vec<f64> = parents[b.0].value.as_ref().unwrap().values().to_vec();
                    for (k, &g) in gy.iter().enumerate() {
                        if av[k] <= bv[k] {
                            parents[a.0].grad[k] += g;
                        } else {
                            parents[b.0].grad[k] += g;
                        }
                    }
                }
                Op::Clip { x, lo, hi } => {
                    let (x, lo, hi) = (*x, *lo, *hi);
                    let xv: Vec<f64> = parents[x.0].value.as_ref().unwrap().values().to_vec();
                    for (k, &g) in gy.iter().enumerate() {
                        if xv[k] >= lo && xv[k] <= hi {
                            parents[x.0].grad[k] += g;
                        }
                    }
                }
            }
        }

        let mut out = BTreeMap::new();
        for (name, id) in &self.params {
            let node = &self.nodes[id.0];
            out.insert(
                name.clone(),
                Tensor::new(node.shape.clone(), node.grad.clone()).expect("grad matches shape"),
            );
        }
        Ok(out)
    }

    /// Gradient buffer of any node after a backward sweep (inputs included).
    pub fn gradient(&self, id: NodeId) -> Result<Tensor> {
        self.check_id(id, "gradient")?;
        let node = &self.nodes[id.0];
        Tensor::new(node.shape.clone(), node.grad.clone())
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error over all parameter elements.
    pub max_rel_err: f64,
    /// `(parameter, flat index)` where the largest error occurred.
    pub worst: Option<(String, usize)>,
    /// Per-parameter largest relative error.
    pub per_param: BTreeMap<String, f64>,
    /// Tolerance the check was run at.
    pub tolerance: f64,
    /// True when `max_rel_err <= tolerance`.
    pub pass: bool,
}

/// Builds a scalar-valued graph with `build`, computes analytic gradients,
/// and compares them against central finite differences with the given
/// `step`.
///
/// The builder must register every trainable leaf via [`Graph::param`] and
/// embed data as constants (the check re-runs `forward` with no bindings).
/// Relative error uses `|a - n| / max(|a|, |n|, 1)` so near-zero gradients
/// are compared absolutely.
pub fn grad_check<F>(build: F, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let out = build(&mut g)?;
    g.forward(out, &[])?;
    let analytic = g.backward(out, 1.0)?;
    grad_check_against(&mut g, out, &analytic, step, tol)
}

/// Finite-difference comparison against externally supplied gradients.
///
/// Exposed separately so tests can verify the checker itself rejects wrong
/// gradients.
pub fn grad_check_against(
    g: &mut Graph,
    out: NodeId,
    analytic: &BTreeMap<String, Tensor>,
    step: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if step <= 0.0 {
        return Err(EmsError::invalid("grad check: step must be positive"));
    }
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        per_param: BTreeMap::new(),
        tolerance: tol,
        pass: true,
    };
    for name in g.param_names() {
        let base = g.param_value(&name)?.clone();
        let grads = analytic.get(&name).ok_or_else(|| {
            EmsError::graph(format!("grad check: no analytic gradient for '{name}'"))
        })?;
        let mut param_worst = 0.0f64;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus.values_mut()[i] += step;
            g.set_param(&name, plus)?;
            let fp = g.forward(out, &[])?.item()?;

            let mut minus = base.clone();
            minus.values_mut()[i] -= step;
            g.set_param(&name, minus)?;
            let fm = g.forward(out, &[])?.item()?;

            let numeric = (fp - fm) / (2.0 * step);
            let a = grads.values()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            param_worst = param_worst.max(rel);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.clone(), i));
            }
        }
        g.set_param(&name, base)?;
        report.per_param.insert(name.clone(), param_worst);
    }
    // Leave the graph evaluated at the base point.
    g.forward(out, &[])?;
    report.pass = report.max_rel_err <= tol;
    Ok(report)
}
