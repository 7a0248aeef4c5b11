//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every primitive operation of a forward pass on a tape.
//! [`Graph::backward`] replays the tape in exact reverse order, so gradients
//! are deterministic for a fixed forward order. Trainable parameters live in
//! a [`ParamSet`] outside the graph; a graph borrows them read-only and hands
//! their accumulated gradients back through [`Graph::take_param_grads`].
//!
//! The op inventory is exactly what the model's forward passes need: affine
//! maps, pointwise activations, softmax, concatenation, elementwise
//! arithmetic, and a fused log-softmax negative log-likelihood.

use crate::error::{Error, Result};

/// Handle to a node on a graph's tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tensor(usize);

/// Handle to a tensor in a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Frobenius norm (plain Euclidean norm of the flattened values).
    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Ordered store of all trainable parameters of a model.
///
/// Iteration order is creation order, which keeps every consumer
/// (optimizer steps, checkpoints, gradient checks) deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "parameter shape/value length mismatch"
        );
        let id = ParamId(self.entries.len());
        self.entries.push(ParamTensor { name: name.into(), shape, values });
        id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn num_coords(&self) -> usize {
        self.entries.iter().map(|p| p.values.len()).sum()
    }
}

/// Pointwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed in terms of input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Leaf holding its own values (inputs, feature blocks, dropout masks).
    Constant,
    /// Leaf referencing a tensor in the borrowed [`ParamSet`].
    Param(ParamId),
    /// `W x + b` with `W: [out, in]`, `x: [in]`, `b: [out]`.
    Affine { w: usize, x: usize, b: usize },
    Elementwise { kind: Activation, x: usize },
    Softmax { x: usize },
    Concat { parts: Vec<usize> },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    Sum { x: usize },
    /// `logsumexp(logits) - logits[target]`; the stable form of
    /// `-log softmax(logits)[target]`.
    Nll { logits: usize, target: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    /// Stored values; empty for `Param` nodes (values live in the ParamSet).
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

/// Computation tape for one forward pass.
///
/// Dropped after [`Graph::backward`]; there is no graph reuse.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    /// One leaf per parameter at most, so gradients accumulate in one place.
    param_leaves: Vec<Option<usize>>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_leaves: vec![None; params.len()],
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<f64>) -> Tensor {
        debug_assert!(
            matches!(op, Op::Param(_)) || shape.iter().product::<usize>() == values.len()
        );
        self.nodes.push(Node { op, shape, values, grad: None });
        Tensor(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, values: Vec<f64>, shape: Vec<usize>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "constant shape/value length mismatch"
        );
        self.push(Op::Constant, shape, values)
    }

    /// Constant vector of `n` elements.
    pub fn vector(&mut self, values: Vec<f64>) -> Tensor {
        let n = values.len();
        self.constant(values, vec![n])
    }

    pub fn zeros(&mut self, n: usize) -> Tensor {
        self.vector(vec![0.0; n])
    }

    /// Bring a parameter onto the tape. Repeated calls for the same id
    /// return the same node.
    pub fn param(&mut self, id: ParamId) -> Tensor {
        if let Some(node) = self.param_leaves[id.0] {
            return Tensor(node);
        }
        let shape = self.params.get(id).shape.clone();
        let t = self.push(Op::Param(id), shape, Vec::new());
        self.param_leaves[id.0] = Some(t.0);
        t
    }

    pub fn values(&self, t: Tensor) -> &[f64] {
        let node = &self.nodes[t.0];
        match node.op {
            Op::Param(id) => &self.params.get(id).values,
            _ => &node.values,
        }
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].shape
    }

    /// Gradient of the last backward pass. Zeros for nodes the loss does not
    /// reach.
    pub fn grad(&self, t: Tensor) -> Vec<f64> {
        let node = &self.nodes[t.0];
        match &node.grad {
            Some(g) => g.clone(),
            None => vec![0.0; self.values(t).len()],
        }
    }

    pub fn scalar_value(&self, t: Tensor) -> f64 {
        debug_assert_eq!(self.values(t).len(), 1);
        self.values(t)[0]
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: Tensor, x: Tensor, b: Tensor) -> Result<Tensor> {
        let (ws, xs, bs) = (self.shape(w), self.shape(x), self.shape(b));
        if ws.len() != 2 || xs.len() != 1 || ws[1] != xs[0] {
            return Err(Error::ShapeMismatch { op: "affine(W,x)", lhs: ws.to_vec(), rhs: xs.to_vec() });
        }
        if bs.len() != 1 || bs[0] != ws[0] {
            return Err(Error::ShapeMismatch { op: "affine(W,b)", lhs: ws.to_vec(), rhs: bs.to_vec() });
        }
        let (out, inp) = (ws[0], ws[1]);
        let mut values = self.values(b).to_vec();
        let wv = self.values(w);
        let xv = self.values(x);
        for r in 0..out {
            let row = &wv[r * inp..(r + 1) * inp];
            let mut acc = 0.0;
            for c in 0..inp {
                acc += row[c] * xv[c];
            }
            values[r] += acc;
        }
        Ok(self.push(Op::Affine { w: w.0, x: x.0, b: b.0 }, vec![out], values))
    }

    pub fn elementwise(&mut self, x: Tensor, kind: Activation) -> Tensor {
        let values: Vec<f64> = self.values(x).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Elementwise { kind, x: x.0 }, shape, values)
    }

    pub fn sigmoid(&mut self, x: Tensor) -> Tensor {
        self.elementwise(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Tensor) -> Tensor {
        self.elementwise(x, Activation::Tanh)
    }

    /// Numerically stable softmax over a vector. Outputs are kept strictly
    /// positive even when an exponent underflows, so downstream logs stay
    /// finite.
    pub fn softmax(&mut self, x: Tensor) -> Tensor {
        let xv = self.values(x);
        assert!(!xv.is_empty(), "softmax over empty vector");
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xv.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let values: Vec<f64> = exps.iter().map(|&e| (e / sum).max(f64::MIN_POSITIVE)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Softmax { x: x.0 }, shape, values)
    }

    /// Concatenate vectors. Gradient splits back to the parts.
    pub fn concat(&mut self, parts: &[Tensor]) -> Tensor {
        let mut values = Vec::new();
        for &p in parts {
            debug_assert_eq!(self.shape(p).len(), 1, "concat expects vectors");
            values.extend_from_slice(self.values(p));
        }
        let n = values.len();
        self.push(Op::Concat { parts: parts.iter().map(|t| t.0).collect() }, vec![n], values)
    }

    fn zip_op(&mut self, op_name: &'static str, a: Tensor, b: Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let av = self.values(a);
        let bv = self.values(b);
        assert_eq!(av.len(), bv.len(), "{op_name}: operand length mismatch");
        av.iter().zip(bv.iter()).map(|(&x, &y)| f(x, y)).collect()
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let values = self.zip_op("add", a, b, |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.push(Op::Add { a: a.0, b: b.0 }, shape, values)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let values = self.zip_op("sub", a, b, |x, y| x - y);
        let shape = self.shape(a).to_vec();
        self.push(Op::Sub { a: a.0, b: b.0 }, shape, values)
    }

    /// Elementwise product (also used to apply dropout masks).
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Tensor {
        let values = self.zip_op("mul", a, b, |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.push(Op::Mul { a: a.0, b: b.0 }, shape, values)
    }

    pub fn scale(&mut self, x: Tensor, c: f64) -> Tensor {
        let values: Vec<f64> = self.values(x).iter().map(|&v| c * v).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale { x: x.0, c }, shape, values)
    }

    pub fn sum(&mut self, x: Tensor) -> Tensor {
        let total: f64 = self.values(x).iter().sum();
        self.push(Op::Sum { x: x.0 }, vec![1], vec![total])
    }

    /// Negative log-likelihood of `target` under `softmax(logits)`, computed
    /// as `logsumexp(logits) - logits[target]` so no probability ever
    /// underflows.
    pub fn nll(&mut self, logits: Tensor, target: usize) -> Tensor {
        let lv = self.values(logits);
        assert!(target < lv.len(), "nll target out of range");
        let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = lv.iter().map(|&v| (v - max).exp()).sum();
        let value = max + sum.ln() - lv[target];
        self.push(Op::Nll { logits: logits.0, target }, vec![1], vec![value])
    }

    fn node_values(&self, idx: usize) -> &[f64] {
        match self.nodes[idx].op {
            Op::Param(id) => &self.params.get(id).values,
            _ => &self.nodes[idx].values,
        }
    }

    fn node_len(&self, idx: usize) -> usize {
        match self.nodes[idx].op {
            Op::Param(id) => self.params.get(id).values.len(),
            _ => self.nodes[idx].values.len(),
        }
    }

    fn accumulate(&mut self, idx: usize, delta: &[f64]) {
        let len = self.node_len(idx);
        debug_assert_eq!(len, delta.len());
        let slot = &mut self.nodes[idx].grad;
        match slot {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Populate gradients of everything reachable from a scalar loss.
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.values(loss).len() != 1 {
            return Err(Error::NotScalar { what: "backward loss", shape });
        }
        self.nodes[loss.0].grad = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(out_grad) = self.nodes[idx].grad.clone() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Constant | Op::Param(_) => {}
                Op::Affine { w, x, b } => {
                    let (out, inp) = {
                        let s = &self.nodes[idx].shape;
                        (s[0], self.node_len(x))
                    };
                    let xv = self.node_values(x).to_vec();
                    let wv = self.node_values(w).to_vec();
                    // dW[r,c] = g[r] * x[c]
                    let mut dw = vec![0.0; out * inp];
                    for r in 0..out {
                        for c in 0..inp {
                            dw[r * inp + c] = out_grad[r] * xv[c];
                        }
                    }
                    self.accumulate(w, &dw);
                    // dx[c] = sum_r g[r] * W[r,c]
                    let mut dx = vec![0.0; inp];
                    for r in 0..out {
                        for c in 0..inp {
                            dx[c] += out_grad[r] * wv[r * inp + c];
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(b, &out_grad);
                }
                Op::Elementwise { kind, x } => {
                    let dx: Vec<f64> = self
                        .node_values(x)
                        .iter()
                        .zip(self.nodes[idx].values.iter())
                        .zip(out_grad.iter())
                        .map(|((&xi, &yi), &gi)| gi * kind.derivative(xi, yi))
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Softmax { x } => {
                    // dx = y ⊙ (g - <g, y>)
                    let y = &self.nodes[idx].values;
                    let dot: f64 = out_grad.iter().zip(y.iter()).map(|(&g, &yi)| g * yi).sum();
                    let dx: Vec<f64> =
                        y.iter().zip(out_grad.iter()).map(|(&yi, &gi)| yi * (gi - dot)).collect();
                    self.accumulate(x, &dx);
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for part in parts {
                        let len = self.node_len(part);
                        let slice = out_grad[offset..offset + len].to_vec();
                        self.accumulate(part, &slice);
                        offset += len;
                    }
                }
                Op::Add { a, b } => {
                    self.accumulate(a, &out_grad);
                    self.accumulate(b, &out_grad);
                }
                Op::Sub { a, b } => {
                    self.accumulate(a, &out_grad);
                    let neg: Vec<f64> = out_grad.iter().map(|&g| -g).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f64> =
                        out_grad.iter().zip(self.node_values(b)).map(|(&g, &bv)| g * bv).collect();
                    let db: Vec<f64> =
                        out_grad.iter().zip(self.node_values(a)).map(|(&g, &av)| g * av).collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Scale { x, c } => {
                    let dx: Vec<f64> = out_grad.iter().map(|&g| c * g).collect();
                    self.accumulate(x, &dx);
                }
                Op::Sum { x } => {
                    let dx = vec![out_grad[0]; self.node_len(x)];
                    self.accumulate(x, &dx);
                }
                Op::Nll { logits, target } => {
                    // d logits = g * (softmax(logits) - onehot(target))
                    let lv = self.node_values(logits);
                    let max = lv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = lv.iter().map(|&v| (v - max).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    let g = out_grad[0];
                    let mut dl: Vec<f64> = exps.iter().map(|&e| g * e / sum).collect();
                    dl[target] -= g;
                    self.accumulate(logits, &dl);
                }
            }
        }
        Ok(())
    }

    /// Drain accumulated parameter gradients after a backward pass.
    pub fn take_param_grads(&mut self) -> Vec<(ParamId, Vec<f64>)> {
        let mut out = Vec::new();
        for (pi, leaf) in self.param_leaves.iter().enumerate() {
            if let Some(node) = *leaf {
                if let Some(grad) = self.nodes[node].grad.take() {
                    out.push((ParamId(pi), grad));
                }
            }
        }
        out
    }
}

/// Dense per-parameter gradient buffers, reused across a mini-batch.
#[derive(Debug, Clone)]
pub struct GradAccum {
    grads: Vec<Vec<f64>>,
}

impl GradAccum {
    pub fn zeros_like(params: &ParamSet) -> Self {
        GradAccum { grads: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect() }
    }

    pub fn reset(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn add(&mut self, id: ParamId, grad: &[f64]) {
        let slot = &mut self.grads[id.0];
        debug_assert_eq!(slot.len(), grad.len());
        for (s, g) in slot.iter_mut().zip(grad) {
            *s += g;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }
}

/// Maximum relative finite-difference error over sampled coordinates.
///
/// `build` must be deterministic (no dropout) and return the scalar loss for
/// the current parameter values. Relative error per coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)` with central
/// differences of step `h`. At most `max_coords_per_param` coordinates per
/// parameter are probed (evenly strided); `None` probes every coordinate.
pub fn check_gradients<F>(
    params: &mut ParamSet,
    build: F,
    h: f64,
    max_coords_per_param: Option<usize>,
) -> GradCheckReport
where
    F: Fn(&mut Graph) -> Tensor,
{
    let analytic: Vec<Vec<f64>> = {
        let mut graph = Graph::new(params);
        let loss = build(&mut graph);
        graph.backward(loss).expect("check_gradients: loss must be scalar");
        let mut dense: Vec<Vec<f64>> = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        for (id, g) in graph.take_param_grads() {
            dense[id.0] = g;
        }
        dense
    };

    let eval = |params: &ParamSet| -> f64 {
        let mut graph = Graph::new(params);
        let loss = build(&mut graph);
        graph.scalar_value(loss)
    };

    let mut report = GradCheckReport::default();
    for pi in 0..params.len() {
        let len = params.get(ParamId(pi)).len();
        if len == 0 {
            continue;
        }
        let probe = max_coords_per_param.map_or(len, |m| m.min(len));
        let stride = len.div_ceil(probe);
        for k in (0..len).step_by(stride.max(1)) {
            let orig = params.get(ParamId(pi)).values[k];
            params.get_mut(ParamId(pi)).values[k] = orig + h;
            let plus = eval(params);
            params.get_mut(ParamId(pi)).values[k] = orig - h;
            let minus = eval(params);
            params.get_mut(ParamId(pi)).values[k] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let exact = analytic[pi][k];
            let rel = (exact - numeric).abs() / 1.0_f64.max(exact.abs()).max(numeric.abs());
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some((params.get(ParamId(pi)).name.clone(), k));
            }
        }
    }
    report
}

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Name and flat coordinate of the worst offender.
    pub worst_param: Option<(String, usize)>,
}
