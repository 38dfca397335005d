//! Reverse-mode automatic differentiation over small dense `f64` vectors.
//!
//! A [`Tape`] records every primitive applied during a forward pass. Node
//! inputs always precede the node itself, so a single reverse sweep over the
//! tape is a valid topological order for backpropagation. There is no
//! broadcasting: every primitive checks its operand shapes explicitly.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Norm below which [`Primitive::Cosine`] returns 0 with a zero gradient.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds a tape node can hold.
#[derive(Copy, Clone, Debug, PartialEq)]
pub enum Primitive {
    /// Leaf that never receives a gradient.
    Constant,
    /// Trainable leaf; gradients are reported for it by [`Tape::backward`].
    Parameter,
    Add,
    Sub,
    /// Elementwise product.
    Mul,
    /// Vector times a scalar node: `scale(v, s) = s * v`.
    Scale,
    /// Elementwise `scale * x + shift` with constant coefficients.
    Affine {
        scale: f64,
        shift: f64,
    },
    Dot,
    Sum,
    /// Reduction to the largest entry; ties route the gradient to the first maximum.
    Max,
    Sigmoid,
    Exp,
    Log,
    /// Elementwise quotient.
    Div,
    Softmax,
    /// Row-major `rows x cols` matrix times a `cols` vector.
    Matvec {
        rows: usize,
    },
    Cosine,
    Concat,
    /// Extracts one entry as a scalar.
    Index(usize),
    Relu,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Constant => "constant",
            Primitive::Parameter => "parameter",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale => "scale",
            Primitive::Affine { .. } => "affine",
            Primitive::Dot => "dot",
            Primitive::Sum => "sum",
            Primitive::Max => "max",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Div => "div",
            Primitive::Softmax => "softmax",
            Primitive::Matvec { .. } => "matvec",
            Primitive::Cosine => "cosine_similarity",
            Primitive::Concat => "concat",
            Primitive::Index(_) => "index",
            Primitive::Relu => "relu",
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {kind}: operand lengths {shapes:?}")]
    Shape { kind: &'static str, shapes: Vec<usize> },
    #[error("{kind} expects {expected} operand(s), got {found}")]
    Arity { kind: &'static str, expected: usize, found: usize },
    #[error("domain error in {kind}: {detail}")]
    Domain { kind: &'static str, detail: String },
    #[error("non-finite value produced by {kind}")]
    NonFinite { kind: &'static str },
    #[error("backward root must be a scalar node, found length {0}")]
    NonScalarRoot(usize),
    #[error("unknown node {0:?}")]
    UnknownNode(NodeId),
    #[error("cannot create {0} leaf with {1} value")]
    BadLeaf(&'static str, &'static str),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

#[derive(Clone, Debug)]
pub struct Node {
    pub value: Vec<f64>,
    pub primitive: Primitive,
    pub inputs: Vec<NodeId>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    parameters: Vec<NodeId>,
}

/// Gradients of a scalar root with respect to each parameter node.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientMap {
    grads: BTreeMap<NodeId, Vec<f64>>,
}

impl GradientMap {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[f64])> {
        self.grads.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn parameters(&self) -> &[NodeId] {
        &self.parameters
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// First entry of a node's value; intended for scalar nodes.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Result<NodeId> {
        self.leaf(value, Primitive::Constant)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Result<NodeId> {
        self.leaf(vec![value], Primitive::Constant)
    }

    pub fn parameter(&mut self, value: Vec<f64>) -> Result<NodeId> {
        let id = self.leaf(value, Primitive::Parameter)?;
        self.parameters.push(id);
        Ok(id)
    }

    fn leaf(&mut self, value: Vec<f64>, primitive: Primitive) -> Result<NodeId> {
        if value.is_empty() {
            return Err(AutodiffError::BadLeaf(primitive.name(), "empty"));
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::BadLeaf(primitive.name(), "non-finite"));
        }
        let requires_grad = primitive == Primitive::Parameter;
        Ok(self.push(Node { value, primitive, inputs: Vec::new(), requires_grad }))
    }

    fn push(&mut self, node: Node) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(node);
        id
    }

    /// Appends `kind` applied to `operands` and returns the new node.
    pub fn apply(&mut self, kind: Primitive, operands: &[NodeId]) -> Result<NodeId> {
        if matches!(kind, Primitive::Constant | Primitive::Parameter) {
            return Err(AutodiffError::Arity { kind: kind.name(), expected: 0, found: operands.len() });
        }
        for &op in operands {
            if op.0 >= self.nodes.len() {
                return Err(AutodiffError::UnknownNode(op));
            }
        }
        let inputs: Vec<&[f64]> = operands.iter().map(|id| self.nodes[id.0].value.as_slice()).collect();
        let value = forward(kind, &inputs)?;
        if value.iter().any(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFinite { kind: kind.name() });
        }
        let requires_grad = operands.iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(Node { value, primitive: kind, inputs: operands.to_vec(), requires_grad }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Scale, &[v, s])
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.apply(Primitive::Affine { scale, shift }, &[x])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Dot, &[a, b])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sum, &[x])
    }

    pub fn max(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Max, &[x])
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Sigmoid, &[x])
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Exp, &[x])
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Log, &[x])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Div, &[a, b])
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Softmax, &[x])
    }

    pub fn matvec(&mut self, matrix: NodeId, v: NodeId, rows: usize) -> Result<NodeId> {
        self.apply(Primitive::Matvec { rows }, &[matrix, v])
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Cosine, &[a, b])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Primitive::Concat, parts)
    }

    pub fn index(&mut self, x: NodeId, i: usize) -> Result<NodeId> {
        self.apply(Primitive::Index(i), &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Primitive::Relu, &[x])
    }

    /// Gradients of the scalar `root` with respect to every parameter node.
    pub fn backward(&self, root: NodeId) -> Result<GradientMap> {
        let all = self.backward_all(root)?;
        let mut grads = BTreeMap::new();
        for &p in &self.parameters {
            let g = all[p.0].clone().unwrap_or_else(|| vec![0.0; self.nodes[p.0].value.len()]);
            grads.insert(p, g);
        }
        Ok(GradientMap { grads })
    }

    /// Per-node adjoints; `None` where the root does not depend on a trainable leaf.
    pub fn backward_all(&self, root: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        if root.0 >= self.nodes.len() {
            return Err(AutodiffError::UnknownNode(root));
        }
        let root_len = self.nodes[root.0].value.len();
        if root_len != 1 {
            return Err(AutodiffError::NonScalarRoot(root_len));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);
        for k in (0..=root.0).rev() {
            let node = &self.nodes[k];
            if !node.requires_grad || node.inputs.is_empty() {
                continue;
            }
            let Some(g) = adj[k].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[k] = Some(g);
        }
        Ok(adj)
    }

    fn propagate(&self, node: &Node, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let val = |id: NodeId| self.nodes[id.0].value.as_slice();
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let ins = &node.inputs;
        let y = node.value.as_slice();
        match node.primitive {
            Primitive::Constant | Primitive::Parameter => {}
            Primitive::Add => {
                for &i in ins {
                    if wants(i) {
                        accumulate(adj, i, g.len(), |acc| axpy(acc, 1.0, g));
                    }
                }
            }
            Primitive::Sub => {
                if wants(ins[0]) {
                    accumulate(adj, ins[0], g.len(), |acc| axpy(acc, 1.0, g));
                }
                if wants(ins[1]) {
                    accumulate(adj, ins[1], g.len(), |acc| axpy(acc, -1.0, g));
                }
            }
            Primitive::Mul => {
                let (a, b) = (val(ins[0]), val(ins[1]));
                if wants(ins[0]) {
                    accumulate(adj, ins[0], g.len(), |acc| {
                        for ((o, gi), bi) in acc.iter_mut().zip(g).zip(b) {
                            *o += gi * bi;
                        }
                    });
                }
                if wants(ins[1]) {
                    accumulate(adj, ins[1], g.len(), |acc| {
                        for ((o, gi), ai) in acc.iter_mut().zip(g).zip(a) {
                            *o += gi * ai;
                        }
                    });
                }
            }
            Primitive::Scale => {
                let (v, s) = (val(ins[0]), val(ins[1])[0]);
                if wants(ins[0]) {
                    accumulate(adj, ins[0], g.len(), |acc| axpy(acc, s, g));
                }
                if wants(ins[1]) {
                    let d = dot(g, v);
                    accumulate(adj, ins[1], 1, |acc| acc[0] += d);
                }
            }
            Primitive::Affine { scale, .. } => {
                accumulate(adj, ins[0], g.len(), |acc| axpy(acc, scale, g));
            }
            Primitive::Dot => {
                let (a, b) = (val(ins[0]), val(ins[1]));
                let g0 = g[0];
                if wants(ins[0]) {
                    accumulate(adj, ins[0], a.len(), |acc| axpy(acc, g0, b));
                }
                if wants(ins[1]) {
                    accumulate(adj, ins[1], b.len(), |acc| axpy(acc, g0, a));
                }
            }
            Primitive::Sum => {
                let n = val(ins[0]).len();
                let g0 = g[0];
                accumulate(adj, ins[0], n, |acc| acc.iter_mut().for_each(|o| *o += g0));
            }
            Primitive::Max => {
                let x = val(ins[0]);
                let i = argmax_first(x);
                let g0 = g[0];
                accumulate(adj, ins[0], x.len(), |acc| acc[i] += g0);
            }
            Primitive::Sigmoid => {
                accumulate(adj, ins[0], g.len(), |acc| {
                    for ((o, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                        *o += gi * yi * (1.0 - yi);
                    }
                });
            }
            Primitive::Exp => {
                accumulate(adj, ins[0], g.len(), |acc| {
                    for ((o, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                        *o += gi * yi;
                    }
                });
            }
            Primitive::Log => {
                let x = val(ins[0]);
                accumulate(adj, ins[0], g.len(), |acc| {
                    for ((o, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                        *o += gi / xi;
                    }
                });
            }
            Primitive::Div => {
                let (a, b) = (val(ins[0]), val(ins[1]));
                if wants(ins[0]) {
                    accumulate(adj, ins[0], g.len(), |acc| {
                        for ((o, gi), bi) in acc.iter_mut().zip(g).zip(b) {
                            *o += gi / bi;
                        }
                    });
                }
                if wants(ins[1]) {
                    accumulate(adj, ins[1], g.len(), |acc| {
                        for (((o, gi), ai), bi) in acc.iter_mut().zip(g).zip(a).zip(b) {
                            *o -= gi * ai / (bi * bi);
                        }
                    });
                }
            }
            Primitive::Softmax => {
                let inner = dot(g, y);
                accumulate(adj, ins[0], g.len(), |acc| {
                    for ((o, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                        *o += yi * (gi - inner);
                    }
                });
            }
            Primitive::Matvec { rows } => {
                let (m, v) = (val(ins[0]), val(ins[1]));
                let cols = v.len();
                if wants(ins[0]) {
                    accumulate(adj, ins[0], m.len(), |acc| {
                        for r in 0..rows {
                            let gr = g[r];
                            if gr != 0.0 {
                                axpy(&mut acc[r * cols..(r + 1) * cols], gr, v);
                            }
                        }
                    });
                }
                if wants(ins[1]) {
                    accumulate(adj, ins[1], cols, |acc| {
                        for r in 0..rows {
                            let gr = g[r];
                            if gr != 0.0 {
                                axpy(acc, gr, &m[r * cols..(r + 1) * cols]);
                            }
                        }
                    });
                }
            }
            Primitive::Cosine => {
                let (a, b) = (val(ins[0]), val(ins[1]));
                let (na, nb) = (norm(a), norm(b));
                if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
                    return;
                }
                let c = y[0];
                let g0 = g[0];
                if wants(ins[0]) {
                    let k = g0 / (na * nb);
                    let k2 = g0 * c / (na * na);
                    accumulate(adj, ins[0], a.len(), |acc| {
                        for ((o, ai), bi) in acc.iter_mut().zip(a).zip(b) {
                            *o += k * bi - k2 * ai;
                        }
                    });
                }
                if wants(ins[1]) {
                    let k = g0 / (na * nb);
                    let k2 = g0 * c / (nb * nb);
                    accumulate(adj, ins[1], b.len(), |acc| {
                        for ((o, ai), bi) in acc.iter_mut().zip(a).zip(b) {
                            *o += k * ai - k2 * bi;
                        }
                    });
                }
            }
            Primitive::Concat => {
                let mut offset = 0;
                for &i in ins {
                    let n = val(i).len();
                    if wants(i) {
                        let part = &g[offset..offset + n];
                        accumulate(adj, i, n, |acc| axpy(acc, 1.0, part));
                    }
                    offset += n;
                }
            }
            Primitive::Index(i) => {
                let n = val(ins[0]).len();
                let g0 = g[0];
                accumulate(adj, ins[0], n, |acc| acc[i] += g0);
            }
            Primitive::Relu => {
                let x = val(ins[0]);
                accumulate(adj, ins[0], g.len(), |acc| {
                    for ((o, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *o += gi;
                        }
                    }
                });
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = adj[id.0].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, xi) in acc.iter_mut().zip(x) {
        *o += a * xi;
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn argmax_first(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate().skip(1) {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_values(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub(crate) fn cosine_values(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na < COSINE_NORM_FLOOR || nb < COSINE_NORM_FLOOR {
        0.0
    } else {
        (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub(crate) fn matvec_values(m: &[f64], v: &[f64], rows: usize) -> Vec<f64> {
    let cols = v.len();
    (0..rows).map(|r| dot(&m[r * cols..(r + 1) * cols], v)).collect()
}

fn forward(kind: Primitive, x: &[&[f64]]) -> Result<Vec<f64>> {
    let name = kind.name();
    let arity = |n: usize| -> Result<()> {
        if x.len() != n {
            Err(AutodiffError::Arity { kind: name, expected: n, found: x.len() })
        } else {
            Ok(())
        }
    };
    let shapes = || x.iter().map(|v| v.len()).collect::<Vec<_>>();
    let same_len = || -> Result<()> {
        if x[0].len() != x[1].len() {
            Err(AutodiffError::Shape { kind: name, shapes: shapes() })
        } else {
            Ok(())
        }
    };
    let zip = |f: fn(f64, f64) -> f64| x[0].iter().zip(x[1]).map(|(a, b)| f(*a, *b)).collect::<Vec<_>>();
    let map = |f: &dyn Fn(f64) -> f64| x[0].iter().map(|v| f(*v)).collect::<Vec<_>>();
    Ok(match kind {
        Primitive::Constant | Primitive::Parameter => unreachable!("leaves are created directly"),
        Primitive::Add => {
            arity(2)?;
            same_len()?;
            zip(|a, b| a + b)
        }
        Primitive::Sub => {
            arity(2)?;
            same_len()?;
            zip(|a, b| a - b)
        }
        Primitive::Mul => {
            arity(2)?;
            same_len()?;
            zip(|a, b| a * b)
        }
        Primitive::Scale => {
            arity(2)?;
            if x[1].len() != 1 {
                return Err(AutodiffError::Shape { kind: name, shapes: shapes() });
            }
            let s = x[1][0];
            map(&|v| v * s)
        }
        Primitive::Affine { scale, shift } => {
            arity(1)?;
            map(&|v| scale * v + shift)
        }
        Primitive::Dot => {
            arity(2)?;
            same_len()?;
            vec![dot(x[0], x[1])]
        }
        Primitive::Sum => {
            arity(1)?;
            vec![x[0].iter().sum()]
        }
        Primitive::Max => {
            arity(1)?;
            vec![x[0][argmax_first(x[0])]]
        }
        Primitive::Sigmoid => {
            arity(1)?;
            map(&sigmoid)
        }
        Primitive::Exp => {
            arity(1)?;
            map(&f64::exp)
        }
        Primitive::Log => {
            arity(1)?;
            if let Some(bad) = x[0].iter().find(|v| **v <= 0.0) {
                return Err(AutodiffError::Domain { kind: name, detail: format!("log of non-positive value {bad}") });
            }
            map(&f64::ln)
        }
        Primitive::Div => {
            arity(2)?;
            same_len()?;
            if x[1].contains(&0.0) {
                return Err(AutodiffError::Domain { kind: name, detail: "division by zero".into() });
            }
            zip(|a, b| a / b)
        }
        Primitive::Softmax => {
            arity(1)?;
            softmax_values(x[0])
        }
        Primitive::Matvec { rows } => {
            arity(2)?;
            if rows == 0 || x[0].len() != rows * x[1].len() {
                return Err(AutodiffError::Shape { kind: name, shapes: shapes() });
            }
            matvec_values(x[0], x[1], rows)
        }
        Primitive::Cosine => {
            arity(2)?;
            same_len()?;
            vec![cosine_values(x[0], x[1])]
        }
        Primitive::Concat => {
            if x.is_empty() {
                return Err(AutodiffError::Arity { kind: name, expected: 1, found: 0 });
            }
            x.iter().flat_map(|v| v.iter().copied()).collect()
        }
        Primitive::Index(i) => {
            arity(1)?;
            if i >= x[0].len() {
                return Err(AutodiffError::Shape { kind: name, shapes: vec![x[0].len(), i] });
            }
            vec![x[0][i]]
        }
        Primitive::Relu => {
            arity(1)?;
            map(&|v| v.max(0.0))
        }
    })
}

/// Compares the tape gradient of `f` at `point` against central differences.
///
/// Returns the largest per-coordinate `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let analytic = gradient_at(&f, point)?;
    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let up = evaluate(&f, &probe)?;
        probe[i] = point[i] - step;
        let down = evaluate(&f, &probe)?;
        probe[i] = point[i];
        let numeric = (up - down) / (2.0 * step);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Analytic gradient of `f` at `point`.
pub fn gradient_at<F>(f: &F, point: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let x = tape.parameter(point.to_vec())?;
    let root = f(&mut tape, x)?;
    let grads = tape.backward(root)?;
    Ok(grads.get(x).expect("input is a parameter").to_vec())
}

fn evaluate<F>(f: &F, point: &[f64]) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let x = tape.parameter(point.to_vec())?;
    let root = f(&mut tape, x)?;
    let len = tape.value(root).len();
    if len != 1 {
        return Err(AutodiffError::NonScalarRoot(len));
    }
    Ok(tape.scalar(root))
}
