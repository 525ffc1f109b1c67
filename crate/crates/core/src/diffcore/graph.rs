//! Recorded computation graph with reverse-mode differentiation.
//!
//! Nodes are appended in topological order and evaluated eagerly as they are
//! created, so a graph can be read like ordinary arithmetic. Named inputs can
//! later be rebound and the whole graph re-run with [`ValueGraph::forward`],
//! which is what the finite-difference checks use.

use std::collections::HashMap;

use super::tensor::{gemm, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("unknown input `{0}`")]
    UnknownInput(String),
    #[error("input `{name}` expects shape {expected:?}, got {got:?}")]
    BindShape {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("backward seed node {node} is not scalar (shape {shape:?})")]
    NonScalarSeed { node: usize, shape: (usize, usize) },
    #[error("degenerate rotation columns at node {node}")]
    DegenerateRotation { node: usize },
    #[error("target index {index} out of range for {classes} classes at node {node}")]
    TargetOutOfRange {
        node: usize,
        index: usize,
        classes: usize,
    },
}

pub type GraphResult<T> = Result<T, GraphError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Number of scalar columns a body occupies in the state-feature layout:
/// position (3), two rotation-matrix columns (6), linear velocity (3),
/// angular velocity (3).
pub const BODY_FEATURES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadingMode {
    /// Express world-frame features in the heading frame of `frame`:
    /// body positions are made relative to the root's horizontal position and
    /// every 3-vector is rotated by the inverse root yaw.
    ToHeading,
    /// Rotate heading-frame vectors back by the root yaw (no translation).
    FromHeading,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    ScaleCols(NodeId, Vec<f64>),
    Scale(NodeId, f64),
    Offset(NodeId, f64),
    Elu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Abs(NodeId),
    Square(NodeId),
    Clamp(NodeId, f64, f64),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    StopGrad(NodeId),
    /// Forward value replaced by a fixed tensor, identity gradient.
    StraightThrough(NodeId, Tensor),
    GatherRows(NodeId, Vec<usize>),
    Heading {
        x: NodeId,
        frame: NodeId,
        mode: HeadingMode,
        n_body: usize,
    },
    Orthonormalize6 {
        x: NodeId,
        offsets: Vec<usize>,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::ScaleCols(..) => "scale_cols",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::Elu(..) => "elu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Abs(..) => "abs",
            Op::Square(..) => "square",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Concat(..) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::StopGrad(..) => "stop_gradient",
            Op::StraightThrough(..) => "straight_through",
            Op::GatherRows(..) => "gather_rows",
            Op::Heading { .. } => "heading",
            Op::Orthonormalize6 { .. } => "orthonormalize6",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddBias(a, b) => {
                vec![*a, *b]
            }
            Op::ScaleCols(a, _)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Elu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Abs(a)
            | Op::Square(a)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::SliceCols(a, _, _)
            | Op::StopGrad(a)
            | Op::StraightThrough(a, _)
            | Op::GatherRows(a, _) => vec![*a],
            Op::Concat(parts) => parts.clone(),
            Op::Heading { x, frame, .. } => vec![*x, *frame],
            Op::Orthonormalize6 { x, .. } => vec![*x],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only record of a differentiable computation.
#[derive(Debug, Clone, Default)]
pub struct ValueGraph {
    nodes: Vec<Node>,
    adjoints: Vec<Option<Tensor>>,
    inputs: HashMap<String, NodeId>,
}

impl ValueGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Adjoint of `id` from the last backward pass; zeros if the node was not
    /// reached from the seed.
    pub fn grad(&self, id: NodeId) -> Tensor {
        match self.adjoints.get(id.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => {
                let v = &self.nodes[id.0].value;
                Tensor::zeros(v.rows, v.cols)
            }
        }
    }

    /// Like [`grad`](Self::grad) but without the zero fill.
    pub fn grad_ref(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad: trainable,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Named, differentiable input that [`forward`](Self::forward) can rebind.
    pub fn input(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.push_leaf(value, true);
        self.inputs.insert(name.to_string(), id);
        id
    }

    /// Differentiable leaf (model parameter).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    fn push_op(&mut self, op: Op) -> GraphResult<NodeId> {
        let node = self.nodes.len();
        let value = self.eval(node, &op)?;
        let requires_grad = match &op {
            Op::StopGrad(_) => false,
            _ => op.inputs().iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(node))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::MatMul(a, b))
    }

    /// `x + b` with the `1 x n` row `b` broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::AddBias(x, b))
    }

    /// Multiplies column `j` of `x` by the constant `weights[j]`.
    pub fn scale_cols(&mut self, x: NodeId, weights: Vec<f64>) -> GraphResult<NodeId> {
        self.push_op(Op::ScaleCols(x, weights))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> GraphResult<NodeId> {
        self.push_op(Op::Scale(x, s))
    }

    pub fn offset(&mut self, x: NodeId, c: f64) -> GraphResult<NodeId> {
        self.push_op(Op::Offset(x, c))
    }

    pub fn elu(&mut self, x: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::Elu(x))
    }

    pub fn tanh(&mut self, x: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::Tanh(x))
    }

    pub fn exp(&mut self, x: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::Exp(x))
    }

    pub fn abs(&mut self, x: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::Abs(x))
    }

    pub fn square(&mut self, x: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::Square(x))
    }

    /// Clamp to `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> GraphResult<NodeId> {
        self.push_op(Op::Clamp(x, lo, hi))
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(&mut self, x: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::Sum(x))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[NodeId]) -> GraphResult<NodeId> {
        self.push_op(Op::Concat(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, end: usize) -> GraphResult<NodeId> {
        self.push_op(Op::SliceCols(x, start, end))
    }

    pub fn stop_gradient(&mut self, x: NodeId) -> GraphResult<NodeId> {
        self.push_op(Op::StopGrad(x))
    }

    /// Takes the value of `replacement` on the forward pass while passing the
    /// adjoint through to `x` unchanged.
    pub fn straight_through(&mut self, x: NodeId, replacement: Tensor) -> GraphResult<NodeId> {
        self.push_op(Op::StraightThrough(x, replacement))
    }

    pub fn gather_rows(&mut self, x: NodeId, rows: Vec<usize>) -> GraphResult<NodeId> {
        self.push_op(Op::GatherRows(x, rows))
    }

    /// Heading-frame transform of state-feature rows. `frame` supplies the
    /// root position (columns 0..2) and the root rotation's first column
    /// (columns 3..5) row by row; the yaw is differentiated through.
    pub fn heading(
        &mut self,
        x: NodeId,
        frame: NodeId,
        mode: HeadingMode,
        n_body: usize,
    ) -> GraphResult<NodeId> {
        self.push_op(Op::Heading {
            x,
            frame,
            mode,
            n_body,
        })
    }

    /// Gram-Schmidt re-orthonormalization of the 6-wide rotation blocks that
    /// start at each of `offsets`; other columns pass through.
    pub fn orthonormalize6(&mut self, x: NodeId, offsets: Vec<usize>) -> GraphResult<NodeId> {
        self.push_op(Op::Orthonormalize6 { x, offsets })
    }

    /// Mean over rows of `-log softmax(logits_r)[targets_r]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>) -> GraphResult<NodeId> {
        self.push_op(Op::CrossEntropy { logits, targets })
    }

    /// Rebinds the named inputs and recomputes every node in order.
    pub fn forward(&mut self, bindings: &[(&str, Tensor)]) -> GraphResult<()> {
        for (name, value) in bindings {
            let id = self
                .inputs
                .get(*name)
                .copied()
                .ok_or_else(|| GraphError::UnknownInput(name.to_string()))?;
            let expected = self.nodes[id.0].value.shape();
            if value.shape() != expected {
                return Err(GraphError::BindShape {
                    name: name.to_string(),
                    expected,
                    got: value.shape(),
                });
            }
            self.nodes[id.0].value = value.clone();
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let v = self.eval(i, &op)?;
            self.nodes[i].value = v;
        }
        self.adjoints.clear();
        Ok(())
    }

    /// Reverse sweep from the scalar `seed`.
    pub fn backward(&mut self, seed: NodeId) -> GraphResult<()> {
        let shape = self.nodes[seed.0].value.shape();
        if shape != (1, 1) {
            return Err(GraphError::NonScalarSeed {
                node: seed.0,
                shape,
            });
        }
        self.adjoints = vec![None; self.nodes.len()];
        self.adjoints[seed.0] = Some(Tensor::scalar(1.0));
        for i in (0..=seed.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.adjoints[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.adjoints[i] = Some(g);
        }
        Ok(())
    }

    fn shape_err(&self, node: usize, op: &Op, detail: String) -> GraphError {
        GraphError::Shape {
            node,
            op: op.name(),
            detail,
        }
    }

    fn eval(&self, node: usize, op: &Op) -> GraphResult<Tensor> {
        let v = |id: &NodeId| &self.nodes[id.0].value;
        let same = |a: &NodeId, b: &NodeId| -> GraphResult<()> {
            if v(a).shape() != v(b).shape() {
                Err(self.shape_err(
                    node,
                    op,
                    format!("{:?} vs {:?}", v(a).shape(), v(b).shape()),
                ))
            } else {
                Ok(())
            }
        };
        let zip = |a: &Tensor, b: &Tensor, f: fn(f64, f64) -> f64| Tensor {
            rows: a.rows,
            cols: a.cols,
            data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
        };
        Ok(match op {
            Op::Leaf => unreachable!("leaves are never re-evaluated"),
            Op::Add(a, b) => {
                same(a, b)?;
                zip(v(a), v(b), |x, y| x + y)
            }
            Op::Sub(a, b) => {
                same(a, b)?;
                zip(v(a), v(b), |x, y| x - y)
            }
            Op::Mul(a, b) => {
                same(a, b)?;
                zip(v(a), v(b), |x, y| x * y)
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (v(a), v(b));
                if ta.cols != tb.rows {
                    return Err(self.shape_err(
                        node,
                        op,
                        format!("{:?} x {:?}", ta.shape(), tb.shape()),
                    ));
                }
                let mut out = Tensor::zeros(ta.rows, tb.cols);
                gemm(ta, false, tb, false, &mut out, false);
                out
            }
            Op::AddBias(x, b) => {
                let (tx, tb) = (v(x), v(b));
                if tb.rows != 1 || tb.cols != tx.cols {
                    return Err(self.shape_err(
                        node,
                        op,
                        format!("bias {:?} for input {:?}", tb.shape(), tx.shape()),
                    ));
                }
                let mut out = tx.clone();
                for r in 0..out.rows {
                    for (o, bb) in out.row_mut(r).iter_mut().zip(&tb.data) {
                        *o += bb;
                    }
                }
                out
            }
            Op::ScaleCols(x, w) => {
                let tx = v(x);
                if w.len() != tx.cols {
                    return Err(self.shape_err(
                        node,
                        op,
                        format!("{} weights for {} columns", w.len(), tx.cols),
                    ));
                }
                let mut out = tx.clone();
                for r in 0..out.rows {
                    for (o, ww) in out.row_mut(r).iter_mut().zip(w) {
                        *o *= ww;
                    }
                }
                out
            }
            Op::Scale(x, s) => v(x).map(|a| a * s),
            Op::Offset(x, c) => v(x).map(|a| a + c),
            Op::Elu(x) => v(x).map(|a| if a > 0.0 { a } else { a.exp_m1() }),
            Op::Tanh(x) => v(x).map(f64::tanh),
            Op::Exp(x) => v(x).map(f64::exp),
            Op::Abs(x) => v(x).map(f64::abs),
            Op::Square(x) => v(x).map(|a| a * a),
            Op::Clamp(x, lo, hi) => v(x).map(|a| a.clamp(*lo, *hi)),
            Op::Sum(x) => Tensor::scalar(v(x).data.iter().sum()),
            Op::Concat(parts) => {
                let rows = parts.first().map_or(0, |p| v(p).rows);
                if parts.iter().any(|p| v(p).rows != rows) {
                    return Err(self.shape_err(node, op, "row counts differ".into()));
                }
                let cols: usize = parts.iter().map(|p| v(p).cols).sum();
                let mut out = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    let mut c0 = 0;
                    for p in parts {
                        let t = v(p);
                        out.row_mut(r)[c0..c0 + t.cols].copy_from_slice(t.row(r));
                        c0 += t.cols;
                    }
                }
                out
            }
            Op::SliceCols(x, s, e) => {
                let tx = v(x);
                if s > e || *e > tx.cols {
                    return Err(self.shape_err(
                        node,
                        op,
                        format!("range {s}..{e} of {} columns", tx.cols),
                    ));
                }
                let mut out = Tensor::zeros(tx.rows, e - s);
                for r in 0..tx.rows {
                    out.row_mut(r).copy_from_slice(&tx.row(r)[*s..*e]);
                }
                out
            }
            Op::StopGrad(x) => v(x).clone(),
            Op::StraightThrough(x, value) => {
                if v(x).shape() != value.shape() {
                    return Err(self.shape_err(
                        node,
                        op,
                        format!("{:?} vs {:?}", v(x).shape(), value.shape()),
                    ));
                }
                value.clone()
            }
            Op::GatherRows(x, rows) => {
                let tx = v(x);
                let mut out = Tensor::zeros(rows.len(), tx.cols);
                for (r, &src) in rows.iter().enumerate() {
                    if src >= tx.rows {
                        return Err(self.shape_err(
                            node,
                            op,
                            format!("row {src} of {}", tx.rows),
                        ));
                    }
                    out.row_mut(r).copy_from_slice(tx.row(src));
                }
                out
            }
            Op::Heading {
                x,
                frame,
                mode,
                n_body,
            } => {
                let (tx, tf) = (v(x), v(frame));
                if tx.rows != tf.rows || tx.cols < n_body * BODY_FEATURES || tf.cols < 5 {
                    return Err(self.shape_err(
                        node,
                        op,
                        format!("x {:?}, frame {:?}", tx.shape(), tf.shape()),
                    ));
                }
                let mut out = tx.clone();
                for r in 0..tx.rows {
                    let f = tf.row(r);
                    let (c, s) = heading_cos_sin(f[3], f[4]);
                    let (c, s) = match mode {
                        HeadingMode::ToHeading => (c, -s),
                        HeadingMode::FromHeading => (c, s),
                    };
                    let row = out.row_mut(r);
                    for k in 0..*n_body {
                        let base = k * BODY_FEATURES;
                        if *mode == HeadingMode::ToHeading {
                            row[base] -= f[0];
                            row[base + 1] -= f[1];
                        }
                        for t in 0..5 {
                            let o = base + 3 * t;
                            let (px, py) = (row[o], row[o + 1]);
                            row[o] = c * px - s * py;
                            row[o + 1] = s * px + c * py;
                        }
                    }
                }
                out
            }
            Op::Orthonormalize6 { x, offsets } => {
                let tx = v(x);
                if offsets.iter().any(|&o| o + 6 > tx.cols) {
                    return Err(self.shape_err(node, op, "block past last column".into()));
                }
                let mut out = tx.clone();
                for r in 0..tx.rows {
                    let row = out.row_mut(r);
                    for &o in offsets {
                        let gs = GramSchmidt::new(&row[o..o + 6])
                            .ok_or(GraphError::DegenerateRotation { node })?;
                        row[o..o + 3].copy_from_slice(&gs.b1);
                        row[o + 3..o + 6].copy_from_slice(&gs.b2);
                    }
                }
                out
            }
            Op::CrossEntropy { logits, targets } => {
                let tl = v(logits);
                if targets.len() != tl.rows {
                    return Err(self.shape_err(
                        node,
                        op,
                        format!("{} targets for {} rows", targets.len(), tl.rows),
                    ));
                }
                let mut total = 0.0;
                for (r, &t) in targets.iter().enumerate() {
                    if t >= tl.cols {
                        return Err(GraphError::TargetOutOfRange {
                            node,
                            index: t,
                            classes: tl.cols,
                        });
                    }
                    let row = tl.row(r);
                    total += log_sum_exp(row) - row[t];
                }
                Tensor::scalar(total / tl.rows.max(1) as f64)
            }
        })
    }

    fn accumulate(&mut self, id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.adjoints[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&mut self, i: usize, g: &Tensor) {
        let op = self.nodes[i].op.clone();
        let val = |s: &Self, id: NodeId| s.nodes[id.0].value.clone();
        match op {
            Op::Leaf | Op::StopGrad(_) => {}
            Op::Add(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::StraightThrough(a, _) => self.accumulate(a, g.clone()),
            Op::Sub(a, b) => {
                self.accumulate(a, g.clone());
                self.accumulate(b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.needs(a) {
                    let vb = &self.nodes[b.0].value;
                    let ga = elementwise(g, vb, |x, y| x * y);
                    self.accumulate(a, ga);
                }
                if self.needs(b) {
                    let va = &self.nodes[a.0].value;
                    let gb = elementwise(g, va, |x, y| x * y);
                    self.accumulate(b, gb);
                }
            }
            Op::MatMul(a, b) => {
                if self.needs(a) {
                    let vb = &self.nodes[b.0].value;
                    let mut ga = Tensor::zeros(g.rows, vb.rows);
                    gemm(g, false, vb, true, &mut ga, false);
                    self.accumulate(a, ga);
                }
                if self.needs(b) {
                    let va = &self.nodes[a.0].value;
                    let mut gb = Tensor::zeros(va.cols, g.cols);
                    gemm(va, true, g, false, &mut gb, false);
                    self.accumulate(b, gb);
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(x, g.clone());
                if self.needs(b) {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    self.accumulate(b, gb);
                }
            }
            Op::ScaleCols(x, w) => {
                let mut gx = g.clone();
                for r in 0..gx.rows {
                    for (o, ww) in gx.row_mut(r).iter_mut().zip(&w) {
                        *o *= ww;
                    }
                }
                self.accumulate(x, gx);
            }
            Op::Scale(x, s) => self.accumulate(x, g.map(|v| v * s)),
            Op::Offset(x, _) => self.accumulate(x, g.clone()),
            Op::Elu(x) => {
                let y = &self.nodes[i].value;
                let gx = elementwise(g, y, |gg, yy| if yy > 0.0 { gg } else { gg * (yy + 1.0) });
                self.accumulate(x, gx);
            }
            Op::Tanh(x) => {
                let y = &self.nodes[i].value;
                let gx = elementwise(g, y, |gg, yy| gg * (1.0 - yy * yy));
                self.accumulate(x, gx);
            }
            Op::Exp(x) => {
                let y = &self.nodes[i].value;
                let gx = elementwise(g, y, |gg, yy| gg * yy);
                self.accumulate(x, gx);
            }
            Op::Abs(x) => {
                let vx = val(self, x);
                let gx = elementwise(g, &vx, |gg, xx| {
                    if xx > 0.0 {
                        gg
                    } else if xx < 0.0 {
                        -gg
                    } else {
                        0.0
                    }
                });
                self.accumulate(x, gx);
            }
            Op::Square(x) => {
                let vx = val(self, x);
                let gx = elementwise(g, &vx, |gg, xx| 2.0 * gg * xx);
                self.accumulate(x, gx);
            }
            Op::Clamp(x, lo, hi) => {
                let vx = val(self, x);
                let gx = elementwise(g, &vx, |gg, xx| if xx >= lo && xx <= hi { gg } else { 0.0 });
                self.accumulate(x, gx);
            }
            Op::Sum(x) => {
                let vx = &self.nodes[x.0].value;
                let gx = Tensor::full(vx.rows, vx.cols, g.item());
                self.accumulate(x, gx);
            }
            Op::Concat(parts) => {
                let mut c0 = 0;
                for p in parts {
                    let cols = self.nodes[p.0].value.cols;
                    if self.needs(p) {
                        let mut gp = Tensor::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[c0..c0 + cols]);
                        }
                        self.accumulate(p, gp);
                    }
                    c0 += cols;
                }
            }
            Op::SliceCols(x, s, e) => {
                let vx = &self.nodes[x.0].value;
                let mut gx = Tensor::zeros(vx.rows, vx.cols);
                for r in 0..g.rows {
                    gx.row_mut(r)[s..e].copy_from_slice(g.row(r));
                }
                self.accumulate(x, gx);
            }
            Op::GatherRows(x, rows) => {
                let vx = &self.nodes[x.0].value;
                let mut gx = Tensor::zeros(vx.rows, vx.cols);
                for (r, &src) in rows.iter().enumerate() {
                    for (o, v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(x, gx);
            }
            Op::Heading {
                x,
                frame,
                mode,
                n_body,
            } => self.heading_backward(i, g, x, frame, mode, n_body),
            Op::Orthonormalize6 { x, offsets } => {
                let vx = val(self, x);
                let mut gx = g.clone();
                for r in 0..vx.rows {
                    let row_in = vx.row(r);
                    let grow = gx.row_mut(r);
                    for &o in &offsets {
                        let gs = GramSchmidt::new(&row_in[o..o + 6])
                            .expect("forward pass already validated the block");
                        let mut gin = [0.0; 6];
                        gs.backward(&grow[o..o + 6], &mut gin);
                        grow[o..o + 6].copy_from_slice(&gin);
                    }
                }
                self.accumulate(x, gx);
            }
            Op::CrossEntropy { logits, targets } => {
                let vl = val(self, logits);
                let scale = g.item() / vl.rows.max(1) as f64;
                let mut gl = Tensor::zeros(vl.rows, vl.cols);
                for (r, &t) in targets.iter().enumerate() {
                    let row = vl.row(r);
                    let lse = log_sum_exp(row);
                    let grow = gl.row_mut(r);
                    for (c, o) in grow.iter_mut().enumerate() {
                        *o = scale * (row[c] - lse).exp();
                    }
                    grow[t] -= scale;
                }
                self.accumulate(logits, gl);
            }
        }
    }

    fn heading_backward(
        &mut self,
        i: usize,
        g: &Tensor,
        x: NodeId,
        frame: NodeId,
        mode: HeadingMode,
        n_body: usize,
    ) {
        let out = self.nodes[i].value.clone();
        let tf = self.nodes[frame.0].value.clone();
        let mut gx = g.clone();
        let mut gf = Tensor::zeros(tf.rows, tf.cols);
        let sign = match mode {
            HeadingMode::ToHeading => -1.0,
            HeadingMode::FromHeading => 1.0,
        };
        for r in 0..g.rows {
            let f = tf.row(r);
            let (c, s) = heading_cos_sin(f[3], f[4]);
            let s = sign * s;
            let grow = g.row(r);
            let orow = out.row(r);
            let gxrow = gx.row_mut(r);
            let mut g_angle = 0.0;
            let mut g_origin = [0.0; 2];
            for k in 0..n_body {
                let base = k * BODY_FEATURES;
                for t in 0..5 {
                    let o = base + 3 * t;
                    let (gxo, gyo) = (grow[o], grow[o + 1]);
                    // d out / d angle = (-out_y, out_x)
                    g_angle += -gxo * orow[o + 1] + gyo * orow[o];
                    // transpose rotation
                    let gin_x = c * gxo + s * gyo;
                    let gin_y = -s * gxo + c * gyo;
                    gxrow[o] = gin_x;
                    gxrow[o + 1] = gin_y;
                    if t == 0 && mode == HeadingMode::ToHeading {
                        g_origin[0] -= gin_x;
                        g_origin[1] -= gin_y;
                    }
                }
            }
            let (u0, u1) = (f[3], f[4]);
            let r2 = u0 * u0 + u1 * u1;
            let gfrow = gf.row_mut(r);
            if r2 > 1e-18 {
                let g_yaw = sign * g_angle;
                gfrow[3] += g_yaw * (-u1 / r2);
                gfrow[4] += g_yaw * (u0 / r2);
            }
            gfrow[0] += g_origin[0];
            gfrow[1] += g_origin[1];
        }
        self.accumulate(x, gx);
        self.accumulate(frame, gf);
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Cosine and sine of the yaw of a rotation whose first column has
/// horizontal components `(u0, u1)`.
pub(crate) fn heading_cos_sin(u0: f64, u1: f64) -> (f64, f64) {
    let r = (u0 * u0 + u1 * u1).sqrt();
    if r < 1e-9 {
        (1.0, 0.0)
    } else {
        (u0 / r, u1 / r)
    }
}

struct GramSchmidt {
    a2: [f64; 3],
    n1: f64,
    n2: f64,
    b1: [f64; 3],
    b2: [f64; 3],
    d: f64,
}

fn dot3(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

impl GramSchmidt {
    const EPS: f64 = 1e-12;

    fn new(block: &[f64]) -> Option<Self> {
        let a1 = [block[0], block[1], block[2]];
        let a2 = [block[3], block[4], block[5]];
        let n1 = dot3(&a1, &a1).sqrt();
        if !(n1 > Self::EPS) {
            return None;
        }
        let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];
        let d = dot3(&b1, &a2);
        let u = [a2[0] - d * b1[0], a2[1] - d * b1[1], a2[2] - d * b1[2]];
        let n2 = dot3(&u, &u).sqrt();
        if !(n2 > Self::EPS * n1.max(1.0)) {
            return None;
        }
        let b2 = [u[0] / n2, u[1] / n2, u[2] / n2];
        Some(Self {
            a2,
            n1,
            n2,
            b1,
            b2,
            d,
        })
    }

    fn backward(&self, gout: &[f64], gin: &mut [f64; 6]) {
        let g1 = [gout[0], gout[1], gout[2]];
        let g2 = [gout[3], gout[4], gout[5]];
        let p2 = dot3(&g2, &self.b2);
        let gu: Vec<f64> = (0..3).map(|k| (g2[k] - p2 * self.b2[k]) / self.n2).collect();
        let gu_b1 = dot3(&gu, &self.b1);
        let mut gb1 = [0.0; 3];
        for k in 0..3 {
            gin[3 + k] = gu[k] - self.b1[k] * gu_b1;
            gb1[k] = g1[k] - gu_b1 * self.a2[k] - self.d * gu[k];
        }
        let p1 = dot3(&gb1, &self.b1);
        for k in 0..3 {
            gin[k] = (gb1[k] - p1 * self.b1[k]) / self.n1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_value_and_gradient() {
        let mut g = ValueGraph::new();
        let x = g.input("x", Tensor::scalar(3.0));
        let y = g.square(x).unwrap();
        assert_eq!(g.value(y).item(), 9.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 6.0);
    }

    #[test]
    fn stop_gradient_times_x() {
        let mut g = ValueGraph::new();
        let x = g.input("x", Tensor::scalar(2.0));
        let sx = g.stop_gradient(x).unwrap();
        let y = g.mul(sx, x).unwrap();
        assert_eq!(g.value(y).item(), 4.0);
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).item(), 2.0);
    }

    #[test]
    fn non_scalar_seed_is_rejected() {
        let mut g = ValueGraph::new();
        let x = g.input("x", Tensor::row_vector(vec![1.0, 2.0]));
        assert!(matches!(
            g.backward(x),
            Err(GraphError::NonScalarSeed { .. })
        ));
    }

    #[test]
    fn shape_errors_name_the_node() {
        let mut g = ValueGraph::new();
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err();
        assert!(matches!(err, GraphError::Shape { node: 2, op: "matmul", .. }));
        assert!(err.to_string().contains("node 2"));
    }

    #[test]
    fn rebinding_reruns_the_graph() {
        let mut g = ValueGraph::new();
        let x = g.input("x", Tensor::scalar(1.0));
        let y = g.square(x).unwrap();
        g.forward(&[("x", Tensor::scalar(4.0))]).unwrap();
        assert_eq!(g.value(y).item(), 16.0);
        assert!(matches!(
            g.forward(&[("x", Tensor::zeros(2, 2))]),
            Err(GraphError::BindShape { .. })
        ));
        assert!(matches!(
            g.forward(&[("nope", Tensor::scalar(0.0))]),
            Err(GraphError::UnknownInput(_))
        ));
    }

    #[test]
    fn orthonormalize_hand_gram_schmidt() {
        let mut g = ValueGraph::new();
        let x = g.input("x", Tensor::row_vector(vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0]));
        let y = g.orthonormalize6(x, vec![0]).unwrap();
        assert_eq!(g.value(y).data, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let bad = g.constant(Tensor::row_vector(vec![1.0, 0.0, 0.0, 2.0, 0.0, 0.0]));
        assert!(matches!(
            g.orthonormalize6(bad, vec![0]),
            Err(GraphError::DegenerateRotation { .. })
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits() {
        let mut g = ValueGraph::new();
        let l = g.input("l", Tensor::zeros(1, 4));
        let ce = g.cross_entropy(l, vec![2]).unwrap();
        assert!((g.value(ce).item() - 4f64.ln()).abs() < 1e-12);
        let l2 = g.constant(Tensor::zeros(1, 4));
        assert!(matches!(
            g.cross_entropy(l2, vec![4]),
            Err(GraphError::TargetOutOfRange { .. })
        ));
    }
}
