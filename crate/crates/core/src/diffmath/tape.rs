//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in creation order, so node ids are
//! already a topological order. [`Tape::backward`] walks that order in
//! reverse exactly once and accumulates gradients per node.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `a + 1·row`, broadcasting a `1×c` row over every row of `a`.
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    Transpose(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    Sum(NodeId),
    SoftmaxCrossEntropy {
        logits: NodeId,
        label: usize,
        probs: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Operation record for one forward pass. Single-threaded; build one per
/// forward call.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Unary elementwise activations supported by the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
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

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Softmax over all entries, with max subtraction.
pub fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln Σ exp(v)`, stable.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Vector softmax. Errors on an empty input or a non-vector shape.
pub fn softmax(v: &Matrix) -> Result<Matrix> {
    if v.is_empty() {
        return Err(Error::dim("softmax", "empty input"));
    }
    if !v.is_vector() {
        return Err(Error::dim(
            "softmax",
            format!("expected a vector, got {}x{}", v.rows(), v.cols()),
        ));
    }
    Matrix::new(v.rows(), v.cols(), softmax_slice(v.data()))
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

    /// Records a differentiable input.
    pub fn var(&mut self, value: Matrix) -> NodeId {
        self.push_leaf(value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push_leaf(value, false)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    fn push_leaf(&mut self, value: Matrix, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op, value: Matrix, inputs: &[NodeId], name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), v, &[a, b], "matmul")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        self.push(Op::Add(a, b), v, &[a, b], "add")
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::dim(
                "add_row",
                format!(
                    "cannot broadcast {}x{} over {}x{}",
                    rv.rows(),
                    rv.cols(),
                    av.rows(),
                    av.cols()
                ),
            ));
        }
        let cols = av.cols();
        let mut data = av.data().to_vec();
        for chunk in data.chunks_mut(cols.max(1)) {
            for (x, b) in chunk.iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let v = Matrix::new(av.rows(), cols, data)?;
        self.push(Op::AddRow(a, row), v, &[a, row], "add_row")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), v, &[a, b], "mul")
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let v = self.value(a).scale(k);
        self.push(Op::Scale(a, k), v, &[a], "scale")
    }

    pub fn activation(&mut self, kind: Activation, a: NodeId) -> Result<NodeId> {
        match kind {
            Activation::Tanh => self.tanh(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Relu => self.relu(a),
        }
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), v, &[a], "tanh")
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), v, &[a], "sigmoid")
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).map(relu);
        self.push(Op::Relu(a), v, &[a], "relu")
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let v = softmax(self.value(a))?;
        self.push(Op::Softmax(a), v, &[a], "softmax")
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v, &[a], "transpose")
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_rows", "no inputs"))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::dim(
                    "concat_rows",
                    format!("column count {} vs {cols}", v.cols()),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let v = Matrix::new(rows, cols, data)?;
        self.push(Op::ConcatRows(parts.to_vec()), v, parts, "concat_rows")
    }

    /// Joins matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat_cols", "no inputs"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(Error::dim(
                    "concat_cols",
                    format!("row count {} vs {rows}", v.rows()),
                ));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Matrix::new(rows, cols, data)?;
        self.push(Op::ConcatCols(parts.to_vec()), v, parts, "concat_cols")
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let v = Matrix::filled(1, 1, self.value(a).sum());
        self.push(Op::Sum(a), v, &[a], "sum")
    }

    /// Cross-entropy `-ln softmax(logits)[label]`, computed with log-sum-exp.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let lv = self.value(logits);
        if !lv.is_vector() || lv.is_empty() {
            return Err(Error::dim("softmax_cross_entropy", "logits must be a vector"));
        }
        if label >= lv.len() {
            return Err(Error::Contract(format!(
                "label {label} out of range for {} classes",
                lv.len()
            )));
        }
        let loss = log_sum_exp(lv.data()) - lv.data()[label];
        let probs = softmax_slice(lv.data());
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                label,
                probs,
            },
            Matrix::filled(1, 1, loss),
            &[logits],
            "softmax_cross_entropy",
        )
    }

    /// Propagates `d loss / d node` to every node that depends on a
    /// variable. `loss` must be a 1x1 node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).shape() != (1, 1) {
            let (r, c) = self.value(loss).shape();
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {r}x{c}"
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.matmul(&self.value(*b).transpose())?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).transpose().matmul(&g)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone())?;
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let cols = g.cols();
                        let mut acc = vec![0.0; cols];
                        for r in 0..g.rows() {
                            for (s, v) in acc.iter_mut().zip(g.row(r)) {
                                *s += v;
                            }
                        }
                        accumulate(&mut grads, *row, Matrix::row_vector(acc))?;
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g.clone())?;
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.zip_map(self.value(*b), "mul_grad", |x, y| x * y)?;
                        accumulate(&mut grads, *a, ga)?;
                    }
                    if self.needs(*b) {
                        let gb = g.zip_map(self.value(*a), "mul_grad", |x, y| x * y)?;
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads, *a, g.scale(*k))?;
                }
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, "tanh_grad", |x, t| x * (1.0 - t * t))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, "sigmoid_grad", |x, s| x * s * (1.0 - s))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Relu(a) => {
                    let ga = g.zip_map(self.value(*a), "relu_grad", |x, inp| {
                        if inp > 0.0 {
                            x
                        } else {
                            0.0
                        }
                    })?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Softmax(a) => {
                    // J = diag(s) - s sᵀ, so Jᵀg = s ⊙ (g - <g, s>).
                    let s = &node.value;
                    let dot: f64 = g.data().iter().zip(s.data()).map(|(x, y)| x * y).sum();
                    let ga = g.zip_map(s, "softmax_grad", |x, sv| sv * (x - dot))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.transpose())?;
                }
                Op::ConcatRows(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let rows = self.value(p).rows();
                        if self.needs(p) {
                            let slice = g.data()[offset * cols..(offset + rows) * cols].to_vec();
                            accumulate(&mut grads, p, Matrix::new(rows, cols, slice)?)?;
                        }
                        offset += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        if self.needs(p) {
                            let mut data = Vec::with_capacity(g.rows() * pc);
                            for r in 0..g.rows() {
                                data.extend_from_slice(&g.row(r)[offset..offset + pc]);
                            }
                            accumulate(&mut grads, p, Matrix::new(g.rows(), pc, data)?)?;
                        }
                        offset += pc;
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.data()[0]))?;
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    label,
                    probs,
                } => {
                    let scale = g.data()[0];
                    let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                    d[*label] -= scale;
                    let (r, c) = self.value(*logits).shape();
                    accumulate(&mut grads, *logits, Matrix::new(r, c, d)?)?;
                }
            }
            // Leaves keep their gradient for the caller.
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }
}

fn accumulate(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Gradients of a scalar loss with respect to tape leaves.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for a variable leaf; `None` when the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`], but returns zeros of the leaf's shape when
    /// the loss does not depend on it.
    pub fn get_or_zeros(&self, tape: &Tape, id: NodeId) -> Matrix {
        self.get(id).cloned().unwrap_or_else(|| {
            let (r, c) = tape.value(id).shape();
            Matrix::zeros(r, c)
        })
    }
}
