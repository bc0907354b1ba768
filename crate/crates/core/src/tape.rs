//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! A [`Tape`] records every primitive eagerly as it is applied; nodes are
//! appended in evaluation order, so the tape is topologically sorted by
//! construction. [`Tape::backward`] sweeps it once in reverse.
//!
//! Cells are written once against the [`Graph`] trait and run either on a
//! tape (training, gradient checks) or on [`Eval`] (plain inference).

use std::rc::Rc;

use crate::error::{ensure, Error, Result};
use crate::linalg::{sigmoid, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Hadamard(usize, usize),
    Tanh(usize),
    Sigmoid(usize),
    /// `w * a + (1 - w) * b`
    Convex {
        w: usize,
        a: usize,
        b: usize,
    },
    Sum(usize),
    AbsSum(usize),
    Scale(usize, f64),
    Mse {
        pred: usize,
        target: Matrix,
    },
    Mae {
        pred: usize,
        target: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of the tracked leaves after a backward sweep.
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// `dLoss/dleaf`; zeros when the loss does not depend on the leaf.
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.adjoints.get(id.0).and_then(|a| a.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Matrix> {
        self.adjoints.get_mut(id.0).and_then(|a| a.take())
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

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            tracked: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Matrix) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.nodes[id.0].tracked = true;
        id
    }

    /// A leaf whose adjoint is discarded.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a.0, b.0)))
    }

    /// Sum of equal shapes, or `b` a column broadcast across `a`'s columns.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add_broadcast(self.value(b))?;
        Ok(self.push(v, Op::Add(a.0, b.0)))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Hadamard(a.0, b.0)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a.0))
    }

    /// `w * a + (1 - w) * b`, with `w` a 1x1 scalar or shaped like `a`.
    pub fn convex(&mut self, w: NodeId, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = Matrix::convex(self.value(w), self.value(a), self.value(b))?;
        Ok(self.push(
            v,
            Op::Convex {
                w: w.0,
                a: a.0,
                b: b.0,
            },
        ))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a.0))
    }

    /// `sum |a_ij|`, with subgradient 0 at 0.
    pub fn abs_sum(&mut self, a: NodeId) -> NodeId {
        let v = Matrix::scalar(self.value(a).abs_sum());
        self.push(v, Op::AbsSum(a.0))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).scale(c);
        self.push(v, Op::Scale(a.0, c))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: NodeId, target: &Matrix) -> Result<NodeId> {
        let p = self.value(pred);
        ensure!(
            p.shape() == target.shape(),
            Dimension,
            "prediction {:?} vs target {:?}",
            p.shape(),
            target.shape()
        );
        let n = p.len().max(1) as f64;
        let v = p.zip_map(target, |a, b| (a - b) * (a - b))?.sum() / n;
        Ok(self.push(
            Matrix::scalar(v),
            Op::Mse {
                pred: pred.0,
                target: target.clone(),
            },
        ))
    }

    /// Mean absolute error against a constant target.
    pub fn mae(&mut self, pred: NodeId, target: &Matrix) -> Result<NodeId> {
        let p = self.value(pred);
        ensure!(
            p.shape() == target.shape(),
            Dimension,
            "prediction {:?} vs target {:?}",
            p.shape(),
            target.shape()
        );
        let n = p.len().max(1) as f64;
        let v = p.zip_map(target, |a, b| (a - b).abs())?.sum() / n;
        Ok(self.push(
            Matrix::scalar(v),
            Op::Mae {
                pred: pred.0,
                target: target.clone(),
            },
        ))
    }

    /// Sum of scalar nodes.
    pub fn add_scalars(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        ensure!(
            self.value(a).as_scalar().is_some() && self.value(b).as_scalar().is_some(),
            Dimension,
            "add_scalars expects 1x1 operands"
        );
        self.add(a, b)
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        ensure!(loss.0 < self.nodes.len(), InvalidArgument, "unknown node");
        if self.value(loss).as_scalar().is_none() {
            let (r, c) = self.value(loss).shape();
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss node, got {r}x{c}"
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Matrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if node.tracked {
                        adj[i] = Some(g);
                    }
                    continue;
                }
                Op::MatMul(a, b) => {
                    let da = g.matmul_transposed(&self.nodes[*b].value)?;
                    let db = self.nodes[*a].value.transposed_matmul(&g)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    let db = if self.nodes[*b].value.shape() == g.shape() {
                        g.clone()
                    } else {
                        g.row_sums()
                    };
                    accumulate(&mut adj, *b, db);
                    accumulate(&mut adj, *a, g);
                }
                Op::Hadamard(a, b) => {
                    let da = g.zip_map(&self.nodes[*b].value, |x, y| x * y)?;
                    let db = g.zip_map(&self.nodes[*a].value, |x, y| x * y)?;
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                }
                Op::Tanh(a) => {
                    let da = g.zip_map(&node.value, |x, y| x * (1.0 - y * y))?;
                    accumulate(&mut adj, *a, da);
                }
                Op::Sigmoid(a) => {
                    let da = g.zip_map(&node.value, |x, y| x * y * (1.0 - y))?;
                    accumulate(&mut adj, *a, da);
                }
                Op::Convex { w, a, b } => {
                    let wv = &self.nodes[*w].value;
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (da, db, dw) = if let Some(s) = wv.as_scalar() {
                        let dw = g
                            .data()
                            .iter()
                            .zip(av.data().iter().zip(bv.data()))
                            .map(|(gi, (x, y))| gi * (x - y))
                            .sum::<f64>();
                        (g.scale(s), g.scale(1.0 - s), Matrix::scalar(dw))
                    } else {
                        let da = g.zip_map(wv, |x, s| x * s)?;
                        let db = g.zip_map(wv, |x, s| x * (1.0 - s))?;
                        let diff = av.zip_map(bv, |x, y| x - y)?;
                        (da, db, g.zip_map(&diff, |x, d| x * d)?)
                    };
                    accumulate(&mut adj, *a, da);
                    accumulate(&mut adj, *b, db);
                    accumulate(&mut adj, *w, dw);
                }
                Op::Sum(a) => {
                    let s = g.data()[0];
                    let (r, c) = self.nodes[*a].value.shape();
                    accumulate(&mut adj, *a, Matrix::filled(r, c, s));
                }
                Op::AbsSum(a) => {
                    let s = g.data()[0];
                    let da = self.nodes[*a].value.map(|v| s * signum0(v));
                    accumulate(&mut adj, *a, da);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut adj, *a, g.scale(*c));
                }
                Op::Mse { pred, target } => {
                    let p = &self.nodes[*pred].value;
                    let k = 2.0 * g.data()[0] / p.len().max(1) as f64;
                    accumulate(&mut adj, *pred, p.zip_map(target, |a, b| k * (a - b))?);
                }
                Op::Mae { pred, target } => {
                    let p = &self.nodes[*pred].value;
                    let k = g.data()[0] / p.len().max(1) as f64;
                    accumulate(
                        &mut adj,
                        *pred,
                        p.zip_map(target, |a, b| k * signum0(a - b))?,
                    );
                }
            }
        }
        Ok(Gradients { adjoints: adj })
    }
}

fn signum0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(adj: &mut [Option<Matrix>], idx: usize, g: Matrix) {
    match &mut adj[idx] {
        Some(existing) => existing.accumulate(&g),
        slot @ None => *slot = Some(g),
    }
}

/// The primitive operations a recurrent cell needs.
pub trait Graph {
    type Value: Clone;

    fn constant(&mut self, m: Matrix) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Matrix;
    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn hadamard(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn tanh(&mut self, a: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, a: &Self::Value) -> Self::Value;
    fn convex(&mut self, w: &Self::Value, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
}

impl Graph for Tape {
    type Value = NodeId;

    fn constant(&mut self, m: Matrix) -> NodeId {
        Tape::constant(self, m)
    }
    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Matrix {
        Tape::value(self, *v)
    }
    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::matmul(self, *a, *b)
    }
    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::add(self, *a, *b)
    }
    fn hadamard(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::hadamard(self, *a, *b)
    }
    fn tanh(&mut self, a: &NodeId) -> NodeId {
        Tape::tanh(self, *a)
    }
    fn sigmoid(&mut self, a: &NodeId) -> NodeId {
        Tape::sigmoid(self, *a)
    }
    fn convex(&mut self, w: &NodeId, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        Tape::convex(self, *w, *a, *b)
    }
}

/// Eager evaluation with no recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl Graph for Eval {
    type Value = Rc<Matrix>;

    fn constant(&mut self, m: Matrix) -> Rc<Matrix> {
        Rc::new(m)
    }
    fn value<'a>(&'a self, v: &'a Rc<Matrix>) -> &'a Matrix {
        v
    }
    fn matmul(&mut self, a: &Rc<Matrix>, b: &Rc<Matrix>) -> Result<Rc<Matrix>> {
        Ok(Rc::new(a.matmul(b)?))
    }
    fn add(&mut self, a: &Rc<Matrix>, b: &Rc<Matrix>) -> Result<Rc<Matrix>> {
        Ok(Rc::new(a.add_broadcast(b)?))
    }
    fn hadamard(&mut self, a: &Rc<Matrix>, b: &Rc<Matrix>) -> Result<Rc<Matrix>> {
        Ok(Rc::new(a.zip_map(b, |x, y| x * y)?))
    }
    fn tanh(&mut self, a: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(a.map(f64::tanh))
    }
    fn sigmoid(&mut self, a: &Rc<Matrix>) -> Rc<Matrix> {
        Rc::new(a.map(sigmoid))
    }
    fn convex(&mut self, w: &Rc<Matrix>, a: &Rc<Matrix>, b: &Rc<Matrix>) -> Result<Rc<Matrix>> {
        Ok(Rc::new(Matrix::convex(w, a, b)?))
    }
}
