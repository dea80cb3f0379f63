//! Eager computation graph with reverse-mode differentiation.
//!
//! The key property: the backward pass does not compute gradients out-of-band,
//! it *emits them as new graph nodes* built from the same closed set of
//! operations. Gradients are therefore themselves differentiable, which is
//! what second-order meta-updates need — differentiating a query loss through
//! the recorded inner adaptation steps just runs backward a second time.
//!
//! Adjoint accumulation is canonical: when a node is consumed several times,
//! its incoming adjoint contributions are summed in ascending consumer order.
//! Rebuilding the same program therefore yields bitwise-identical gradients,
//! which the collapse and determinism tests rely on.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf { trainable: bool },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, k: f64 },
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Tanh(NodeId),
    LnClamp(NodeId),
    MaskedRecip(NodeId),
    SumAll(NodeId),
    BroadcastScalar(NodeId),
    RowSums(NodeId),
    BroadcastCol(NodeId),
    ColSums(NodeId),
    BroadcastRow(NodeId),
    SoftmaxRows(NodeId),
}

impl Op {
    fn for_each_input(&self, mut f: impl FnMut(NodeId)) {
        match *self {
            Op::Leaf { .. } => {}
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => {
                f(a);
                f(b);
            }
            Op::Affine { x, .. }
            | Op::Transpose(x)
            | Op::Tanh(x)
            | Op::LnClamp(x)
            | Op::MaskedRecip(x)
            | Op::SumAll(x)
            | Op::BroadcastScalar(x)
            | Op::RowSums(x)
            | Op::BroadcastCol(x)
            | Op::ColSums(x)
            | Op::BroadcastRow(x)
            | Op::SoftmaxRows(x) => f(x),
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only tape of eagerly evaluated nodes.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Number of nodes currently on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The forward value of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    /// True for nodes created with [`Graph::leaf`].
    pub fn is_trainable_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { trainable: true })
    }

    /// A watermark for [`Graph::truncate`].
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drops every node created after `mark`. Handles into the dropped
    /// region become invalid; only roll back past nodes you no longer use.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// A differentiable input (model parameters).
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: true }, value)
    }

    /// A non-trainable input (data, targets, fixed matrices).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf { trainable: false }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).mul(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v))
    }

    /// Elementwise `k * x + c`. Covers negation, scaling and constant shifts.
    pub fn affine(&mut self, x: NodeId, k: f64, c: f64) -> Result<NodeId> {
        let v = self.value(x).affine(k, c)?;
        Ok(self.push(Op::Affine { x, k }, v))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::Matmul(a, b), v))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).transpose();
        Ok(self.push(Op::Transpose(x), v))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).tanh()?;
        Ok(self.push(Op::Tanh(x), v))
    }

    /// `ln(max(x, 1e-12))`, the clamped logarithm used in cross-entropy.
    pub fn ln_clamp(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).ln_clamp()?;
        Ok(self.push(Op::LnClamp(x), v))
    }

    /// `1/x` above the clamp threshold, 0 below it.
    pub fn masked_recip(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).masked_recip()?;
        Ok(self.push(Op::MaskedRecip(x), v))
    }

    /// Sum of all entries, as a 1x1 tensor.
    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).sum_all();
        Ok(self.push(Op::SumAll(x), v))
    }

    /// Repeats a 1x1 scalar into `rows` x `cols`.
    pub fn broadcast_scalar(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(x).broadcast_scalar(rows, cols)?;
        Ok(self.push(Op::BroadcastScalar(x), v))
    }

    /// MxN -> Mx1 sums.
    pub fn row_sums(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).row_sums();
        Ok(self.push(Op::RowSums(x), v))
    }

    /// Mx1 -> MxN repetition.
    pub fn broadcast_col(&mut self, x: NodeId, cols: usize) -> Result<NodeId> {
        let v = self.value(x).broadcast_col(cols)?;
        Ok(self.push(Op::BroadcastCol(x), v))
    }

    /// MxN -> 1xN sums.
    pub fn col_sums(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).col_sums();
        Ok(self.push(Op::ColSums(x), v))
    }

    /// 1xN -> MxN repetition.
    pub fn broadcast_row(&mut self, x: NodeId, rows: usize) -> Result<NodeId> {
        let v = self.value(x).broadcast_row(rows)?;
        Ok(self.push(Op::BroadcastRow(x), v))
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).softmax_rows()?;
        Ok(self.push(Op::SoftmaxRows(x), v))
    }

    // ── reverse mode ────────────────────────────────────────────────────

    /// Gradients of a scalar `loss` with respect to `wrt`, as plain tensors.
    /// The nodes emitted during the backward pass are rolled back, so the
    /// tape is unchanged on return. Nodes the loss does not depend on get
    /// zero gradients.
    pub fn grad(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        let mark = self.mark();
        let ids = self.backward(loss, wrt)?;
        let values = ids.iter().map(|&id| self.value(id).clone()).collect();
        self.truncate(mark);
        Ok(values)
    }

    /// Gradients of a scalar `loss` with respect to `wrt`, recorded on the
    /// tape as differentiable nodes. This is the entry point for any update
    /// that must itself be differentiated later (inner adaptation steps).
    pub fn grad_recorded(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.backward(loss, wrt)
    }

    /// Second-order entry point: gradients of a meta-loss that was built on
    /// top of recorded gradients. Identical to [`Graph::grad`] except that a
    /// meta-loss with no dependence on any `wrt` node is rejected — that
    /// always means the inner updates were computed off-tape, so the
    /// second-order term would silently be zero. Use the first-order variant
    /// if that is intended.
    pub fn grad_through_grad(&mut self, meta_loss: NodeId, wrt: &[NodeId]) -> Result<Vec<Tensor>> {
        self.check_node(meta_loss)?;
        let reaches = self.reaches_from(wrt)?;
        if !reaches[meta_loss.0] {
            return Err(CoreError::Contract(alloc::format!(
                "meta-loss (node {}) does not depend on any of the {} target parameters; \
                 record inner updates with grad_recorded, or use the first-order update",
                meta_loss.0,
                wrt.len()
            )));
        }
        self.grad(meta_loss, wrt)
    }

    fn check_node(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(CoreError::Index(alloc::format!(
                "node {} out of range (tape has {} nodes)",
                id.0,
                self.nodes.len()
            )))
        }
    }

    /// `reaches[i]` is true when node `i` depends on some node in `from`.
    fn reaches_from(&self, from: &[NodeId]) -> Result<Vec<bool>> {
        let mut reaches = vec![false; self.nodes.len()];
        for &w in from {
            self.check_node(w)?;
            reaches[w.0] = true;
        }
        for id in 0..self.nodes.len() {
            if !reaches[id] {
                let mut hit = false;
                self.nodes[id].op.for_each_input(|i| hit |= reaches[i.0]);
                reaches[id] = hit;
            }
        }
        Ok(reaches)
    }

    fn backward(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.check_node(loss)?;
        if !self.value(loss).is_scalar() {
            let (r, c) = self.shape(loss);
            return Err(CoreError::Contract(alloc::format!(
                "gradients require a scalar loss, got {r}x{c}"
            )));
        }

        let n0 = self.nodes.len();
        let reaches_wrt = self.reaches_from(wrt)?;

        // Ancestors of the loss (nodes its value depends on).
        let mut active = vec![false; n0];
        active[loss.0] = true;
        for id in (0..=loss.0).rev() {
            if active[id] {
                self.nodes[id].op.for_each_input(|i| active[i.0] = true);
            }
        }
        // Keep only nodes on a path from some wrt node to the loss.
        for id in 0..n0 {
            active[id] &= reaches_wrt[id];
        }

        // Adjoint contributions per node, pushed while consumers are visited
        // in descending id order. Summation happens in ascending consumer
        // order, i.e. in reverse push order.
        let mut contribs: Vec<Vec<NodeId>> = vec![Vec::new(); n0];
        let mut adjoint: Vec<Option<NodeId>> = vec![None; n0];

        let seed = self.constant(Tensor::scalar(1.0)?);

        for id in (0..=loss.0).rev() {
            if !active[id] {
                continue;
            }
            let a = if id == loss.0 {
                seed
            } else {
                let list = core::mem::take(&mut contribs[id]);
                let mut iter = list.iter().rev();
                let first = match iter.next() {
                    Some(&c) => c,
                    None => continue, // pruned: no active consumer reached it
                };
                let mut acc = first;
                for &c in iter {
                    acc = self.add(acc, c)?;
                }
                acc
            };
            adjoint[id] = Some(a);
            self.emit_vjps(NodeId(id), a, &active, &mut contribs)?;
        }

        wrt.iter()
            .map(|&w| match adjoint[w.0] {
                Some(id) => Ok(id),
                None => {
                    let (r, c) = self.shape(w);
                    Ok(self.constant(Tensor::zeros(r, c)))
                }
            })
            .collect()
    }

    /// Emits the vector-Jacobian products of node `out` given its adjoint
    /// `a`, appending one contribution per active input.
    fn emit_vjps(
        &mut self,
        out: NodeId,
        a: NodeId,
        active: &[bool],
        contribs: &mut [Vec<NodeId>],
    ) -> Result<()> {
        let op = self.nodes[out.0].op.clone();
        match op {
            Op::Leaf { .. } => {}
            Op::Add(x, y) => {
                if active[x.0] {
                    contribs[x.0].push(a);
                }
                if active[y.0] {
                    contribs[y.0].push(a);
                }
            }
            Op::Sub(x, y) => {
                if active[x.0] {
                    contribs[x.0].push(a);
                }
                if active[y.0] {
                    let c = self.affine(a, -1.0, 0.0)?;
                    contribs[y.0].push(c);
                }
            }
            Op::Mul(x, y) => {
                if active[x.0] {
                    let c = self.mul(a, y)?;
                    contribs[x.0].push(c);
                }
                if active[y.0] {
                    let c = self.mul(a, x)?;
                    contribs[y.0].push(c);
                }
            }
            Op::Affine { x, k } => {
                if active[x.0] {
                    let c = self.affine(a, k, 0.0)?;
                    contribs[x.0].push(c);
                }
            }
            Op::Matmul(x, y) => {
                if active[x.0] {
                    let yt = self.transpose(y)?;
                    let c = self.matmul(a, yt)?;
                    contribs[x.0].push(c);
                }
                if active[y.0] {
                    let xt = self.transpose(x)?;
                    let c = self.matmul(xt, a)?;
                    contribs[y.0].push(c);
                }
            }
            Op::Transpose(x) => {
                if active[x.0] {
                    let c = self.transpose(a)?;
                    contribs[x.0].push(c);
                }
            }
            Op::Tanh(x) => {
                if active[x.0] {
                    // d tanh = 1 - tanh^2, reusing the forward output.
                    let sq = self.mul(out, out)?;
                    let d = self.affine(sq, -1.0, 1.0)?;
                    let c = self.mul(a, d)?;
                    contribs[x.0].push(c);
                }
            }
            Op::LnClamp(x) => {
                if active[x.0] {
                    let d = self.masked_recip(x)?;
                    let c = self.mul(a, d)?;
                    contribs[x.0].push(c);
                }
            }
            Op::MaskedRecip(x) => {
                if active[x.0] {
                    // d(1/x) = -1/x^2 = -out^2; zero in the masked region
                    // because out is zero there.
                    let sq = self.mul(out, out)?;
                    let d = self.affine(sq, -1.0, 0.0)?;
                    let c = self.mul(a, d)?;
                    contribs[x.0].push(c);
                }
            }
            Op::SumAll(x) => {
                if active[x.0] {
                    let (r, c_) = self.shape(x);
                    let c = self.broadcast_scalar(a, r, c_)?;
                    contribs[x.0].push(c);
                }
            }
            Op::BroadcastScalar(x) => {
                if active[x.0] {
                    let c = self.sum_all(a)?;
                    contribs[x.0].push(c);
                }
            }
            Op::RowSums(x) => {
                if active[x.0] {
                    let cols = self.shape(x).1;
                    let c = self.broadcast_col(a, cols)?;
                    contribs[x.0].push(c);
                }
            }
            Op::BroadcastCol(x) => {
                if active[x.0] {
                    let c = self.row_sums(a)?;
                    contribs[x.0].push(c);
                }
            }
            Op::ColSums(x) => {
                if active[x.0] {
                    let rows = self.shape(x).0;
                    let c = self.broadcast_row(a, rows)?;
                    contribs[x.0].push(c);
                }
            }
            Op::BroadcastRow(x) => {
                if active[x.0] {
                    let c = self.col_sums(a)?;
                    contribs[x.0].push(c);
                }
            }
            Op::SoftmaxRows(x) => {
                if active[x.0] {
                    // dx = y * (a - rowsum(a * y)), with y the forward output.
                    let ay = self.mul(a, out)?;
                    let s = self.row_sums(ay)?;
                    let cols = self.shape(out).1;
                    let sb = self.broadcast_col(s, cols)?;
                    let diff = self.sub(a, sb)?;
                    let c = self.mul(out, diff)?;
                    contribs[x.0].push(c);
                }
            }
        }
        Ok(())
    }
}
