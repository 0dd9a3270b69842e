//! Reverse-mode automatic differentiation on a flat tape.
//!
//! The tape records just the operations the forecasting model needs:
//! linear layers, ReLU, softmax routing, hard gather with renormalization,
//! weighted sums, MSE against constant targets, and the usage-balance
//! penalty. Each node stores its forward value; `backward` walks the tape
//! in reverse and accumulates adjoints into [`Parameter`] grad buffers.
//!
//! Gradients accumulate additively across `backward` calls until the
//! parameters are explicitly zeroed.

use crate::error::{FafError, Result};
use crate::numerics::tensor::Parameter;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Constant leaf (inputs, targets, frozen parameters).
    Const,
    /// Leaf bound to `params[idx]`; adjoint flows into its grad buffer.
    Param { idx: usize },
    /// y = W x + b where W is node `w` (rows x cols) and b is node `b`.
    Linear { x: NodeId, w: NodeId, b: NodeId, rows: usize, cols: usize },
    Relu { x: NodeId },
    Softmax { x: NodeId },
    /// y[i] = x[idx[i]]
    Gather { x: NodeId, idx: Vec<usize> },
    /// Scalar sum of a vector.
    Sum { x: NodeId },
    /// y = x / s with s a scalar node.
    DivScalar { x: NodeId, s: NodeId },
    /// y = s * x with s a scalar node.
    ScaleVec { s: NodeId, x: NodeId },
    Add { a: NodeId, b: NodeId },
    /// y = c * x for a constant c.
    MulConst { x: NodeId, c: f64 },
    /// Scalar mean((x - target)^2).
    MseConst { x: NodeId, target: Vec<f64> },
    /// Scalar sum_j (x_j - mean(x))^2.
    BalanceLoss { x: NodeId },
}

struct Node {
    op: Op,
    value: Vec<f64>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Const, value)
    }

    /// Leaf for a learnable parameter. The current value is copied onto
    /// the tape; backward accumulates into `params[idx].grad`.
    pub fn param(&mut self, params: &[Parameter], idx: usize) -> NodeId {
        self.push(Op::Param { idx }, params[idx].value.data().to_vec())
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId, rows: usize, cols: usize) -> NodeId {
        debug_assert_eq!(self.nodes[x.0].value.len(), cols);
        debug_assert_eq!(self.nodes[w.0].value.len(), rows * cols);
        debug_assert_eq!(self.nodes[b.0].value.len(), rows);
        let mut out = self.nodes[b.0].value.clone();
        {
            let wd = &self.nodes[w.0].value;
            let xd = &self.nodes[x.0].value;
            for o in 0..rows {
                let row = &wd[o * cols..(o + 1) * cols];
                out[o] += row.iter().zip(xd).map(|(wv, xv)| wv * xv).sum::<f64>();
            }
        }
        self.push(Op::Linear { x, w, b, rows, cols }, out)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v.max(0.0)).collect();
        self.push(Op::Relu { x }, out)
    }

    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let xs = &self.nodes[x.0].value;
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = xs.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let out: Vec<f64> = exps.iter().map(|e| e / sum).collect();
        self.push(Op::Softmax { x }, out)
    }

    pub fn gather(&mut self, x: NodeId, idx: Vec<usize>) -> NodeId {
        let out: Vec<f64> = idx.iter().map(|i| self.nodes[x.0].value[*i]).collect();
        self.push(Op::Gather { x, idx }, out)
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.iter().sum();
        self.push(Op::Sum { x }, vec![s])
    }

    pub fn div_scalar(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let sv = self.nodes[s.0].value[0];
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| v / sv).collect();
        self.push(Op::DivScalar { x, s }, out)
    }

    pub fn scale_vec(&mut self, s: NodeId, x: NodeId) -> NodeId {
        let sv = self.nodes[s.0].value[0];
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| sv * v).collect();
        self.push(Op::ScaleVec { s, x }, out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        debug_assert_eq!(self.nodes[a.0].value.len(), self.nodes[b.0].value.len());
        let out: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        self.push(Op::Add { a, b }, out)
    }

    pub fn mul_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let out: Vec<f64> = self.nodes[x.0].value.iter().map(|v| c * v).collect();
        self.push(Op::MulConst { x, c }, out)
    }

    pub fn mse_const(&mut self, x: NodeId, target: Vec<f64>) -> Result<NodeId> {
        let xs = &self.nodes[x.0].value;
        if xs.len() != target.len() {
            return Err(FafError::ShapeMismatch {
                expected: vec![target.len()],
                got: vec![xs.len()],
                context: "mse_const".into(),
            });
        }
        let n = xs.len() as f64;
        let loss = xs.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(Op::MseConst { x, target }, vec![loss]))
    }

    pub fn balance_loss(&mut self, x: NodeId) -> NodeId {
        let xs = &self.nodes[x.0].value;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let loss = xs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>();
        self.push(Op::BalanceLoss { x }, vec![loss])
    }

    /// Reverse pass from a scalar `root`. Adjoints of `Param` leaves are
    /// added onto the matching parameters' grad buffers.
    pub fn backward(&self, root: NodeId, params: &mut [Parameter]) {
        debug_assert_eq!(self.nodes[root.0].value.len(), 1);
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.value.len()]).collect();
        adj[root.0][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            if adj[i].iter().all(|v| *v == 0.0) {
                continue;
            }
            let dy = std::mem::take(&mut adj[i]);
            match &self.nodes[i].op {
                Op::Const => {}
                Op::Param { idx } => {
                    let g = params[*idx].grad.data_mut();
                    for (gv, d) in g.iter_mut().zip(&dy) {
                        *gv += d;
                    }
                }
                Op::Linear { x, w, b, rows, cols } => {
                    let xd = self.nodes[x.0].value.clone();
                    let wd = self.nodes[w.0].value.clone();
                    for o in 0..*rows {
                        let d = dy[o];
                        if d == 0.0 {
                            continue;
                        }
                        adj[b.0][o] += d;
                        for c in 0..*cols {
                            adj[w.0][o * cols + c] += d * xd[c];
                            adj[x.0][c] += d * wd[o * cols + c];
                        }
                    }
                }
                Op::Relu { x } => {
                    let xd = &self.nodes[x.0].value;
                    for (j, d) in dy.iter().enumerate() {
                        if xd[j] > 0.0 {
                            adj[x.0][j] += d;
                        }
                    }
                }
                Op::Softmax { x } => {
                    let p = &self.nodes[i].value;
                    let dot: f64 = dy.iter().zip(p).map(|(d, pv)| d * pv).sum();
                    for j in 0..p.len() {
                        adj[x.0][j] += p[j] * (dy[j] - dot);
                    }
                }
                Op::Gather { x, idx } => {
                    for (j, src) in idx.iter().enumerate() {
                        adj[x.0][*src] += dy[j];
                    }
                }
                Op::Sum { x } => {
                    let d = dy[0];
                    for a in adj[x.0].iter_mut() {
                        *a += d;
                    }
                }
                Op::DivScalar { x, s } => {
                    let sv = self.nodes[s.0].value[0];
                    let xd = &self.nodes[x.0].value;
                    let mut ds = 0.0;
                    for (j, d) in dy.iter().enumerate() {
                        adj[x.0][j] += d / sv;
                        ds -= d * xd[j] / (sv * sv);
                    }
                    adj[s.0][0] += ds;
                }
                Op::ScaleVec { s, x } => {
                    let sv = self.nodes[s.0].value[0];
                    let xd = &self.nodes[x.0].value;
                    let mut ds = 0.0;
                    for (j, d) in dy.iter().enumerate() {
                        adj[x.0][j] += sv * d;
                        ds += d * xd[j];
                    }
                    adj[s.0][0] += ds;
                }
                Op::Add { a, b } => {
                    for (j, d) in dy.iter().enumerate() {
                        adj[a.0][j] += d;
                        adj[b.0][j] += d;
                    }
                }
                Op::MulConst { x, c } => {
                    for (j, d) in dy.iter().enumerate() {
                        adj[x.0][j] += c * d;
                    }
                }
                Op::MseConst { x, target } => {
                    let xd = &self.nodes[x.0].value;
                    let n = xd.len() as f64;
                    let d = dy[0];
                    for j in 0..xd.len() {
                        adj[x.0][j] += d * 2.0 * (xd[j] - target[j]) / n;
                    }
                }
                Op::BalanceLoss { x } => {
                    // d/dc_j sum_i (c_i - mean)^2 = 2 (c_j - mean);
                    // the mean terms cancel because sum(c_i - mean) = 0.
                    let xd = &self.nodes[x.0].value;
                    let mean = xd.iter().sum::<f64>() / xd.len() as f64;
                    let d = dy[0];
                    for j in 0..xd.len() {
                        adj[x.0][j] += d * 2.0 * (xd[j] - mean);
                    }
                }
            }
        }
    }
}
