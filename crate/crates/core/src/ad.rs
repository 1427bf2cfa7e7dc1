//! Minimal reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records primitive operations in execution order; `backward`
//! walks them once in reverse. Activations are `batch × features`, weights
//! are `out × in`.

use std::sync::Arc;

use thiserror::Error;

use crate::spline::{basis_values, BasisScratch, KnotGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: (usize, usize), right: (usize, usize) },
    #[error("tensor data length {got} does not match shape {rows}x{cols}")]
    DataLength { rows: usize, cols: usize, got: usize },
    #[error("loss node {0} is not a scalar")]
    NonScalarLoss(usize),
    #[error("non-finite value encountered at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AdError> {
        if data.len() != rows * cols {
            return Err(AdError::DataLength { rows, cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, AdError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(AdError::Shape { op: "from_rows", left: (1, cols), right: (1, r.len()) });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `x / (1 + e^{-x})`, the residual shortcut nonlinearity.
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// `d/dx σ_k(x) = k σ_{k-1}(x)`, taken as 0 at the kink.
pub fn relu_pow_grad(k: u32, x: f64) -> f64 {
    if x <= 0.0 || k == 0 {
        0.0
    } else if k == 1 {
        1.0
    } else {
        k as f64 * x.powi(k as i32 - 1)
    }
}

fn relu_pow(k: u32, x: f64) -> f64 {
    crate::spline::eval_relu_pow(k, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Silu(NodeId),
    ReluPow(NodeId, u32),
    SplineEvalBatch {
        x: NodeId,
        coeffs: NodeId,
        n_out: usize,
        basis: Vec<f64>,
        dbasis: Vec<f64>,
    },
    EdgeSum(NodeId, NodeId),
    Rmse(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::Silu(..) => "silu",
            Op::ReluPow(..) => "relu_pow",
            Op::SplineEvalBatch { .. } => "spline_eval_batch",
            Op::EdgeSum(..) => "edge_sum",
            Op::Rmse(..) => "rmse",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf node (parameter, input or constant). Gradients are reported for
    /// every leaf reached by the backward pass.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.rows {
            return Err(AdError::Shape { op: "matmul", left: av.shape(), right: bv.shape() });
        }
        let (n, m, p) = (av.rows, av.cols, bv.cols);
        let mut out = Tensor::zeros(n, p);
        for i in 0..n {
            for l in 0..m {
                let a_il = av.data[i * m + l];
                if a_il == 0.0 {
                    continue;
                }
                let brow = &bv.data[l * p..(l + 1) * p];
                let orow = &mut out.data[i * p..(i + 1) * p];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a_il * b;
                }
            }
        }
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`; with `a` a batch of inputs and `b` an `out × in` weight.
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols != bv.cols {
            return Err(AdError::Shape { op: "matmul_bt", left: av.shape(), right: bv.shape() });
        }
        let (n, m, p) = (av.rows, av.cols, bv.rows);
        let mut out = Tensor::zeros(n, p);
        for i in 0..n {
            let arow = &av.data[i * m..(i + 1) * m];
            for j in 0..p {
                let brow = &bv.data[j * m..(j + 1) * m];
                out.data[i * p + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        Ok(self.push(out, Op::MatMulBt(a, b)))
    }

    /// Elementwise sum; `b` may also be a `1 × cols` row broadcast over rows.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AdError> {
        let (av, bv) = (self.value(a), self.value(b));
        let out = if av.shape() == bv.shape() {
            Tensor { rows: av.rows, cols: av.cols, data: av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect() }
        } else if bv.rows == 1 && bv.cols == av.cols {
            let mut out = av.clone();
            for row in out.data.chunks_mut(av.cols) {
                for (o, b) in row.iter_mut().zip(&bv.data) {
                    *o += b;
                }
            }
            out
        } else {
            return Err(AdError::Shape { op: "add", left: av.shape(), right: bv.shape() });
        };
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).map(|v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(silu);
        self.push(out, Op::Silu(a))
    }

    pub fn relu_pow(&mut self, a: NodeId, k: u32) -> NodeId {
        let out = self.value(a).map(|v| relu_pow(k, v));
        self.push(out, Op::ReluPow(a, k))
    }

    /// Per-edge spline values. With `x: batch × n` and
    /// `coeffs: (n_out·n) × (G+k)`, column `q·n + p` of the result is
    /// `Σ_j coeffs[q·n+p, j] B_j(x[·, p])`. Differentiable in `x` and
    /// `coeffs`; the knots are constants.
    pub fn spline_eval_batch(&mut self, x: NodeId, coeffs: NodeId, grid: &Arc<KnotGrid>, n_out: usize) -> Result<NodeId, AdError> {
        let (xv, cv) = (self.value(x), self.value(coeffs));
        let n = xv.cols;
        let nb = grid.num_basis();
        if cv.rows != n_out * n || cv.cols != nb {
            return Err(AdError::Shape { op: "spline_eval_batch", left: (n_out * n, nb), right: cv.shape() });
        }
        let batch = xv.rows;
        let mut basis = vec![0.0; batch * n * nb];
        let mut dbasis = vec![0.0; batch * n * nb];
        let mut scratch = BasisScratch::default();
        for (idx, &xi) in xv.data.iter().enumerate() {
            let range = idx * nb..(idx + 1) * nb;
            basis_values(grid, xi, &mut basis[range.clone()], Some(&mut dbasis[range]), &mut scratch);
        }
        let mut out = Tensor::zeros(batch, n_out * n);
        for b in 0..batch {
            for q in 0..n_out {
                for p in 0..n {
                    let bv = &basis[(b * n + p) * nb..(b * n + p + 1) * nb];
                    let crow = cv.row(q * n + p);
                    out.data[b * n_out * n + q * n + p] = bv.iter().zip(crow).map(|(x, y)| x * y).sum();
                }
            }
        }
        Ok(self.push(out, Op::SplineEvalBatch { x, coeffs, n_out, basis, dbasis }))
    }

    /// `out[b, q] = Σ_p v[q, p] · s[b, q·n + p]` with `v: n_out × n`.
    pub fn edge_sum(&mut self, s: NodeId, v: NodeId) -> Result<NodeId, AdError> {
        let (sv, vv) = (self.value(s), self.value(v));
        if sv.cols != vv.rows * vv.cols {
            return Err(AdError::Shape { op: "edge_sum", left: sv.shape(), right: vv.shape() });
        }
        let (m, n) = vv.shape();
        let mut out = Tensor::zeros(sv.rows, m);
        for b in 0..sv.rows {
            let srow = sv.row(b);
            for q in 0..m {
                out.data[b * m + q] = (0..n).map(|p| vv.data[q * n + p] * srow[q * n + p]).sum();
            }
        }
        Ok(self.push(out, Op::EdgeSum(s, v)))
    }

    /// `sqrt(mean((pred − target)²))` as a `1 × 1` node.
    pub fn rmse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, AdError> {
        let (pv, tv) = (self.value(pred), self.value(target));
        if pv.shape() != tv.shape() {
            return Err(AdError::Shape { op: "rmse", left: pv.shape(), right: tv.shape() });
        }
        let out = Tensor::scalar(rmse(pv.data(), tv.data()));
        Ok(self.push(out, Op::Rmse(pred, target)))
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, AdError> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(AdError::NonScalarLoss(loss.0));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !g.is_finite() {
                return Err(AdError::NonFinite { node: id, op: node.op.name() });
            }
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, m, p) = (av.rows, av.cols, bv.cols);
                    let mut ga = Tensor::zeros(n, m);
                    let mut gb = Tensor::zeros(m, p);
                    for i in 0..n {
                        for l in 0..m {
                            let mut s = 0.0;
                            for j in 0..p {
                                let gij = g.data[i * p + j];
                                s += gij * bv.data[l * p + j];
                                gb.data[l * p + j] += av.data[i * m + l] * gij;
                            }
                            ga.data[i * m + l] = s;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, m, p) = (av.rows, av.cols, bv.rows);
                    let mut ga = Tensor::zeros(n, m);
                    let mut gb = Tensor::zeros(p, m);
                    for i in 0..n {
                        for j in 0..p {
                            let gij = g.data[i * p + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for l in 0..m {
                                ga.data[i * m + l] += gij * bv.data[j * m + l];
                                gb.data[j * m + l] += gij * av.data[i * m + l];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    let bshape = self.value(*b).shape();
                    let gb = if bshape == g.shape() {
                        g.clone()
                    } else {
                        let mut gb = Tensor::zeros(1, bshape.1);
                        for row in g.data.chunks(g.cols) {
                            for (o, v) in gb.data.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                        gb
                    };
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, g.map(|v| v * f)),
                Op::Silu(a) => {
                    let av = self.value(*a);
                    let data = g.data.iter().zip(&av.data).map(|(gv, x)| gv * silu_grad(*x)).collect();
                    accumulate(&mut grads, *a, Tensor { rows: g.rows, cols: g.cols, data });
                }
                Op::ReluPow(a, k) => {
                    let av = self.value(*a);
                    let data = g.data.iter().zip(&av.data).map(|(gv, x)| gv * relu_pow_grad(*k, *x)).collect();
                    accumulate(&mut grads, *a, Tensor { rows: g.rows, cols: g.cols, data });
                }
                Op::SplineEvalBatch { x, coeffs, n_out, basis, dbasis } => {
                    let (xv, cv) = (self.value(*x), self.value(*coeffs));
                    let (batch, n) = xv.shape();
                    let nb = cv.cols;
                    let mut gx = Tensor::zeros(batch, n);
                    let mut gc = Tensor::zeros(cv.rows, nb);
                    for b in 0..batch {
                        for q in 0..*n_out {
                            for p in 0..n {
                                let gv = g.data[b * n_out * n + q * n + p];
                                if gv == 0.0 {
                                    continue;
                                }
                                let off = (b * n + p) * nb;
                                let e = q * n + p;
                                let mut dx = 0.0;
                                for j in 0..nb {
                                    gc.data[e * nb + j] += gv * basis[off + j];
                                    dx += cv.data[e * nb + j] * dbasis[off + j];
                                }
                                gx.data[b * n + p] += gv * dx;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *coeffs, gc);
                }
                Op::EdgeSum(s, v) => {
                    let (sv, vv) = (self.value(*s), self.value(*v));
                    let (m, n) = vv.shape();
                    let mut gs = Tensor::zeros(sv.rows, sv.cols);
                    let mut gv = Tensor::zeros(m, n);
                    for b in 0..sv.rows {
                        for q in 0..m {
                            let go = g.data[b * m + q];
                            for p in 0..n {
                                gs.data[b * m * n + q * n + p] = go * vv.data[q * n + p];
                                gv.data[q * n + p] += go * sv.data[b * m * n + q * n + p];
                            }
                        }
                    }
                    accumulate(&mut grads, *s, gs);
                    accumulate(&mut grads, *v, gv);
                }
                Op::Rmse(pred, target) => {
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    let loss_v = node.value.data[0];
                    let count = pv.len() as f64;
                    let scale = if loss_v > 0.0 { g.data[0] / (count * loss_v) } else { 0.0 };
                    let gp: Vec<f64> = pv.data.iter().zip(&tv.data).map(|(p, t)| scale * (p - t)).collect();
                    let gt = gp.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *pred, Tensor { rows: pv.rows, cols: pv.cols, data: gp });
                    accumulate(&mut grads, *target, Tensor { rows: tv.rows, cols: tv.cols, data: gt });
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], target: NodeId, t: Tensor) {
    match &mut grads[target.0] {
        Some(existing) => existing.add_assign(&t),
        slot => *slot = Some(t),
    }
}

pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    let sse: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    (sse / pred.len().max(1) as f64).sqrt()
}

/// Leaf gradients from [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `id`, or `None` when the loss does not depend on it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id` with unreachable leaves reported as zeros of `shape`.
    pub fn get_or_zeros(&self, id: NodeId, shape: (usize, usize)) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_at_zero() {
        assert_eq!(silu(0.0), 0.0);
        assert!((silu_grad(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn relu_pow_value_and_grad() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.relu_pow(x, 2);
        assert_eq!(tape.value(y).data()[0], 9.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data()[0], 6.0);
    }

    #[test]
    fn relu_pow_kink_gradient_is_zero() {
        for k in 1..4 {
            assert_eq!(relu_pow_grad(k, 0.0), 0.0);
            assert_eq!(relu_pow_grad(k, -2.0), 0.0);
        }
    }

    #[test]
    fn chain_through_scale() {
        // y = σ_3(2x) at x = 1: dy/dx = 3 σ_2(2) · 2 = 24
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let s = tape.scale(x, 2.0);
        let y = tape.relu_pow(s, 3);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data()[0], 24.0);
    }

    #[test]
    fn rmse_zero_when_equal() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(3, 1, vec![0.5, 0.5, 0.5]).unwrap());
        let t = tape.leaf(Tensor::new(3, 1, vec![0.5, 0.5, 0.5]).unwrap());
        let l = tape.rmse_loss(p, t).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
        let g = tape.backward(l).unwrap();
        assert!(g.get(p).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(2, 3));
        let b = tape.leaf(Tensor::zeros(2, 3));
        assert!(matches!(tape.matmul(a, b), Err(AdError::Shape { op: "matmul", .. })));
        let c = tape.leaf(Tensor::zeros(1, 2));
        assert!(matches!(tape.add(a, c), Err(AdError::Shape { op: "add", .. })));
        assert!(matches!(tape.backward(a), Err(AdError::NonScalarLoss(0))));
        assert!(Tensor::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn nan_reported_with_node() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(f64::NAN));
        let y = tape.scale(x, 2.0);
        let z = tape.scale(y, 1.0);
        let l = tape.scale(z, f64::NAN);
        assert!(matches!(tape.backward(l), Err(AdError::NonFinite { .. })));
    }

    #[test]
    fn matmul_variants_agree() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 2.0]).unwrap());
        let w = Tensor::new(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let mut wt = Tensor::zeros(3, 2);
        for i in 0..2 {
            for j in 0..3 {
                wt.set(j, i, w.get(i, j));
            }
        }
        let wn = tape.leaf(w);
        let wtn = tape.leaf(wt);
        let y1 = tape.matmul_bt(a, wn).unwrap();
        let y2 = tape.matmul(a, wtn).unwrap();
        assert_eq!(tape.value(y1), tape.value(y2));
    }
}
