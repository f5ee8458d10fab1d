//! Define-by-run reverse-mode autodiff over [`DenseArray`] values.
//!
//! A [`Tape`] records every operation of one forward pass as a node in a
//! DAG (inputs always have smaller ids than the node itself), then
//! [`Tape::backward`] walks the nodes in reverse, accumulating adjoints.
//! Tapes are cheap and rebuilt for every forward pass; a tape is confined
//! to one thread, independent tapes can run in parallel.
//!
//! The op set is exactly what the model graph needs: dense matmul,
//! elementwise arithmetic, relu/log/exp, row log-softmax, masked mean
//! pooling over segments, column concat, reshape, full-sum / scale
//! reductions, and the gradient-reversal node (identity forward, upstream
//! gradient multiplied by `-lambda` on the way down).

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::DenseArray;

/// Index of a node on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[m,n] + [n]`, the bias term of an affine layer.
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    Log(NodeId),
    Exp(NodeId),
    LogSoftmax(NodeId),
    MaskedMeanPool {
        x: NodeId,
        mask: DenseArray,
        /// Unmasked segments per clip, precomputed at record time.
        counts: Vec<f64>,
    },
    Concat(NodeId, NodeId),
    GradReverse {
        x: NodeId,
        lambda: f64,
    },
    Reshape(NodeId),
    SumAll(NodeId),
    Scale {
        x: NodeId,
        factor: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseArray,
    grad: Option<DenseArray>,
}

/// One forward pass worth of recorded operations.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: DenseArray) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            value,
            grad: None,
        });
        id
    }

    /// Register an input array as a leaf node.
    pub fn leaf(&mut self, value: DenseArray) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &DenseArray {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` loss w.r.t. this node, or `None`
    /// if the node is not an ancestor of the loss.
    pub fn grad(&self, id: NodeId) -> Option<&DenseArray> {
        self.nodes[id.0].grad.as_ref()
    }

    // ---- forward ops ----------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = DenseArray::from_vec(&[m, n], out)?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise_binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise_binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.elementwise_binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    fn elementwise_binary(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseArray> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Dimension {
                op,
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va
            .iter()
            .zip(vb.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        DenseArray::from_vec(va.shape(), data)
    }

    /// Broadcast a rank-1 bias over the rows of a rank-2 array.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vx, vb) = (self.value(x), self.value(bias));
        if vx.rank() != 2 || vb.rank() != 1 || vx.shape()[1] != vb.shape()[0] {
            return Err(Error::Dimension {
                op: "add_bias",
                lhs: vx.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (rows, cols) = (vx.shape()[0], vx.shape()[1]);
        let mut data = vx.data().to_vec();
        for r in 0..rows {
            for c in 0..cols {
                data[r * cols + c] += vb.data()[c];
            }
        }
        let value = DenseArray::from_vec(&[rows, cols], data)?;
        Ok(self.push(Op::AddBias(x, bias), value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).iter().map(|&v| math::max(v, 0.0)).collect();
        let value = DenseArray::from_vec(self.value(x).shape(), data).expect("relu: same shape");
        self.push(Op::Relu(x), value)
    }

    /// Natural log; requires strictly positive inputs.
    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.value(x).iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: alloc::format!("non-positive input {bad}"),
            });
        }
        let data = self.value(x).iter().map(|&v| math::ln(v)).collect();
        let value = DenseArray::from_vec(self.value(x).shape(), data)?;
        Ok(self.push(Op::Log(x), value))
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let data = self.value(x).iter().map(|&v| math::exp(v)).collect();
        let value = DenseArray::from_vec(self.value(x).shape(), data).expect("exp: same shape");
        self.push(Op::Exp(x), value)
    }

    /// Row-wise log-softmax of a `[B,K]` array, computed with
    /// max-subtraction so huge logits cannot overflow.
    pub fn log_softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 2 || vx.shape()[1] < 2 {
            return Err(Error::Dimension {
                op: "log_softmax",
                lhs: vx.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (rows, cols) = (vx.shape()[0], vx.shape()[1]);
        let mut data = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &vx.data()[r * cols..(r + 1) * cols];
            let mut mx = f64::NEG_INFINITY;
            for &v in row {
                mx = math::max(mx, v);
            }
            let mut sum = 0.0;
            for &v in row {
                sum += math::exp(v - mx);
            }
            let log_z = mx + math::ln(sum);
            for c in 0..cols {
                data[r * cols + c] = row[c] - log_z;
            }
        }
        let value = DenseArray::from_vec(&[rows, cols], data)?;
        Ok(self.push(Op::LogSoftmax(x), value))
    }

    /// Mean over the unmasked segments of each clip: `[B,N,D]` with a
    /// `{0,1}` mask of shape `[B,N]` pools to `[B,D]`. Padded segments
    /// contribute nothing to the value or the gradient.
    pub fn masked_mean_pool(&mut self, x: NodeId, mask: &DenseArray) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.rank() != 3 || mask.rank() != 2 || vx.shape()[..2] != mask.shape()[..2] {
            return Err(Error::Dimension {
                op: "masked_mean_pool",
                lhs: vx.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        if let Some(&bad) = mask.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::Domain {
                op: "masked_mean_pool",
                detail: alloc::format!("mask entry {bad} not in {{0,1}}"),
            });
        }
        let (b, n, d) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let mut counts = vec![0.0; b];
        for row in 0..b {
            let c: f64 = mask.data()[row * n..(row + 1) * n].iter().sum();
            if c == 0.0 {
                return Err(Error::EmptyClip { row });
            }
            counts[row] = c;
        }
        let mut data = vec![0.0; b * d];
        for row in 0..b {
            for seg in 0..n {
                let m = mask.data()[row * n + seg];
                if m == 0.0 {
                    continue;
                }
                for col in 0..d {
                    data[row * d + col] += vx.data()[(row * n + seg) * d + col];
                }
            }
            for col in 0..d {
                data[row * d + col] /= counts[row];
            }
        }
        let value = DenseArray::from_vec(&[b, d], data)?;
        Ok(self.push(
            Op::MaskedMeanPool {
                x,
                mask: mask.clone(),
                counts,
            },
            value,
        ))
    }

    /// Column-wise concat of two `[B,D1]`, `[B,D2]` arrays.
    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[0] != vb.shape()[0] {
            return Err(Error::Dimension {
                op: "concat",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let (rows, d1, d2) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut data = Vec::with_capacity(rows * (d1 + d2));
        for r in 0..rows {
            data.extend_from_slice(&va.data()[r * d1..(r + 1) * d1]);
            data.extend_from_slice(&vb.data()[r * d2..(r + 1) * d2]);
        }
        let value = DenseArray::from_vec(&[rows, d1 + d2], data)?;
        Ok(self.push(Op::Concat(a, b), value))
    }

    /// Identity in the forward pass; multiplies the upstream gradient by
    /// `-lambda` in the backward pass.
    pub fn grad_reverse(&mut self, x: NodeId, lambda: f64) -> Result<NodeId> {
        if !(lambda > 0.0) {
            return Err(Error::Config(alloc::format!(
                "grad_reverse lambda must be positive, got {lambda}"
            )));
        }
        let value = self.value(x).clone();
        Ok(self.push(Op::GradReverse { x, lambda }, value))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape(x), value))
    }

    /// Sum of every element, as a scalar node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).iter().sum();
        self.push(Op::SumAll(x), DenseArray::scalar(s))
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, x: NodeId, factor: f64) -> NodeId {
        let data = self.value(x).iter().map(|&v| v * factor).collect();
        let value = DenseArray::from_vec(self.value(x).shape(), data).expect("scale: same shape");
        self.push(Op::Scale { x, factor }, value)
    }

    // ---- backward --------------------------------------------------------

    /// Populate gradients of every ancestor of a scalar loss node.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NotScalar {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(DenseArray::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = self.nodes[id].grad.clone() else {
                continue;
            };
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Matmul(a, b) => {
                    let sa = self.value(a).shape().to_vec();
                    let sb = self.value(b).shape().to_vec();
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    // da = g . b^T
                    let bt = transpose(self.value(b).data(), k, n);
                    let da = matmul_raw(g.data(), &bt, m, n, k);
                    self.accumulate(a, &da);
                    // db = a^T . g
                    let at = transpose(self.value(a).data(), m, k);
                    let db = matmul_raw(&at, g.data(), k, m, n);
                    self.accumulate(b, &db);
                }
                Op::Add(a, b) => {
                    self.accumulate(a, g.data());
                    self.accumulate(b, g.data());
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, g.data());
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(self.value(b).iter())
                        .map(|(gv, bv)| gv * bv)
                        .collect();
                    self.accumulate(a, &da);
                    let db: Vec<f64> = g
                        .iter()
                        .zip(self.value(a).iter())
                        .map(|(gv, av)| gv * av)
                        .collect();
                    self.accumulate(b, &db);
                }
                Op::AddBias(x, bias) => {
                    self.accumulate(x, g.data());
                    let cols = self.value(bias).numel();
                    let rows = g.numel() / cols;
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += g.data()[r * cols + c];
                        }
                    }
                    self.accumulate(bias, &db);
                }
                Op::Relu(x) => {
                    // Subgradient 0 at exactly 0.
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.value(x).iter())
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 })
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Log(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.value(x).iter())
                        .map(|(gv, xv)| gv / xv)
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::Exp(x) => {
                    let dx: Vec<f64> = g
                        .iter()
                        .zip(self.nodes[id].value.iter())
                        .map(|(gv, yv)| gv * yv)
                        .collect();
                    self.accumulate(x, &dx);
                }
                Op::LogSoftmax(x) => {
                    // dx = g - softmax(x) * row_sum(g)
                    let y = &self.nodes[id].value;
                    let (rows, cols) = (y.shape()[0], y.shape()[1]);
                    let mut dx = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let gsum: f64 = g.data()[r * cols..(r + 1) * cols].iter().sum();
                        for c in 0..cols {
                            let p = math::exp(y.data()[r * cols + c]);
                            dx[r * cols + c] = g.data()[r * cols + c] - p * gsum;
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::MaskedMeanPool { x, mask, counts } => {
                    let sx = self.value(x).shape().to_vec();
                    let (b, n, d) = (sx[0], sx[1], sx[2]);
                    let mut dx = vec![0.0; b * n * d];
                    for row in 0..b {
                        for seg in 0..n {
                            let m = mask.data()[row * n + seg];
                            if m == 0.0 {
                                continue;
                            }
                            for col in 0..d {
                                dx[(row * n + seg) * d + col] =
                                    g.data()[row * d + col] / counts[row];
                            }
                        }
                    }
                    self.accumulate(x, &dx);
                }
                Op::Concat(a, b) => {
                    let (d1, d2) = (self.value(a).shape()[1], self.value(b).shape()[1]);
                    let rows = self.value(a).shape()[0];
                    let mut da = vec![0.0; rows * d1];
                    let mut db = vec![0.0; rows * d2];
                    for r in 0..rows {
                        let row = &g.data()[r * (d1 + d2)..(r + 1) * (d1 + d2)];
                        da[r * d1..(r + 1) * d1].copy_from_slice(&row[..d1]);
                        db[r * d2..(r + 1) * d2].copy_from_slice(&row[d1..]);
                    }
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::GradReverse { x, lambda } => {
                    let dx: Vec<f64> = g.iter().map(|gv| -lambda * gv).collect();
                    self.accumulate(x, &dx);
                }
                Op::Reshape(x) => {
                    self.accumulate(x, g.data());
                }
                Op::SumAll(x) => {
                    let gv = g.data()[0];
                    let dx = vec![gv; self.value(x).numel()];
                    self.accumulate(x, &dx);
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f64> = g.iter().map(|gv| gv * factor).collect();
                    self.accumulate(x, &dx);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contribution: &[f64]) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(grad) => {
                for (g, c) in grad.data_mut().iter_mut().zip(contribution) {
                    *g += c;
                }
            }
            None => {
                let grad = DenseArray::from_vec(node.value.shape(), contribution.to_vec())
                    .expect("accumulate: gradient shape follows value shape");
                node.grad = Some(grad);
            }
        }
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Central-difference check of the tape gradient of `f` at `x`.
///
/// `f` builds a scalar loss from the leaf node it is handed; the
/// finite-difference side only ever reads forward values, so it stays
/// independent of the backward pass it is checking. Returns the maximum
/// over coordinates of `|g_ad - g_fd| / max(1, |g_fd|)`.
pub fn finite_diff_check<F>(f: F, x: &DenseArray, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::Config("finite_diff_check eps must be positive".to_string()));
    }

    let eval = |point: &DenseArray| -> Result<f64> {
        let mut tape = Tape::new();
        let leaf = tape.leaf(point.clone());
        let loss = f(&mut tape, leaf)?;
        tape.value(loss).scalar_value()
    };

    // Tape gradient at x.
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let loss = f(&mut tape, leaf)?;
    tape.backward(loss)?;
    let g_ad = match tape.grad(leaf) {
        Some(g) => g.data().to_vec(),
        None => vec![0.0; x.numel()],
    };

    let mut worst = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let f_plus = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let f_minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let g_fd = (f_plus - f_minus) / (2.0 * eps);
        let rel = math::abs(g_ad[i] - g_fd) / math::max(1.0, math::abs(g_fd));
        worst = math::max(worst, rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: &[usize], data: &[f64]) -> DenseArray {
        DenseArray::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = t.leaf(arr(&[2, 2], &[3.0, 4.0, 5.0, 6.0]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn matmul_hand_example() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[1, 2], &[1.0, 2.0]));
        let b = t.leaf(arr(&[2, 1], &[3.0, 4.0]));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[1, 2], &[1.0, 2.0]));
        let b = t.leaf(arr(&[3, 1], &[1.0, 2.0, 3.0]));
        match t.matmul(a, b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![1, 2]);
                assert_eq!(rhs, vec![3, 1]);
            }
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        // grad of sum(a . b) w.r.t. a at a=[[1,2]], b=[[3],[4]] is [[3,4]].
        let b = arr(&[2, 1], &[3.0, 4.0]);
        let f = |t: &mut Tape, leaf: NodeId| {
            let bn = t.leaf(b.clone());
            let prod = t.matmul(leaf, bn)?;
            Ok(t.sum_all(prod))
        };
        let x = arr(&[1, 2], &[1.0, 2.0]);
        let err = finite_diff_check(f, &x, 1e-6).unwrap();
        assert!(err < 1e-8, "relative error {err}");

        let mut t = Tape::new();
        let leaf = t.leaf(x);
        let loss = f(&mut t, leaf).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(leaf).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn relu_definition() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[-1.0, 0.0, 2.0]));
        let y = t.relu(x);
        assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn add_gradient_is_all_ones() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[1.0, 2.0, 3.0]));
        let y = t.leaf(arr(&[3], &[4.0, 5.0, 6.0]));
        let s = t.add(x, y).unwrap();
        let loss = t.sum_all(s);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(t.grad(y).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn mul_gradient_is_other_factor() {
        let f = |t: &mut Tape, leaf: NodeId| {
            let y = t.leaf(arr(&[1], &[5.0]));
            let p = t.mul(leaf, y)?;
            Ok(t.sum_all(p))
        };
        let x = arr(&[1], &[2.0]);
        let err = finite_diff_check(f, &x, 1e-6).unwrap();
        assert!(err < 1e-8);

        let mut t = Tape::new();
        let leaf = t.leaf(x);
        let loss = f(&mut t, leaf).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(leaf).unwrap().data(), &[5.0]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[2], &[1.0, 0.0]));
        assert!(matches!(t.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn log_softmax_uniform_case() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[1, 5], &[0.0; 5]));
        let y = t.log_softmax(x).unwrap();
        let expect = -math::ln(5.0);
        for &v in t.value(y).iter() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_hand_example() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[1, 2], &[1.0, 0.0]));
        let y = t.log_softmax(x).unwrap();
        let e0 = -math::ln(1.0 + math::exp(-1.0));
        let e1 = -math::ln(1.0 + math::exp(1.0));
        assert!((t.value(y).data()[0] - e0).abs() < 1e-12);
        assert!((t.value(y).data()[1] - e1).abs() < 1e-12);
        assert!((e0 - -0.31326).abs() < 1e-5);
        assert!((e1 - -1.31326).abs() < 1e-5);
    }

    #[test]
    fn log_softmax_large_logits_stable() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[1, 2], &[1000.0, 0.0]));
        let y = t.log_softmax(x).unwrap();
        let out = t.value(y).data();
        assert!(out[0].abs() < 1e-9);
        assert!((out[1] + 1000.0).abs() < 1e-9);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[2, 3], &[0.3, -1.2, 2.0, 4.0, 4.0, -0.5]));
        let y = t.log_softmax(x).unwrap();
        for r in 0..2 {
            let s: f64 = t.value(y).data()[r * 3..(r + 1) * 3]
                .iter()
                .map(|&v| math::exp(v))
                .sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_pool_hand_mean() {
        let mut t = Tape::new();
        // One clip, three segments of dim 2, last segment masked out.
        let x = t.leaf(arr(&[1, 3, 2], &[1.0, 1.0, 3.0, 3.0, 9.0, 9.0]));
        let mask = arr(&[1, 3], &[1.0, 1.0, 0.0]);
        let y = t.masked_mean_pool(x, &mask).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 2.0]);
    }

    #[test]
    fn masked_pool_all_ones_is_plain_mean() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mask = arr(&[1, 2], &[1.0, 1.0]);
        let y = t.masked_mean_pool(x, &mask).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 3.0]);
    }

    #[test]
    fn masked_pool_gradient_of_padded_segment_is_zero() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[1, 3, 2], &[1.0, 1.0, 3.0, 3.0, 9.0, 9.0]));
        let mask = arr(&[1, 3], &[1.0, 1.0, 0.0]);
        let y = t.masked_mean_pool(x, &mask).unwrap();
        let loss = t.sum_all(y);
        t.backward(loss).unwrap();
        let g = t.grad(x).unwrap().data();
        assert_eq!(&g[4..6], &[0.0, 0.0]);
        assert_eq!(&g[0..2], &[0.5, 0.5]);
    }

    #[test]
    fn masked_pool_rejects_empty_clip() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[1, 2, 1], &[1.0, 2.0]));
        let mask = arr(&[1, 2], &[0.0, 0.0]);
        assert!(matches!(
            t.masked_mean_pool(x, &mask),
            Err(Error::EmptyClip { row: 0 })
        ));
    }

    #[test]
    fn concat_and_grad_split() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[1, 2], &[1.0, 2.0]));
        let b = t.leaf(arr(&[1, 1], &[3.0]));
        let c = t.concat(a, b).unwrap();
        assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0]);

        // Upstream [[10, 20, 30]] splits at column 2.
        let w = t.leaf(arr(&[1, 3], &[10.0, 20.0, 30.0]));
        let prod = t.mul(c, w).unwrap();
        let loss = t.sum_all(prod);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(a).unwrap().data(), &[10.0, 20.0]);
        assert_eq!(t.grad(b).unwrap().data(), &[30.0]);
    }

    #[test]
    fn concat_with_zero_width_is_identity() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = t.leaf(DenseArray::from_vec(&[2, 0], alloc::vec![]).unwrap());
        let c = t.concat(a, b).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 2]);
        assert_eq!(t.value(c).data(), t.value(a).data());
    }

    #[test]
    fn concat_batch_mismatch() {
        let mut t = Tape::new();
        let a = t.leaf(arr(&[1, 2], &[1.0, 2.0]));
        let b = t.leaf(arr(&[2, 1], &[3.0, 4.0]));
        assert!(matches!(t.concat(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn grad_reverse_forward_is_bit_identical() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[2], &[1.5, -2.0]));
        let y = t.grad_reverse(x, 1.0).unwrap();
        assert_eq!(t.value(y).data(), t.value(x).data());
    }

    #[test]
    fn grad_reverse_flips_and_scales_gradient() {
        for (lambda, upstream, expect) in [
            (1.0, vec![0.3, -0.7], vec![-0.3, 0.7]),
            (0.5, vec![2.0], vec![-1.0]),
        ] {
            let mut t = Tape::new();
            let x = t.leaf(arr(&[upstream.len()], &vec![0.0; upstream.len()]));
            let y = t.grad_reverse(x, lambda).unwrap();
            let w = t.leaf(arr(&[upstream.len()], &upstream));
            let p = t.mul(y, w).unwrap();
            let loss = t.sum_all(p);
            t.backward(loss).unwrap();
            assert_eq!(t.grad(x).unwrap().data(), expect.as_slice());
        }
    }

    #[test]
    fn grad_reverse_rejects_non_positive_lambda() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[1], &[1.0]));
        assert!(matches!(t.grad_reverse(x, 0.0), Err(Error::Config(_))));
        assert!(matches!(t.grad_reverse(x, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn backward_requires_scalar_loss() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[1.0, 2.0, 3.0]));
        assert!(matches!(t.backward(x), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[3], &[1.0, 2.0, 3.0]));
        let loss = t.sum_all(x);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
        assert_eq!(t.grad(loss).unwrap().data(), &[1.0]);
    }

    #[test]
    fn backward_square_via_mul() {
        // loss = x^2 at x=3 -> grad 6.
        let mut t = Tape::new();
        let x = t.leaf(arr(&[1], &[3.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_all(sq);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn non_ancestor_has_no_grad() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[1], &[3.0]));
        let bystander = t.leaf(arr(&[1], &[9.0]));
        let loss = t.sum_all(x);
        t.backward(loss).unwrap();
        assert!(t.grad(bystander).is_none());
    }

    #[test]
    fn finite_diff_sum_of_squares() {
        let f = |t: &mut Tape, leaf: NodeId| {
            let sq = t.mul(leaf, leaf)?;
            Ok(t.sum_all(sq))
        };
        let x = arr(&[4], &[0.3, -0.8, 0.1, 0.9]);
        let err = finite_diff_check(f, &x, 1e-6).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn finite_diff_constant_function() {
        let f = |t: &mut Tape, _leaf: NodeId| {
            let c = t.leaf(DenseArray::scalar(7.0));
            Ok(t.sum_all(c))
        };
        let x = arr(&[2], &[0.5, -0.5]);
        let err = finite_diff_check(f, &x, 1e-6).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn finite_diff_through_grad_reverse_is_sign_flipped() {
        // With grad_reverse(lambda=1) the tape gradient is the negative of
        // the finite-difference gradient of the identity path, so comparing
        // the tape against the FD of sum(x) shows exact sign flip.
        let x = arr(&[3], &[0.2, -0.4, 0.6]);
        let mut t = Tape::new();
        let leaf = t.leaf(x.clone());
        let rev = t.grad_reverse(leaf, 1.0).unwrap();
        let loss = t.sum_all(rev);
        t.backward(loss).unwrap();
        let g_ad = t.grad(leaf).unwrap().data().to_vec();

        let mut t2 = Tape::new();
        let leaf2 = t2.leaf(x.clone());
        let loss2 = t2.sum_all(leaf2);
        t2.backward(loss2).unwrap();
        let g_plain = t2.grad(leaf2).unwrap().data().to_vec();
        for (a, b) in g_ad.iter().zip(&g_plain) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn exp_log_composite_gradient() {
        let f = |t: &mut Tape, leaf: NodeId| {
            let e = t.exp(leaf);
            let l = t.log(e)?;
            let sq = t.mul(l, l)?;
            Ok(t.sum_all(sq))
        };
        let x = arr(&[3], &[0.25, -0.75, 0.5]);
        let err = finite_diff_check(f, &x, 1e-6).unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn add_bias_broadcasts_rows() {
        let mut t = Tape::new();
        let x = t.leaf(arr(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = t.leaf(arr(&[2], &[10.0, 20.0]));
        let y = t.add_bias(x, b).unwrap();
        assert_eq!(t.value(y).data(), &[11.0, 22.0, 13.0, 24.0]);
        let loss = t.sum_all(y);
        t.backward(loss).unwrap();
        assert_eq!(t.grad(b).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn deterministic_replay() {
        let build = || {
            let mut t = Tape::new();
            let x = t.leaf(arr(&[2, 2], &[0.1, -0.2, 0.3, -0.4]));
            let w = t.leaf(arr(&[2, 2], &[0.5, 0.6, -0.7, 0.8]));
            let h = t.matmul(x, w).unwrap();
            let r = t.relu(h);
            let loss = t.sum_all(r);
            t.backward(loss).unwrap();
            (
                t.value(loss).data().to_vec(),
                t.grad(x).unwrap().data().to_vec(),
            )
        };
        assert_eq!(build(), build());
    }
}
