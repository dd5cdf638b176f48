//! Reverse-mode autodiff tape. One tape is built per training step; nodes are
//! immutable once recorded and backward visits them exactly once in reverse
//! topological (= recording) order.

use super::tensor::{Precision, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// x (b×d) + bias row (d), broadcast over rows.
    AddBiasRow(NodeId, NodeId),
    Relu(NodeId),
    Gelu(NodeId),
    Scale(NodeId, f64),
    L2NormRows(NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Concat1d(Vec<NodeId>),
    Slice1d(NodeId, usize, usize),
    RowLogSumExp(NodeId),
    TakeDiag(NodeId),
    MeanAll(NodeId),
    SumAll(NodeId),
    SelectRow(NodeId, usize),
    MeanRows(NodeId),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Single-threaded computation graph.
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu_val(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            precision: Precision::F64,
        }
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf, t)
    }

    fn push(&mut self, op: Op, mut value: Tensor) -> NodeId {
        if !matches!(op, Op::Leaf) {
            value.round_to(self.precision);
        }
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].value.shape
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!(
                "matmul {:?} x {:?}",
                sa, sb
            )));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let av = &self.nodes[a.0].value.data;
        let bv = &self.nodes[b.0].value.data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aik = av[i * k + p];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aik * brow[j];
                }
            }
        }
        Ok(self.push(Op::Matmul(a, b), Tensor::new(vec![m, n], out)?))
    }

    fn binary_same_shape(&self, a: NodeId, b: NodeId, name: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "{name}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "add")?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add(a, b), Tensor::new(shape, data)?))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "sub")?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Sub(a, b), Tensor::new(shape, data)?))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape(a, b, "mul")?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Mul(a, b), Tensor::new(shape, data)?))
    }

    pub fn add_bias_row(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let sx = self.shape(x).to_vec();
        let sb = self.shape(bias).to_vec();
        if sx.len() != 2 || sb != [sx[1]] {
            return Err(Error::Dimension(format!(
                "add_bias_row {:?} + {:?}",
                sx, sb
            )));
        }
        let (b, d) = (sx[0], sx[1]);
        let xv = &self.nodes[x.0].value.data;
        let bv = &self.nodes[bias.0].value.data;
        let mut out = xv.clone();
        for i in 0..b {
            for j in 0..d {
                out[i * d + j] += bv[j];
            }
        }
        Ok(self.push(Op::AddBiasRow(x, bias), Tensor::new(sx, out)?))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|x| x.max(0.0)).collect(),
            requires_grad: false,
        };
        self.push(Op::Relu(a), out)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|&x| gelu_val(x)).collect(),
            requires_grad: false,
        };
        self.push(Op::Gelu(a), out)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = &self.nodes[a.0].value;
        let out = Tensor {
            shape: v.shape.clone(),
            data: v.data.iter().map(|x| x * s).collect(),
            requires_grad: false,
        };
        self.push(Op::Scale(a, s), out)
    }

    /// Unit-normalize each row; errors on a zero-norm row.
    pub fn l2_normalize_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if !v.is_matrix() {
            return Err(Error::Dimension("l2_normalize_rows needs a matrix".into()));
        }
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = v.row(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!("zero-norm row {i}")));
            }
            for j in 0..c {
                out[i * c + j] = row[j] / norm;
            }
        }
        Ok(self.push(Op::L2NormRows(a), Tensor::new(vec![r, c], out)?))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if !v.is_matrix() {
            return Err(Error::Dimension("transpose needs a matrix".into()));
        }
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v.data[i * c + j];
            }
        }
        Ok(self.push(Op::Transpose(a), Tensor::new(vec![c, r], out)?))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != v.numel() {
            return Err(Error::Dimension(format!(
                "reshape {:?} -> {:?}",
                v.shape, shape
            )));
        }
        let out = Tensor::new(shape, v.data.clone())?;
        Ok(self.push(Op::Reshape(a), out))
    }

    /// Concatenate 1-D nodes in order.
    pub fn concat_1d(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.nodes[p.0].value;
            if v.shape.len() != 1 {
                return Err(Error::Dimension("concat_1d needs 1-D inputs".into()));
            }
            data.extend_from_slice(&v.data);
        }
        let len = data.len();
        Ok(self.push(Op::Concat1d(parts.to_vec()), Tensor::new(vec![len], data)?))
    }

    pub fn slice_1d(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if v.shape.len() != 1 || start + len > v.numel() {
            return Err(Error::Range(format!(
                "slice_1d [{start}, {}) of length-{} vector",
                start + len,
                v.numel()
            )));
        }
        let data = v.data[start..start + len].to_vec();
        Ok(self.push(Op::Slice1d(a, start, len), Tensor::new(vec![len], data)?))
    }

    /// Row-wise log-sum-exp with max subtraction, (b×n) -> (b).
    pub fn row_logsumexp(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if !v.is_matrix() {
            return Err(Error::Dimension("row_logsumexp needs a matrix".into()));
        }
        let (r, _c) = (v.rows(), v.cols());
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = v.row(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            out[i] = mx + s.ln();
        }
        Ok(self.push(Op::RowLogSumExp(a), Tensor::new(vec![r], out)?))
    }

    pub fn take_diag(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if !v.is_matrix() || v.rows() != v.cols() {
            return Err(Error::Dimension("take_diag needs a square matrix".into()));
        }
        let n = v.rows();
        let data: Vec<f64> = (0..n).map(|i| v.data[i * n + i]).collect();
        Ok(self.push(Op::TakeDiag(a), Tensor::new(vec![n], data)?))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let m = v.data.iter().sum::<f64>() / v.numel() as f64;
        self.push(Op::MeanAll(a), Tensor::scalar(m))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = &self.nodes[a.0].value;
        let s = v.data.iter().sum::<f64>();
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    /// Row k of a matrix as a 1×c matrix.
    pub fn select_row(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if !v.is_matrix() || k >= v.rows() {
            return Err(Error::Range(format!(
                "select_row {k} of {:?}",
                v.shape
            )));
        }
        let data = v.row(k).to_vec();
        let c = v.cols();
        Ok(self.push(Op::SelectRow(a, k), Tensor::new(vec![1, c], data)?))
    }

    /// Mean over rows, (b×d) -> (1×d).
    pub fn mean_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let v = &self.nodes[a.0].value;
        if !v.is_matrix() {
            return Err(Error::Dimension("mean_rows needs a matrix".into()));
        }
        let (r, c) = (v.rows(), v.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += v.data[i * c + j];
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        Ok(self.push(Op::MeanRows(a), Tensor::new(vec![1, c], out)?))
    }

    /// Backward pass from a scalar node. Returns per-node gradients (dense);
    /// leaves with `requires_grad == false` still receive a slot but callers
    /// must not use it for updates.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Argument("backward requires a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Matmul(a, b) => {
                    // dA = dC·Bᵀ, dB = Aᵀ·dC
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let brow = &bv.data[p * n..(p + 1) * n];
                            let grow = &g.data[i * n..(i + 1) * n];
                            let mut s = 0.0;
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            da[i * k + p] = s;
                        }
                    }
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g.data[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av.data[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let drow = &mut db[p * n..(p + 1) * n];
                            for j in 0..n {
                                drow[j] += aip * grow[j];
                            }
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![m, k], da)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![k, n], db)?);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    let neg = Tensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().map(|x| -x).collect(),
                        requires_grad: false,
                    };
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, neg);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[a.0].value;
                    let bv = &self.nodes[b.0].value;
                    let da: Vec<f64> = g.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
                    let db: Vec<f64> = g.data.iter().zip(&av.data).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape.clone(), da)?);
                    accumulate(&mut grads, *b, Tensor::new(bv.shape.clone(), db)?);
                }
                Op::AddBiasRow(x, bias) => {
                    let (b, d) = (g.rows(), g.cols());
                    let mut dbias = vec![0.0; d];
                    for i in 0..b {
                        for j in 0..d {
                            dbias[j] += g.data[i * d + j];
                        }
                    }
                    accumulate(&mut grads, *x, g);
                    accumulate(&mut grads, *bias, Tensor::new(vec![d], dbias)?);
                }
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    // subgradient 0 at 0
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&av.data)
                        .map(|(gv, x)| if *x > 0.0 { *gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape.clone(), da)?);
                }
                Op::Gelu(a) => {
                    let av = &self.nodes[a.0].value;
                    let da: Vec<f64> = g
                        .data
                        .iter()
                        .zip(&av.data)
                        .map(|(gv, &x)| gv * gelu_grad(x))
                        .collect();
                    accumulate(&mut grads, *a, Tensor::new(av.shape.clone(), da)?);
                }
                Op::Scale(a, s) => {
                    let da = Tensor {
                        shape: g.shape.clone(),
                        data: g.data.iter().map(|x| x * s).collect(),
                        requires_grad: false,
                    };
                    accumulate(&mut grads, *a, da);
                }
                Op::L2NormRows(a) => {
                    let av = &self.nodes[a.0].value;
                    let yv = &node.value;
                    let (r, c) = (av.rows(), av.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let x = av.row(i);
                        let y = yv.row(i);
                        let gr = &g.data[i * c..(i + 1) * c];
                        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dot: f64 = gr.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            da[i * c + j] = (gr[j] - y[j] * dot) / norm;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![r, c], da)?);
                }
                Op::Transpose(a) => {
                    let (r, c) = (g.rows(), g.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[j * r + i] = g.data[i * c + j];
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![c, r], da)?);
                }
                Op::Reshape(a) => {
                    let shape = self.nodes[a.0].value.shape.clone();
                    accumulate(&mut grads, *a, Tensor::new(shape, g.data)?);
                }
                Op::Concat1d(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p.0].value.numel();
                        let chunk = g.data[off..off + len].to_vec();
                        accumulate(&mut grads, p, Tensor::new(vec![len], chunk)?);
                        off += len;
                    }
                }
                Op::Slice1d(a, start, len) => {
                    let total = self.nodes[a.0].value.numel();
                    let mut da = vec![0.0; total];
                    da[*start..start + len].copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, Tensor::new(vec![total], da)?);
                }
                Op::RowLogSumExp(a) => {
                    let av = &self.nodes[a.0].value;
                    let (r, c) = (av.rows(), av.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let row = av.row(i);
                        let lse = node.value.data[i];
                        for j in 0..c {
                            da[i * c + j] = g.data[i] * (row[j] - lse).exp();
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![r, c], da)?);
                }
                Op::TakeDiag(a) => {
                    let n = self.nodes[a.0].value.rows();
                    let mut da = vec![0.0; n * n];
                    for i in 0..n {
                        da[i * n + i] = g.data[i];
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![n, n], da)?);
                }
                Op::MeanAll(a) => {
                    let av = &self.nodes[a.0].value;
                    let gv = g.data[0] / av.numel() as f64;
                    let da = Tensor {
                        shape: av.shape.clone(),
                        data: vec![gv; av.numel()],
                        requires_grad: false,
                    };
                    accumulate(&mut grads, *a, da);
                }
                Op::SumAll(a) => {
                    let av = &self.nodes[a.0].value;
                    let da = Tensor {
                        shape: av.shape.clone(),
                        data: vec![g.data[0]; av.numel()],
                        requires_grad: false,
                    };
                    accumulate(&mut grads, *a, da);
                }
                Op::SelectRow(a, k) => {
                    let av = &self.nodes[a.0].value;
                    let (r, c) = (av.rows(), av.cols());
                    let mut da = vec![0.0; r * c];
                    da[k * c..(k + 1) * c].copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, Tensor::new(vec![r, c], da)?);
                }
                Op::MeanRows(a) => {
                    let av = &self.nodes[a.0].value;
                    let (r, c) = (av.rows(), av.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = g.data[j] / r as f64;
                        }
                    }
                    accumulate(&mut grads, *a, Tensor::new(vec![r, c], da)?);
                }
            }
        }
        Ok(grads)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, v) in existing.data.iter_mut().zip(&g.data) {
                *e += v;
            }
        }
        slot => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let orig = xp[i];
            xp[i] = orig + h;
            let fp = f(&xp);
            xp[i] = orig - h;
            let fm = f(&xp);
            xp[i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let a = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let c = tape.matmul(i2, a).unwrap();
        assert_eq!(tape.value(c).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_zero_row() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let b = tape.leaf(Tensor::new(vec![2, 1], vec![0.0, 5.0]).unwrap());
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data, vec![0.0, 0.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        assert!(tape.matmul(a, b).is_err());
    }

    #[test]
    fn matmul_gradient_matches_finite_difference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let adata: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let bdata: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::new(vec![3, 4], adata.clone()).unwrap().with_grad());
        let b = tape.leaf(Tensor::new(vec![4, 2], bdata.clone()).unwrap());
        let c = tape.matmul(a, b).unwrap();
        let s = tape.sum_all(c);
        let grads = tape.backward(s).unwrap();
        let ga = grads[a.0].as_ref().unwrap();

        let fd = finite_diff(
            |x| {
                let mut t = Tape::new();
                let a = t.leaf(Tensor::new(vec![3, 4], x.to_vec()).unwrap());
                let b = t.leaf(Tensor::new(vec![4, 2], bdata.clone()).unwrap());
                let c = t.matmul(a, b).unwrap();
                let s = t.sum_all(c);
                t.value(s).data[0]
            },
            &adata,
            1e-5,
        );
        for (g, f) in ga.data.iter().zip(&fd) {
            assert!((g - f).abs() / (f.abs() + 1e-8) < 1e-6, "{g} vs {f}");
        }
    }

    #[test]
    fn relu_and_scale() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data, vec![0.0, 0.0, 2.0]);
        let y = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = tape.scale(y, 0.0);
        assert_eq!(tape.value(s).data, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn gelu_gradient_central_difference() {
        let x0 = 0.5;
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(x0).with_grad());
        let y = tape.gelu(x);
        let s = tape.sum_all(y);
        let grads = tape.backward(s).unwrap();
        let analytic = grads[x.0].as_ref().unwrap().data[0];
        let h = 1e-5;
        let fd = (gelu_val(x0 + h) - gelu_val(x0 - h)) / (2.0 * h);
        assert!((analytic - fd).abs() / fd.abs() < 1e-6);
    }

    #[test]
    fn l2_normalize_rows_cases() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap());
        let y = tape.l2_normalize_rows(x).unwrap();
        assert!((tape.value(y).data[0] - 0.6).abs() < 1e-15);
        assert!((tape.value(y).data[1] - 0.8).abs() < 1e-15);

        // unit row is a fixed point
        let u = tape.leaf(Tensor::new(vec![1, 2], vec![0.6, 0.8]).unwrap());
        let yu = tape.l2_normalize_rows(u).unwrap();
        assert!((tape.value(yu).data[0] - 0.6).abs() < 1e-12);

        let z = tape.leaf(Tensor::zeros(vec![1, 2]));
        assert!(tape.l2_normalize_rows(z).is_err());
    }

    #[test]
    fn l2_normalize_random_rows_unit_norm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![4, 3], data).unwrap());
        let y = tape.l2_normalize_rows(x).unwrap();
        for i in 0..4 {
            let n: f64 = tape.value(y).row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_layer_mlp_end_to_end_gradcheck() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let w1: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w2: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let eval = |w1d: &[f64]| {
            let mut t = Tape::new();
            let xi = t.leaf(Tensor::new(vec![2, 2], x.clone()).unwrap());
            let w1n = t.leaf(Tensor::new(vec![2, 3], w1d.to_vec()).unwrap());
            let w2n = t.leaf(Tensor::new(vec![3, 2], w2.clone()).unwrap());
            let h = t.matmul(xi, w1n).unwrap();
            let a = t.gelu(h);
            let o = t.matmul(a, w2n).unwrap();
            let s = t.sum_all(o);
            (t, w1n, s)
        };

        let (t, w1n, s) = eval(&w1);
        let grads = t.backward(s).unwrap();
        let analytic = grads[w1n.0].as_ref().unwrap().data.clone();
        let fd = finite_diff(
            |w| {
                let (t, _, s) = eval(w);
                t.value(s).data[0]
            },
            &w1,
            1e-5,
        );
        for (a, f) in analytic.iter().zip(&fd) {
            assert!((a - f).abs() / (f.abs() + 1e-8) < 1e-4);
        }
    }

    #[test]
    fn logsumexp_stable_at_large_values() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![1, 2], vec![1000.0, 1000.0]).unwrap());
        let y = tape.row_logsumexp(x).unwrap();
        assert!((tape.value(y).data[0] - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }
}
