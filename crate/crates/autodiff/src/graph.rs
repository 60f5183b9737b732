//! Tape of tensor operations with reverse-mode differentiation.
//!
//! Nodes are appended in creation order, so the tape is already a topological
//! order: `backward` walks it once from the end and every node is visited
//! exactly once. Gradients reaching a node from several consumers are summed.

use crate::error::{Result, TensorError};
use crate::kernels::gemm;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a @ b^T`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Transpose(Var),
    Softmax { x: Var, axis: usize },
    CausalSoftmax(Var),
    RmsNorm { x: Var, gain: Var, eps: f64 },
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    Gather { table: Var, ids: Vec<usize> },
    SliceCols { x: Var, start: usize },
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    Sum(Var),
    WeightedNll {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape.
///
/// With gradients disabled the tape still stores values (ops need them as
/// inputs) but `backward` refuses to run.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        Tensor::new(self.shapes[v.0].clone(), g.clone()).ok()
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Tape that records values only.
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite()?;
        let requires_grad = self.grad_enabled;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        value.ensure_finite()?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let requires_grad = requires_grad && self.grad_enabled;
        // Inputs are no longer needed for backward once gradients are off.
        let op = if self.grad_enabled { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes[v.0].value.dims2()
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            lhs: self.value(a).shape().to_vec(),
            rhs: self.value(b).shape().to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(self.mismatch("matmul", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `a @ b^T` with `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (n, k2) = self.dims2(b)?;
        if k != k2 {
            return Err(self.mismatch("matmul_nt", a, b));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            1.0,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (1, k as isize),
            0.0,
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulNt(a, b), rg))
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(self.mismatch(name, a, b));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(TensorError::NonFinite);
        }
        let value = self.value(a).scale(c);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Scale(a, c), rg))
    }

    /// Adds the vector `row` (length `c`) to every row of `x` (`r×c`).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if self.value(row).numel() != c {
            return Err(self.mismatch("add_row", x, row));
        }
        let b = self.value(row).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += b[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x, row]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(x, row), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    /// Softmax along `axis` of a 1-D or 2-D tensor, stabilized by max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = softmax_value(self.value(x), axis)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Softmax { x, axis }, rg))
    }

    /// Row softmax of a square score matrix where row `t` only sees columns `<= t`.
    pub fn causal_softmax(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if r != c {
            return Err(TensorError::InvalidArgument(format!(
                "causal softmax needs a square matrix, got {r}x{c}"
            )));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..i * c + i + 1];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for j in 0..=i {
                let e = (row[j] - max).exp();
                out[i * c + j] = e;
                z += e;
            }
            for j in 0..=i {
                out[i * c + j] /= z;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![r, c], out)?, Op::CausalSoftmax(x), rg))
    }

    /// Row-wise RMS normalization with a learned gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if self.value(gain).numel() != c {
            return Err(self.mismatch("rms_norm", x, gain));
        }
        let src = self.value(x).data();
        let g = self.value(gain).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let rms = (row.iter().map(|v| v * v).sum::<f64>() / c as f64 + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = row[j] / rms * g[j];
            }
        }
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(&[x, gain]);
        Ok(self.push(Tensor::new(shape, out)?, Op::RmsNorm { x, gain, eps }, rg))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Gelu(x), gelu)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let src = self.value(x);
        let value = Tensor::new(src.shape().to_vec(), src.data().iter().map(|v| f(*v)).collect())?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, op, rg))
    }

    /// Selects rows of `table` (`n×d`) by index, producing `ids.len()×d`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (n, d) = self.dims2(table)?;
        if ids.is_empty() {
            return Err(TensorError::InvalidArgument("gather with no indices".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= n) {
            return Err(TensorError::InvalidArgument(format!(
                "gather index {bad} out of range for {n} rows"
            )));
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::new(vec![ids.len(), d], out)?,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        if len == 0 || start + len > c {
            return Err(TensorError::InvalidArgument(format!(
                "column slice {start}..{} out of range for {c} columns",
                start + len
            )));
        }
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![r, len], out)?, Op::SliceCols { x, start }, rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::InvalidArgument("concat of zero tensors".into()))?;
        let (r, _) = self.dims2(first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pr != r {
                return Err(self.mismatch("concat_cols", first, p));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; r * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for i in 0..r {
                out[i * total + offset..i * total + offset + w].copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![r, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Column means of an `r×c` tensor, giving `1×c`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x)?;
        let src = self.value(x).data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += src[i * c + j];
            }
        }
        out.iter_mut().for_each(|v| *v /= r as f64);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![1, c], out)?, Op::MeanRows(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// `Σ_t weights[t] · (−log softmax(logits[t])[targets[t]])` as a scalar.
    pub fn weighted_nll(&mut self, logits: Var, targets: &[usize], weights: &[f64]) -> Result<Var> {
        let (t, v) = self.dims2(logits)?;
        if targets.len() != t || weights.len() != t {
            return Err(TensorError::InvalidArgument(format!(
                "weighted_nll: {t} rows but {} targets and {} weights",
                targets.len(),
                weights.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&y| y >= v) {
            return Err(TensorError::InvalidArgument(format!(
                "target {bad} outside vocabulary of {v}"
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(TensorError::NonFinite);
        }
        let src = self.value(logits).data();
        let mut loss = 0.0;
        for i in 0..t {
            if weights[i] == 0.0 {
                continue;
            }
            let lp = log_softmax_row(&src[i * v..(i + 1) * v]);
            loss -= weights[i] * lp[targets[i]];
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::WeightedNll {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        ))
    }

    /// Mean token cross-entropy over positions where `mask` is true.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], mask: &[bool]) -> Result<Var> {
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TensorError::InvalidArgument(
                "cross_entropy: every position is masked".into(),
            ));
        }
        let weights: Vec<f64> = mask
            .iter()
            .map(|&m| if m { 1.0 / count as f64 } else { 0.0 })
            .collect();
        self.weighted_nll(logits, targets, &weights)
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.grad_enabled {
            return Err(TensorError::InvalidArgument(
                "backward on an inference-only graph".into(),
            ));
        }
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        lv.ensure_finite()?;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Only nodes that need gradients keep them.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let acc = |v: Var, delta: &[f64], grads: &mut [Option<Vec<f64>>]| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta.to_vec()),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().1;
                if self.requires_grad(*a) {
                    // dA = dC @ B^T
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g, (n as isize, 1), self.value(*b).data(), (1, n as isize), 0.0, &mut da);
                    acc(*a, &da, grads);
                }
                if self.requires_grad(*b) {
                    // dB = A^T @ dC
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, 1.0, self.value(*a).data(), (1, k as isize), g, (n as isize, 1), 0.0, &mut db);
                    acc(*b, &db, grads);
                }
            }
            Op::MatMulNt(a, b) => {
                let (m, k) = self.value(*a).dims2().unwrap();
                let n = self.value(*b).dims2().unwrap().0;
                if self.requires_grad(*a) {
                    // dA = dC @ B
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, 1.0, g, (n as isize, 1), self.value(*b).data(), (k as isize, 1), 0.0, &mut da);
                    acc(*a, &da, grads);
                }
                if self.requires_grad(*b) {
                    // dB = dC^T @ A
                    let mut db = vec![0.0; n * k];
                    gemm(n, m, k, 1.0, g, (1, n as isize), self.value(*a).data(), (k as isize, 1), 0.0, &mut db);
                    acc(*b, &db, grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g, grads);
                acc(*b, g, grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g, grads);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                acc(*b, &neg, grads);
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let da: Vec<f64> = g.iter().zip(bv).map(|(g, b)| g * b).collect();
                let db: Vec<f64> = g.iter().zip(av).map(|(g, a)| g * a).collect();
                acc(*a, &da, grads);
                acc(*b, &db, grads);
            }
            Op::Scale(a, c) => {
                let da: Vec<f64> = g.iter().map(|v| v * c).collect();
                acc(*a, &da, grads);
            }
            Op::AddRow(x, row) => {
                acc(*x, g, grads);
                let c = self.value(*row).numel();
                let mut db = vec![0.0; c];
                for chunk in g.chunks(c) {
                    db.iter_mut().zip(chunk).for_each(|(d, v)| *d += v);
                }
                acc(*row, &db, grads);
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                acc(*x, &dx, grads);
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let (r, c) = y.dims2().unwrap();
                let yd = y.data();
                let mut dx = vec![0.0; r * c];
                let (lanes, len, lane_stride, elem_stride) = if *axis == 1 || y.rank() == 1 {
                    (r, c, c, 1)
                } else {
                    (c, r, 1, c)
                };
                for l in 0..lanes {
                    let base = l * lane_stride;
                    let dot: f64 = (0..len)
                        .map(|e| g[base + e * elem_stride] * yd[base + e * elem_stride])
                        .sum();
                    for e in 0..len {
                        let p = base + e * elem_stride;
                        dx[p] = yd[p] * (g[p] - dot);
                    }
                }
                acc(*x, &dx, grads);
            }
            Op::CausalSoftmax(x) => {
                let yd = node.value.data();
                let (r, c) = node.value.dims2().unwrap();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let row = i * c;
                    let dot: f64 = (0..=i).map(|j| g[row + j] * yd[row + j]).sum();
                    for j in 0..=i {
                        dx[row + j] = yd[row + j] * (g[row + j] - dot);
                    }
                }
                acc(*x, &dx, grads);
            }
            Op::RmsNorm { x, gain, eps } => {
                let xv = self.value(*x).data();
                let gv = self.value(*gain).data();
                let (r, c) = self.value(*x).dims2().unwrap();
                let mut dx = vec![0.0; r * c];
                let mut dgain = vec![0.0; c];
                for i in 0..r {
                    let row = &xv[i * c..(i + 1) * c];
                    let gr = &g[i * c..(i + 1) * c];
                    let rms = (row.iter().map(|v| v * v).sum::<f64>() / c as f64 + eps).sqrt();
                    let mut dot = 0.0;
                    for j in 0..c {
                        let xhat = row[j] / rms;
                        dgain[j] += gr[j] * xhat;
                        dot += gr[j] * gv[j] * xhat;
                    }
                    let mean_dot = dot / c as f64;
                    for j in 0..c {
                        let xhat = row[j] / rms;
                        dx[i * c + j] = (gr[j] * gv[j] - xhat * mean_dot) / rms;
                    }
                }
                acc(*x, &dx, grads);
                acc(*gain, &dgain, grads);
            }
            Op::Gelu(x) => {
                let dx: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(v, g)| g * gelu_grad(*v))
                    .collect();
                acc(*x, &dx, grads);
            }
            Op::Relu(x) => {
                let dx: Vec<f64> = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(v, g)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                acc(*x, &dx, grads);
            }
            Op::Tanh(x) => {
                let dx: Vec<f64> = node.value.data().iter().zip(g).map(|(y, g)| g * (1.0 - y * y)).collect();
                acc(*x, &dx, grads);
            }
            Op::Gather { table, ids } => {
                let (n, d) = self.value(*table).dims2().unwrap();
                let mut dt = vec![0.0; n * d];
                for (row, &i) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += g[row * d + j];
                    }
                }
                acc(*table, &dt, grads);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let len = node.value.dims2().unwrap().1;
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len].copy_from_slice(&g[i * len..(i + 1) * len]);
                }
                acc(*x, &dx, grads);
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2().unwrap();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().unwrap().1;
                    let mut dp = vec![0.0; r * w];
                    for i in 0..r {
                        dp[i * w..(i + 1) * w].copy_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    acc(p, &dp, grads);
                    offset += w;
                }
            }
            Op::MeanRows(x) => {
                let (r, c) = self.value(*x).dims2().unwrap();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j] / r as f64;
                    }
                }
                acc(*x, &dx, grads);
            }
            Op::Sum(x) => {
                let dx = vec![g[0]; self.value(*x).numel()];
                acc(*x, &dx, grads);
            }
            Op::WeightedNll {
                logits,
                targets,
                weights,
            } => {
                let (t, v) = self.value(*logits).dims2().unwrap();
                let src = self.value(*logits).data();
                let mut dx = vec![0.0; t * v];
                for i in 0..t {
                    let w = weights[i] * g[0];
                    if w == 0.0 {
                        continue;
                    }
                    let lp = log_softmax_row(&src[i * v..(i + 1) * v]);
                    for j in 0..v {
                        dx[i * v + j] = w * lp[j].exp();
                    }
                    dx[i * v + targets[i]] -= w;
                }
                acc(*logits, &dx, grads);
            }
        }
    }
}

fn softmax_value(x: &Tensor, axis: usize) -> Result<Tensor> {
    let rank = x.rank();
    if rank > 2 || axis >= rank {
        return Err(TensorError::InvalidArgument(format!(
            "softmax axis {axis} invalid for shape {:?}",
            x.shape()
        )));
    }
    let (r, c) = x.dims2()?;
    let src = x.data();
    let mut out = vec![0.0; r * c];
    let (lanes, len, lane_stride, elem_stride) = if rank == 1 || axis == 1 {
        (r, c, c, 1)
    } else {
        (c, r, 1, c)
    };
    for l in 0..lanes {
        let base = l * lane_stride;
        let max = (0..len)
            .map(|e| src[base + e * elem_stride])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for e in 0..len {
            let p = base + e * elem_stride;
            out[p] = (src[p] - max).exp();
            z += out[p];
        }
        for e in 0..len {
            out[base + e * elem_stride] /= z;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_small_cases() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::eye(2)).unwrap();
        let b = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c), g.value(b));

        let x = g.constant(t(&[1, 1], &[2.0])).unwrap();
        let y = g.constant(t(&[1, 1], &[3.0])).unwrap();
        let z = g.matmul(x, y).unwrap();
        assert_eq!(g.value(z).data(), &[6.0]);

        let bad = g.constant(t(&[3, 1], &[1.0; 3])).unwrap();
        assert!(matches!(g.matmul(a, bad), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_closed_forms() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, 0.0, 0.0])).unwrap();
        let s = g.softmax(x, 0).unwrap();
        for v in g.value(s).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let one = g.constant(t(&[1], &[42.0])).unwrap();
        let s1 = g.softmax(one, 0).unwrap();
        assert_eq!(g.value(s1).data(), &[1.0]);
        let x2 = g.constant(t(&[2], &[0.0, 2f64.ln()])).unwrap();
        let s2 = g.softmax(x2, 0).unwrap();
        assert!((g.value(s2).data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.value(s2).data()[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_axis_zero_sums_columns() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.5, 9.0])).unwrap();
        let s = g.softmax(x, 0).unwrap();
        let v = g.value(s);
        for j in 0..3 {
            assert!((v.get2(0, j) + v.get2(1, j) - 1.0).abs() < 1e-12);
        }
        assert!(g.softmax(x, 2).is_err());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let mut g = Graph::new();
        let uniform = g.constant(Tensor::zeros(&[1, 8])).unwrap();
        let l = g.cross_entropy(uniform, &[3], &[true]).unwrap();
        assert!((g.value(l).data()[0] - 8f64.ln()).abs() < 1e-12);

        // ln(1 + (V-1)e^-20): 2.1e-9 for V = 2.
        let p = g.constant(t(&[1, 2], &[0.0, 20.0])).unwrap();
        let l = g.cross_entropy(p, &[1], &[true]).unwrap();
        let expected = (1.0 + (-20f64).exp()).ln();
        assert!((g.value(l).data()[0] - expected).abs() < 1e-14);
        assert!(g.value(l).data()[0] < 1e-8);

        assert!(g.cross_entropy(p, &[2], &[false]).is_err());
    }

    #[test]
    fn masked_cross_entropy_matches_single_position() {
        let mut g = Graph::new();
        let data = [0.3, -1.0, 2.0, 0.5, 0.1, 0.9, -0.4, 1.5, 0.0];
        let logits = g.constant(t(&[3, 3], &data)).unwrap();
        let full = g.cross_entropy(logits, &[0, 2, 1], &[false, true, false]).unwrap();
        let row = g.constant(t(&[1, 3], &data[3..6])).unwrap();
        let single = g.cross_entropy(row, &[2], &[true]).unwrap();
        assert_eq!(g.value(full).data(), g.value(single).data());
    }

    #[test]
    fn backward_trivial_cases() {
        let mut g = Graph::new();
        let w = g.param(t(&[2, 2], &[1.0, -2.0, 0.5, 3.0])).unwrap();
        let s = g.sum(w).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[1.0; 4]);

        let mut g = Graph::new();
        let w = g.param(Tensor::scalar(3.0)).unwrap();
        let sq = g.mul(w, w).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[6.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(1.5)).unwrap();
        let y = g.add(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros(&[2])).unwrap();
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn rejects_non_finite_leaves() {
        let mut g = Graph::new();
        let bad = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
        assert_eq!(g.param(bad), Err(TensorError::NonFinite));
    }

    #[test]
    fn inference_graph_has_no_gradients() {
        let mut g = Graph::inference();
        let x = g.param(Tensor::scalar(1.0)).unwrap();
        let s = g.sum(x).unwrap();
        assert!(!g.requires_grad(x));
        assert!(g.backward(s).is_err());
    }
}
