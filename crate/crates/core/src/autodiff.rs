//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! Operations are recorded on a [`Tape`] during the forward pass and replayed
//! in reverse by [`Tape::backward`] to accumulate exact gradients of a scalar
//! root into every differentiable leaf. The primitive set is deliberately
//! small: matrix multiply, element-wise add/mul, ReLU, bias broadcast,
//! reshape, column concatenation, row-wise log-sum-exp and softmax, batch
//! mean, and scalar scaling — enough to express feedforward classifiers and
//! every loss in this crate.
//!
//! A tape and its tensors are confined to a single thread; independent tapes
//! may run on independent threads.

use crate::error::{Result, SilaError};

/// Identity of a tensor within one [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dense row-major tensor recorded on a tape.
///
/// `grad` is allocated only for tensors that participate in differentiation
/// (leaves created with [`Tape::leaf`] and everything computed from them).
/// Gradients accumulate across [`Tape::backward`] calls until zeroed.
#[derive(Clone, Debug)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub node_id: NodeId,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// One recorded primitive with enough context to run its backward rule.
#[derive(Debug)]
enum Record {
    /// out = a @ b, a: [m,k], b: [k,n]
    MatMul { a: NodeId, b: NodeId, out: NodeId },
    Add { a: NodeId, b: NodeId, out: NodeId },
    Mul { a: NodeId, b: NodeId, out: NodeId },
    Relu { x: NodeId, out: NodeId },
    /// out[i,j] = x[i,j] + bias[j]
    AddBias { x: NodeId, bias: NodeId, out: NodeId },
    Reshape { x: NodeId, out: NodeId },
    /// 2-d inputs concatenated along the column (class) axis.
    ConcatCols { parts: Vec<NodeId>, out: NodeId },
    /// out[i] = log sum_j exp(x[i,j]), stable shifted form.
    LogSumExpRows { x: NodeId, out: NodeId },
    SoftmaxRows { x: NodeId, out: NodeId },
    /// Mean over the leading (batch) axis; shape [b, ..] -> [..].
    MeanBatch { x: NodeId, out: NodeId },
    Scale { x: NodeId, factor: f64, out: NodeId },
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SilaError::NonFinite {
            context: context.to_string(),
        })
    }
}

/// Record of forward operations over tensors, replayable in reverse.
///
/// The op list is topological by construction: an operation's inputs are
/// always recorded before the operation itself.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    records: Vec<Record>,
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

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        let grad = requires_grad.then(|| vec![0.0; values.len()]);
        self.nodes.push(Tensor {
            shape,
            values,
            grad,
            node_id: id,
        });
        id
    }

    fn validated(shape: &[usize], values: &[f64], context: &str) -> Result<()> {
        if shape.contains(&0) {
            return Err(SilaError::InvalidSpec(format!(
                "{context}: zero-sized dimension in {shape:?}"
            )));
        }
        if numel_of(shape) != values.len() {
            return Err(SilaError::InvalidSpec(format!(
                "{context}: shape {shape:?} does not match {} values",
                values.len()
            )));
        }
        check_finite(values, context)
    }

    /// Differentiable leaf: gradients of backward roots accumulate here.
    pub fn leaf(&mut self, shape: &[usize], values: Vec<f64>) -> Result<NodeId> {
        Self::validated(shape, &values, "leaf")?;
        Ok(self.push(shape.to_vec(), values, true))
    }

    /// Non-differentiable input (data batches, masks, detached logits).
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<NodeId> {
        Self::validated(shape, &values, "constant")?;
        Ok(self.push(shape.to_vec(), values, false))
    }

    pub fn scalar_constant(&mut self, value: f64) -> Result<NodeId> {
        self.constant(&[], vec![value])
    }

    pub fn tensor(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0]
    }

    pub fn values(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let t = &self.nodes[id.0];
        if t.numel() != 1 {
            return Err(SilaError::BackwardRoot { numel: t.numel() });
        }
        Ok(t.values[0])
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].grad.is_some()
    }

    fn rank2(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.len() != 2 {
            return Err(SilaError::ShapeMismatch {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            });
        }
        Ok((s[0], s[1]))
    }

    fn record_output(
        &mut self,
        shape: Vec<usize>,
        values: Vec<f64>,
        requires: bool,
        op: &'static str,
    ) -> Result<NodeId> {
        check_finite(&values, op)?;
        Ok(self.push(shape, values, requires))
    }

    // ── forward primitives ──────────────────────────────────────────

    /// Matrix product of two 2-d tensors.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.rank2(a, "matmul")?;
        let (k2, n) = self.rank2(b, "matmul")?;
        if k != k2 {
            return Err(SilaError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let av = self.values(a);
        let bv = self.values(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let requires = self.requires(a) || self.requires(b);
        let id = self.record_output(vec![m, n], out, requires, "matmul")?;
        self.records.push(Record::MatMul { a, b, out: id });
        Ok(id)
    }

    /// Element-wise sum of two same-shaped tensors.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(SilaError::ShapeMismatch {
                op: "add",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x + y)
            .collect();
        let requires = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        let id = self.record_output(shape, out, requires, "add")?;
        self.records.push(Record::Add { a, b, out: id });
        Ok(id)
    }

    /// Element-wise (Hadamard) product of two same-shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(SilaError::ShapeMismatch {
                op: "mul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let out: Vec<f64> = self
            .values(a)
            .iter()
            .zip(self.values(b))
            .map(|(x, y)| x * y)
            .collect();
        let requires = self.requires(a) || self.requires(b);
        let shape = self.shape(a).to_vec();
        let id = self.record_output(shape, out, requires, "mul")?;
        self.records.push(Record::Mul { a, b, out: id });
        Ok(id)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<f64> = self.values(x).iter().map(|v| v.max(0.0)).collect();
        let requires = self.requires(x);
        let shape = self.shape(x).to_vec();
        let id = self.record_output(shape, out, requires, "relu")?;
        self.records.push(Record::Relu { x, out: id });
        Ok(id)
    }

    /// Broadcast a 1-d bias over every row of a 2-d tensor.
    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.rank2(x, "add_bias")?;
        if self.shape(bias) != [cols] {
            return Err(SilaError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let xv = self.values(x);
        let bv = self.values(bias);
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                out.push(xv[i * cols + j] + bv[j]);
            }
        }
        let requires = self.requires(x) || self.requires(bias);
        let id = self.record_output(vec![rows, cols], out, requires, "add_bias")?;
        self.records.push(Record::AddBias { x, bias, out: id });
        Ok(id)
    }

    /// Same data, new shape (element count must match).
    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        if numel_of(shape) != self.nodes[x.0].numel() {
            return Err(SilaError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let out = self.values(x).to_vec();
        let requires = self.requires(x);
        let id = self.record_output(shape.to_vec(), out, requires, "reshape")?;
        self.records.push(Record::Reshape { x, out: id });
        Ok(id)
    }

    /// Concatenate 2-d tensors along the column (class) axis.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(SilaError::InvalidSpec(
                "concat_cols: no input tensors".into(),
            ));
        }
        let (rows, _) = self.rank2(parts[0], "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.rank2(p, "concat_cols")?;
            if r != rows {
                return Err(SilaError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]).to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.values(p)[i * w..(i + 1) * w]);
            }
        }
        let requires = parts.iter().any(|&p| self.requires(p));
        let id = self.record_output(vec![rows, total], out, requires, "concat_cols")?;
        self.records.push(Record::ConcatCols {
            parts: parts.to_vec(),
            out: id,
        });
        Ok(id)
    }

    /// Row-wise log-sum-exp in the shifted (max-subtracted) form.
    pub fn log_sum_exp_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.rank2(x, "log_sum_exp")?;
        let xv = self.values(x);
        let mut out = Vec::with_capacity(rows);
        for i in 0..rows {
            let row = &xv[i * cols..(i + 1) * cols];
            out.push(log_sum_exp(row));
        }
        let requires = self.requires(x);
        let id = self.record_output(vec![rows], out, requires, "log_sum_exp")?;
        self.records.push(Record::LogSumExpRows { x, out: id });
        Ok(id)
    }

    /// Row-wise softmax; each output row sums to 1.
    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = self.rank2(x, "softmax")?;
        let xv = self.values(x);
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let row = &xv[i * cols..(i + 1) * cols];
            out.extend(softmax(row));
        }
        let requires = self.requires(x);
        let id = self.record_output(vec![rows, cols], out, requires, "softmax")?;
        self.records.push(Record::SoftmaxRows { x, out: id });
        Ok(id)
    }

    /// Mean over the leading (batch) axis: shape `[b, rest..]` -> `[rest..]`.
    /// A 1-d input reduces to a scalar.
    pub fn mean_batch(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() {
            return Err(SilaError::ShapeMismatch {
                op: "mean_batch",
                lhs: shape,
                rhs: vec![],
            });
        }
        let batch = shape[0];
        let inner: usize = shape[1..].iter().product();
        let xv = self.values(x);
        let mut out = vec![0.0; inner];
        for i in 0..batch {
            for j in 0..inner {
                out[j] += xv[i * inner + j];
            }
        }
        for v in &mut out {
            *v /= batch as f64;
        }
        let requires = self.requires(x);
        let id = self.record_output(shape[1..].to_vec(), out, requires, "mean_batch")?;
        self.records.push(Record::MeanBatch { x, out: id });
        Ok(id)
    }

    /// Multiply every element by a fixed scalar.
    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(SilaError::NonFinite {
                context: "scale factor".into(),
            });
        }
        let out: Vec<f64> = self.values(x).iter().map(|v| v * factor).collect();
        let requires = self.requires(x);
        let shape = self.shape(x).to_vec();
        let id = self.record_output(shape, out, requires, "scale")?;
        self.records.push(Record::Scale {
            x,
            factor,
            out: id,
        });
        Ok(id)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Reverse-mode sweep from a scalar root.
    ///
    /// Adds `d root / d tensor` into the `grad` of every differentiable
    /// tensor on the tape. Repeated calls accumulate until grads are zeroed.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_t = &self.nodes[root.0];
        if root_t.numel() != 1 {
            return Err(SilaError::BackwardRoot {
                numel: root_t.numel(),
            });
        }
        // Fresh adjoint buffers per call keep each sweep independent of the
        // accumulated grads.
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(vec![1.0]);

        for rec in self.records.iter().rev() {
            self.propagate(rec, &mut adj);
        }

        for (node, a) in self.nodes.iter_mut().zip(&adj) {
            if let (Some(grad), Some(adjoint)) = (node.grad.as_mut(), a) {
                for (g, d) in grad.iter_mut().zip(adjoint) {
                    *g += d;
                }
                check_finite(grad, "gradient after backward")?;
            }
        }
        Ok(())
    }

    fn propagate(&self, rec: &Record, adj: &mut [Option<Vec<f64>>]) {
        fn bump(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut Vec<f64> {
            adj[id.0].get_or_insert_with(|| vec![0.0; len])
        }
        let out_id = match rec {
            Record::MatMul { out, .. }
            | Record::Add { out, .. }
            | Record::Mul { out, .. }
            | Record::Relu { out, .. }
            | Record::AddBias { out, .. }
            | Record::Reshape { out, .. }
            | Record::ConcatCols { out, .. }
            | Record::LogSumExpRows { out, .. }
            | Record::SoftmaxRows { out, .. }
            | Record::MeanBatch { out, .. }
            | Record::Scale { out, .. } => *out,
        };
        let Some(dout) = adj[out_id.0].clone() else {
            return;
        };
        match *rec {
            Record::MatMul { a, b, out: _ } => {
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if self.requires(a) {
                    let bv = self.values(b);
                    let da = bump(adj, a, m * k);
                    for i in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += dout[i * n + j] * bv[p * n + j];
                            }
                            da[i * k + p] += s;
                        }
                    }
                }
                if self.requires(b) {
                    let av = self.values(a);
                    let db = bump(adj, b, k * n);
                    for p in 0..k {
                        for i in 0..m {
                            let aip = av[i * k + p];
                            for j in 0..n {
                                db[p * n + j] += aip * dout[i * n + j];
                            }
                        }
                    }
                }
            }
            Record::Add { a, b, out: _ } => {
                for id in [a, b] {
                    if self.requires(id) {
                        let d = bump(adj, id, dout.len());
                        for (g, v) in d.iter_mut().zip(&dout) {
                            *g += v;
                        }
                    }
                }
            }
            Record::Mul { a, b, out: _ } => {
                if self.requires(a) {
                    let bv = self.values(b).to_vec();
                    let da = bump(adj, a, dout.len());
                    for ((g, v), w) in da.iter_mut().zip(&dout).zip(&bv) {
                        *g += v * w;
                    }
                }
                if self.requires(b) {
                    let av = self.values(a).to_vec();
                    let db = bump(adj, b, dout.len());
                    for ((g, v), w) in db.iter_mut().zip(&dout).zip(&av) {
                        *g += v * w;
                    }
                }
            }
            Record::Relu { x, out: _ } => {
                if self.requires(x) {
                    let xv = self.values(x).to_vec();
                    let dx = bump(adj, x, dout.len());
                    for ((g, v), inp) in dx.iter_mut().zip(&dout).zip(&xv) {
                        if *inp > 0.0 {
                            *g += v;
                        }
                    }
                }
            }
            Record::AddBias { x, bias, out: _ } => {
                let (rows, cols) = (self.shape(x)[0], self.shape(x)[1]);
                if self.requires(x) {
                    let dx = bump(adj, x, rows * cols);
                    for (g, v) in dx.iter_mut().zip(&dout) {
                        *g += v;
                    }
                }
                if self.requires(bias) {
                    let db = bump(adj, bias, cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            db[j] += dout[i * cols + j];
                        }
                    }
                }
            }
            Record::Reshape { x, out: _ } => {
                if self.requires(x) {
                    let dx = bump(adj, x, dout.len());
                    for (g, v) in dx.iter_mut().zip(&dout) {
                        *g += v;
                    }
                }
            }
            Record::ConcatCols { ref parts, out } => {
                let rows = self.shape(out)[0];
                let total = self.shape(out)[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.requires(p) {
                        let dp = bump(adj, p, rows * w);
                        for i in 0..rows {
                            for j in 0..w {
                                dp[i * w + j] += dout[i * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Record::LogSumExpRows { x, out } => {
                if self.requires(x) {
                    let (rows, cols) = (self.shape(x)[0], self.shape(x)[1]);
                    let xv = self.values(x).to_vec();
                    let lse = self.values(out).to_vec();
                    let dx = bump(adj, x, rows * cols);
                    for i in 0..rows {
                        for j in 0..cols {
                            dx[i * cols + j] += dout[i] * (xv[i * cols + j] - lse[i]).exp();
                        }
                    }
                }
            }
            Record::SoftmaxRows { x, out } => {
                if self.requires(x) {
                    let (rows, cols) = (self.shape(x)[0], self.shape(x)[1]);
                    let y = self.values(out).to_vec();
                    let dx = bump(adj, x, rows * cols);
                    for i in 0..rows {
                        let mut dot = 0.0;
                        for j in 0..cols {
                            dot += dout[i * cols + j] * y[i * cols + j];
                        }
                        for j in 0..cols {
                            dx[i * cols + j] += y[i * cols + j] * (dout[i * cols + j] - dot);
                        }
                    }
                }
            }
            Record::MeanBatch { x, out: _ } => {
                if self.requires(x) {
                    let shape = self.shape(x);
                    let batch = shape[0];
                    let inner: usize = shape[1..].iter().product();
                    let inv = 1.0 / batch as f64;
                    let dx = bump(adj, x, batch * inner);
                    for i in 0..batch {
                        for j in 0..inner {
                            dx[i * inner + j] += dout[j] * inv;
                        }
                    }
                }
            }
            Record::Scale { x, factor, out: _ } => {
                if self.requires(x) {
                    let dx = bump(adj, x, dout.len());
                    for (g, v) in dx.iter_mut().zip(&dout) {
                        *g += v * factor;
                    }
                }
            }
        }
    }

    /// Zero the accumulated gradient of every tensor on the tape.
    pub fn zero_all_grads(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.fill(0.0);
            }
        }
    }

    /// Zero the gradients of the given tensors only.
    pub fn zero_grads(&mut self, ids: &[NodeId]) {
        for &id in ids {
            if let Some(g) = self.nodes[id.0].grad.as_mut() {
                g.fill(0.0);
            }
        }
    }
}

/// Stable log-sum-exp of a slice (max-subtraction form).
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
    m + sum.ln()
}

/// Stable softmax of a slice.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lse_of_uniform_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 2], vec![0.0, 0.0]).unwrap();
        let l = tape.log_sum_exp_rows(x).unwrap();
        assert_abs_diff_eq!(tape.values(l)[0], 2.0_f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn lse_does_not_overflow_on_large_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 2], vec![1000.0, 1000.0]).unwrap();
        let l = tape.log_sum_exp_rows(x).unwrap();
        assert_abs_diff_eq!(tape.values(l)[0], 1000.0 + 2.0_f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn concat_along_class_axis() {
        let mut tape = Tape::new();
        let a = tape.constant(&[1, 2], vec![1.0, 0.0]).unwrap();
        let b = tape.constant(&[1, 2], vec![0.0, 1.0]).unwrap();
        let c = tape.concat_cols(&[a, b]).unwrap();
        assert_eq!(tape.shape(c), &[1, 4]);
        assert_eq!(tape.values(c), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        // root = sum(w ⊙ w) with a single element behaves as mean
        let mut tape = Tape::new();
        let w = tape.leaf(&[1], vec![3.0]).unwrap();
        let sq = tape.mul(w, w).unwrap();
        let root = tape.mean_batch(sq).unwrap();
        tape.backward(root).unwrap();
        assert_abs_diff_eq!(tape.grad(w).unwrap()[0], 6.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_root_leaves_leaf_grads_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(&[2], vec![1.0, 2.0]).unwrap();
        let c = tape.constant(&[3], vec![5.0, 5.0, 5.0]).unwrap();
        let root = tape.mean_batch(c).unwrap();
        tape.backward(root).unwrap();
        assert_eq!(tape.grad(w).unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let w = tape.leaf(&[1], vec![3.0]).unwrap();
        let sq = tape.mul(w, w).unwrap();
        let root = tape.mean_batch(sq).unwrap();
        tape.backward(root).unwrap();
        tape.backward(root).unwrap();
        assert_abs_diff_eq!(tape.grad(w).unwrap()[0], 12.0, epsilon = 1e-15);
        tape.zero_all_grads();
        assert_eq!(tape.grad(w).unwrap(), &[0.0]);
        // idempotent
        tape.zero_all_grads();
        assert_eq!(tape.grad(w).unwrap(), &[0.0]);
    }

    #[test]
    fn selective_zeroing_leaves_other_grads() {
        let mut tape = Tape::new();
        let w = tape.leaf(&[1], vec![2.0]).unwrap();
        let v = tape.leaf(&[1], vec![4.0]).unwrap();
        let prod = tape.mul(w, v).unwrap();
        let root = tape.mean_batch(prod).unwrap();
        tape.backward(root).unwrap();
        tape.zero_grads(&[w]);
        assert_eq!(tape.grad(w).unwrap(), &[0.0]);
        assert_eq!(tape.grad(v).unwrap(), &[2.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::new();
        let w = tape.leaf(&[2], vec![1.0, 2.0]).unwrap();
        let err = tape.backward(w).unwrap_err();
        assert!(matches!(err, SilaError::BackwardRoot { numel: 2 }));
    }

    #[test]
    fn shape_mismatch_names_primitive_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul"), "{msg}");
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut tape = Tape::new();
        let err = tape.constant(&[1], vec![f64::NAN]).unwrap_err();
        assert!(matches!(err, SilaError::NonFinite { .. }));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape
            .constant(&[2, 3], vec![1.0, -2.0, 0.5, 100.0, 100.0, -100.0])
            .unwrap();
        let s = tape.softmax_rows(x).unwrap();
        for i in 0..2 {
            let row = &tape.values(s)[i * 3..(i + 1) * 3];
            let sum: f64 = row.iter().sum();
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
            assert!(row.iter().all(|&p| p > 0.0 && p <= 1.0));
        }
    }

    #[test]
    fn mean_batch_of_matrix_reduces_leading_axis() {
        let mut tape = Tape::new();
        let x = tape
            .constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0])
            .unwrap();
        let m = tape.mean_batch(x).unwrap();
        assert_eq!(tape.shape(m), &[2]);
        assert_eq!(tape.values(m), &[2.0, 3.0]);
    }
}
