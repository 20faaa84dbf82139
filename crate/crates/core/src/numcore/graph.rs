//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every operation in evaluation order, so the tape is a
//! topological order by construction and the backward sweep is a single
//! reverse pass. Parameter leaves carry the name of the parameter they were
//! read from; [`Graph::backward`] accumulates their gradients into the
//! [`ParameterStore`].

use super::{NumError, ParameterStore, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Clamp(Var, f64, f64),
    Log(Var),
    Sqrt(Var),
    Embedding(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    SqDist(Var, Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::SqDist(a, b) => vec![*a, *b],
            Op::ConcatRows(vs) | Op::ConcatCols(vs) => vs.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SliceRows(a, _)
            | Op::SliceCols(a, _)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Clamp(a, _, _)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Embedding(a, _)
            | Op::Pick(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::SumCols(a) => vec![*a],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    /// Whether any parameter leaf is upstream of this node.
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: std::collections::HashMap<String, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumError {
    NumError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<Var, NumError> {
        if !value.is_finite() {
            return Err(NumError::NonFinite { op: name });
        }
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Result<Var, NumError> {
        self.push(Op::Input, t, "input")
    }

    pub fn constant_scalar(&mut self, x: f64) -> Result<Var, NumError> {
        self.input(Tensor::scalar(x))
    }

    /// Reads a trainable parameter from the store.
    /// Leaf for a stored parameter; repeated reads of one name share a node.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<Var, NumError> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store
            .value(name)
            .ok_or_else(|| NumError::UnknownParameter(name.to_string()))?
            .clone();
        let v = self.push(Op::Param(name.to_string()), value, "param")?;
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), out, "matmul")
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(op, out, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip(a, b, "add", Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip(a, b, "sub", Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip(a, b, "mul", Op::Mul(a, b), |x, y| x * y)
    }

    /// `a` (m×n) plus the row vector `row` (1×n) on every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tr));
        }
        let mut out = ta.clone();
        let c = ta.cols();
        for chunk in out.data_mut().chunks_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        self.push(Op::AddRow(a, row), out, "add_row")
    }

    /// Scales row `i` of `a` (m×n) by `col[i]` (m×1).
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NumError> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(shape_err("mul_col", ta, tc));
        }
        let mut out = ta.clone();
        let c = ta.cols().max(1);
        for (chunk, &s) in out.data_mut().chunks_mut(c).zip(tc.data()) {
            for x in chunk.iter_mut() {
                *x *= s;
            }
        }
        self.push(Op::MulCol(a, col), out, "mul_col")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| x * s);
        self.push(Op::Scale(a, s), out, "scale")
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| x + s);
        self.push(Op::AddScalar(a), out, "add_scalar")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, NumError> {
        self.scale(a, -1.0)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = self.value(parts[0]);
        let cols = first.cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        self.push(Op::ConcatRows(parts.to_vec()), out, "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), t));
            }
            cols += t.cols();
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = &self.nodes[p.0].value;
            let pc = t.cols();
            for r in 0..rows {
                out.data_mut()[r * cols + offset..r * cols + offset + pc]
                    .copy_from_slice(t.row_slice(r));
            }
            offset += pc;
        }
        self.push(Op::ConcatCols(parts.to_vec()), out, "concat_cols")
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let t = self.value(a);
        if start + len > t.rows() || len == 0 {
            return Err(NumError::Shape {
                op: "slice_rows",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let c = t.cols();
        let out = Tensor::new(
            vec![len, c],
            t.data()[start * c..(start + len) * c].to_vec(),
        )?;
        self.push(Op::SliceRows(a, start), out, "slice_rows")
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let t = self.value(a);
        if start + len > t.cols() || len == 0 {
            return Err(NumError::Shape {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, len],
            });
        }
        let mut data = Vec::with_capacity(t.rows() * len);
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row_slice(r)[start..start + len]);
        }
        let out = Tensor::new(vec![t.rows(), len], data)?;
        self.push(Op::SliceCols(a, start), out, "slice_cols")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).transpose();
        self.push(Op::Transpose(a), out, "transpose")
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).softmax_rows();
        self.push(Op::SoftmaxRows(a), out, "softmax")
    }

    /// Row-wise log-softmax, computed without forming the probabilities.
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let mut out = self.value(a).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(Op::LogSoftmaxRows(a), out, "log_softmax")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(sigmoid);
        self.push(Op::Sigmoid(a), out, "sigmoid")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), out, "tanh")
    }

    /// `max(x, 0)` element-wise.
    pub fn relu(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), out, "relu")
    }

    /// Clips every entry to `[lo, hi]`; clipped entries pass no gradient.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumError> {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), out, "clamp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(f64::ln);
        self.push(Op::Log(a), out, "log")
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, NumError> {
        let out = self.value(a).map(f64::sqrt);
        self.push(Op::Sqrt(a), out, "sqrt")
    }

    /// Gathers rows of `table` at `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumError> {
        let t = self.value(table);
        let c = t.cols();
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= t.rows() {
                return Err(NumError::Shape {
                    op: "embedding",
                    left: t.shape().to_vec(),
                    right: vec![id],
                });
            }
            data.extend_from_slice(t.row_slice(id));
        }
        let out = Tensor::new(vec![ids.len(), c], data)?;
        self.push(Op::Embedding(table, ids.to_vec()), out, "embedding")
    }

    /// Picks `a[i, idx[i]]` for every row, producing an m×1 column.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumError> {
        let t = self.value(a);
        if idx.len() != t.rows() || idx.iter().any(|&j| j >= t.cols()) {
            return Err(NumError::Shape {
                op: "pick",
                left: t.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let data = idx.iter().enumerate().map(|(i, &j)| t.get(i, j)).collect();
        let out = Tensor::new(vec![idx.len(), 1], data)?;
        self.push(Op::Pick(a, idx.to_vec()), out, "pick")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumError> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(Op::Sum(a), out, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumError> {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(Op::Mean(a), out, "mean")
    }

    /// Mean over the row axis: m×n → 1×n.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumError> {
        let t = self.value(a);
        let (r, c) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(1, c);
        for i in 0..r {
            for (o, &x) in out.data_mut().iter_mut().zip(t.row_slice(i)) {
                *o += x;
            }
        }
        out.scale_in_place(1.0 / r as f64);
        self.push(Op::MeanRows(a), out, "mean_rows")
    }

    /// Sum over the column axis: m×n → m×1.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, NumError> {
        let t = self.value(a);
        let data = (0..t.rows()).map(|i| t.row_slice(i).iter().sum()).collect();
        let out = Tensor::new(vec![t.rows(), 1], data)?;
        self.push(Op::SumCols(a), out, "sum_cols")
    }

    /// Squared Euclidean distance between two equally shaped tensors.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(shape_err("sq_dist", ta, tb));
        }
        let d: f64 = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        self.push(Op::SqDist(a, b), Tensor::scalar(d), "sq_dist")
    }

    /// Reverse sweep from a scalar root; parameter gradients are added to
    /// the store's accumulators.
    pub fn backward(&self, root: Var, store: &mut ParameterStore) -> Result<(), NumError> {
        let grads = self.gradients(root)?;
        for (node, grad) in self.nodes.iter().zip(grads) {
            if let (Op::Param(name), Some(g)) = (&node.op, grad) {
                store.accumulate(name, &g)?;
            }
        }
        Ok(())
    }

    /// Gradients of `root` with respect to the parameter leaves; entries for
    /// all other nodes are `None` once the sweep has consumed them.
    pub fn gradients(&self, root: Var) -> Result<Vec<Option<Tensor>>, NumError> {
        let rt = self.value(root);
        if rt.len() != 1 {
            return Err(NumError::NotScalar(rt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        let nodes = &self.nodes;
        let acc = |grads: &mut [Option<Tensor>], v: Var, g: Tensor| {
            if !nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let needs = |v: &Var| nodes[v.0].needs_grad;

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Input => {}
                Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        acc(&mut grads, *a, g.matmul_t(self.value(*b)));
                    }
                    if needs(b) {
                        acc(&mut grads, *b, self.value(*a).tmatmul(&g));
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    if needs(a) {
                        acc(&mut grads, *a, zip_map(&g, tb, |x, y| x * y));
                    }
                    if needs(b) {
                        acc(&mut grads, *b, zip_map(&g, ta, |x, y| x * y));
                    }
                }
                Op::AddRow(a, row) => {
                    let c = g.cols();
                    let mut gr = Tensor::zeros(1, c);
                    for r in 0..g.rows() {
                        for (o, &x) in gr.data_mut().iter_mut().zip(g.row_slice(r)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulCol(a, col) => {
                    let (ta, tc) = (self.value(*a), self.value(*col));
                    let mut ga = g.clone();
                    let mut gc = Tensor::zeros(tc.rows(), 1);
                    for r in 0..g.rows() {
                        let s = tc.get(r, 0);
                        let mut dot = 0.0;
                        for c in 0..g.cols() {
                            dot += g.get(r, c) * ta.get(r, c);
                            ga.set(r, c, g.get(r, c) * s);
                        }
                        gc.set(r, 0, dot);
                    }
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *col, gc);
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    acc(&mut grads, *a, g.map(|x| x * s));
                }
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::ConcatRows(parts) => {
                    let c = g.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let r = self.value(p).rows();
                        let data = g.data()[offset * c..(offset + r) * c].to_vec();
                        acc(&mut grads, p, Tensor::new(vec![r, c], data)?);
                        offset += r;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let pc = self.value(p).cols();
                        let mut gp = Tensor::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            gp.data_mut()[r * pc..(r + 1) * pc]
                                .copy_from_slice(&g.row_slice(r)[offset..offset + pc]);
                        }
                        acc(&mut grads, p, gp);
                        offset += pc;
                    }
                }
                Op::SliceRows(a, start) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut ga = Tensor::zeros(ta.rows(), c);
                    ga.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            ga.set(r, start + c, g.get(r, c));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.transpose()),
                Op::SoftmaxRows(a) => {
                    let mut ga = g.clone();
                    let c = y.cols();
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            ga.set(r, j, yr[j] * (gr[j] - dot));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let mut ga = g.clone();
                    let c = y.cols();
                    for r in 0..y.rows() {
                        let total: f64 = g.row_slice(r).iter().sum();
                        for j in 0..c {
                            ga.set(r, j, g.get(r, j) - y.get(r, j).exp() * total);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => acc(&mut grads, *a, zip_map(&g, y, |g, s| g * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut grads, *a, zip_map(&g, y, |g, t| g * (1.0 - t * t))),
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let ga = zip_map(&g, self.value(*a), |g, x| {
                        if x >= *lo && x <= *hi {
                            g
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::Log(a) => acc(&mut grads, *a, zip_map(&g, self.value(*a), |g, x| g / x)),
                Op::Sqrt(a) => {
                    let ga = zip_map(&g, y, |g, s| if s > 0.0 { g / (2.0 * s) } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Embedding(table, ids) => {
                    let tt = self.value(*table);
                    let c = tt.cols();
                    let mut gt = Tensor::zeros(tt.rows(), c);
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..c {
                            let v = gt.get(id, j) + g.get(r, j);
                            gt.set(id, j, v);
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::Pick(a, idx) => {
                    let ta = self.value(*a);
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    for (r, &j) in idx.iter().enumerate() {
                        ga.set(r, j, g.get(r, 0));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let ta = self.value(*a);
                    acc(
                        &mut grads,
                        *a,
                        Tensor::filled(ta.rows(), ta.cols(), g.item()),
                    );
                }
                Op::Mean(a) => {
                    let ta = self.value(*a);
                    let v = g.item() / ta.len() as f64;
                    acc(&mut grads, *a, Tensor::filled(ta.rows(), ta.cols(), v));
                }
                Op::MeanRows(a) => {
                    let ta = self.value(*a);
                    let n = ta.rows() as f64;
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..ta.rows() {
                        for c in 0..ta.cols() {
                            ga.set(r, c, g.get(0, c) / n);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let ta = self.value(*a);
                    let mut ga = Tensor::zeros(ta.rows(), ta.cols());
                    for r in 0..ta.rows() {
                        for c in 0..ta.cols() {
                            ga.set(r, c, g.get(r, 0));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SqDist(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let s = 2.0 * g.item();
                    let ga = zip_map(ta, tb, |x, y| s * (x - y));
                    let gb = ga.map(|x| -x);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(grads)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shape preserved")
}
