//! Dynamic reverse-mode tape. A fresh tape is built for every forward pass;
//! parameters enter as leaves (copied from a [`ParamStore`]) and after
//! [`Tape::backward`] their gradients are added back into the store.
//!
//! Values on the tape are matrices: vectors are `1 x n` rows, scalars `1 x 1`.

use std::collections::HashMap;
use std::ops::Range;

use super::ops::{
    self, check_finite, gemm, gemm_at_acc, gemm_bt_acc, sigmoid_scalar, Binary, Unary,
};
use super::{NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Sparse row: `(column, value)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Unary(Unary, Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<usize>),
    Sparse(Vec<SparseRow>, Var),
    RowDot(Var, Var),
    RowNorm(Var),
    SoftmaxRows(Var),
    GroupSoftmax(Var, Vec<Range<usize>>),
    GroupSum(Var, Vec<Range<usize>>),
    BceLogits(Var, Vec<f64>),
}

struct Node {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    op: Op,
    needs_grad: bool,
    param: Option<ParamId>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bound: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> NumericsError {
    NumericsError::Shape {
        op,
        left: vec![a.0, a.1],
        right: vec![b.0, b.1],
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

    fn push(
        &mut self,
        op_name: &'static str,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        op: Op,
    ) -> Result<Var, NumericsError> {
        debug_assert_eq!(rows * cols, value.len());
        check_finite(op_name, &value)?;
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Binary(_, a, b)
            | Op::AddRow(a, b)
            | Op::MulCol(a, b)
            | Op::RowDot(a, b) => self.tracks(*a) || self.tracks(*b),
            Op::ConcatCols(vs) | Op::ConcatRows(vs) => vs.iter().any(|v| self.tracks(*v)),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Unary(_, a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SliceCols(a, _)
            | Op::Gather(a, _)
            | Op::Sparse(_, a)
            | Op::RowNorm(a)
            | Op::SoftmaxRows(a)
            | Op::GroupSoftmax(a, _)
            | Op::GroupSum(a, _)
            | Op::BceLogits(a, _) => self.tracks(*a),
        };
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.dims(v)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::matrix(r, c, self.nodes[v.0].value.clone()).expect("tape values are finite")
    }

    /// Untracked input.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        self.leaf_raw(t.rows(), t.cols(), t.data().to_vec(), false)
    }

    pub fn constant_matrix(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    ) -> Result<Var, NumericsError> {
        if rows * cols != data.len() {
            return Err(shape_err("constant", (rows, cols), (1, data.len())));
        }
        check_finite("constant", &data)?;
        Ok(self.leaf_raw(rows, cols, data, false))
    }

    /// Tracked leaf not bound to any store; its gradient is read with
    /// [`Tape::grad`].
    pub fn tracked(&mut self, t: &Tensor) -> Var {
        self.leaf_raw(t.rows(), t.cols(), t.data().to_vec(), true)
    }

    /// Leaf for a stored parameter. Binding the same id twice returns the
    /// same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.leaf_raw(t.rows(), t.cols(), t.data().to_vec(), true);
        self.nodes[v.0].param = Some(id);
        self.bound.insert(id, v);
        v
    }

    fn leaf_raw(&mut self, rows: usize, cols: usize, value: Vec<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op: Op::Leaf,
            needs_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", (m, k), (k2, n)));
        }
        let out = gemm(self.value(a), self.value(b), m, k, n);
        self.push("matmul", m, n, out, Op::MatMul(a, b))
    }

    fn binary(
        &mut self,
        op: Binary,
        name: &'static str,
        a: Var,
        b: Var,
    ) -> Result<Var, NumericsError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(shape_err(name, da, db));
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| match op {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
            })
            .collect();
        self.push(name, da.0, da.1, out, Op::Binary(op, a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(Binary::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(Binary::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary(Binary::Mul, "mul", a, b)
    }

    /// `a[m x n] + row[1 x n]` broadcast over rows (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(shape_err("add_row", (m, n), self.dims(row)));
        }
        let r = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_mut(n.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        self.push("add_row", m, n, out, Op::AddRow(a, row))
    }

    /// `a[m x n] * col[m x 1]`, scaling each row by its own factor.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        if self.dims(col) != (m, 1) {
            return Err(shape_err("mul_col", (m, n), self.dims(col)));
        }
        let c = self.value(col);
        let mut out = self.value(a).to_vec();
        for (i, chunk) in out.chunks_mut(n.max(1)).enumerate().take(m) {
            chunk.iter_mut().for_each(|o| *o *= c[i]);
        }
        self.push("mul_col", m, n, out, Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        let out = self.value(a).iter().map(|&x| x * factor).collect();
        self.push("scale", m, n, out, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        let out = self.value(a).iter().map(|&x| x + c).collect();
        self.push("add_scalar", m, n, out, Op::AddScalar(a))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: Var) -> Result<Var, NumericsError> {
        let neg = self.scale(a, -1.0)?;
        self.add_scalar(neg, 1.0)
    }

    pub fn unary(&mut self, op: Unary, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        let out = self.value(a).iter().map(|&x| op.apply(x)).collect();
        let name = match op {
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
            Unary::Exp => "exp",
        };
        self.push(name, m, n, out, Op::Unary(op, a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(Unary::Tanh, a)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary(Unary::Exp, a)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).iter().sum();
        self.push("sum", 1, 1, vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let v = self.value(a);
        if v.is_empty() {
            return Err(NumericsError::Empty { op: "mean" });
        }
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", 1, 1, vec![s], Op::Mean(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::Empty { op: "concat_cols" });
        };
        let m = self.dims(first).0;
        let mut total = 0;
        for &p in parts {
            let d = self.dims(p);
            if d.0 != m {
                return Err(shape_err("concat_cols", self.dims(first), d));
            }
            total += d.1;
        }
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let c = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
            }
        }
        self.push("concat_cols", m, total, out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        if start + len > n {
            return Err(shape_err("slice_cols", (m, n), (start, len)));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&v[i * n + start..i * n + start + len]);
        }
        self.push("slice_cols", m, len, out, Op::SliceCols(a, start))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let Some(&first) = parts.first() else {
            return Err(NumericsError::Empty { op: "concat_rows" });
        };
        let n = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let d = self.dims(p);
            if d.1 != n {
                return Err(shape_err("concat_rows", self.dims(first), d));
            }
            rows += d.0;
            out.extend_from_slice(self.value(p));
        }
        self.push("concat_rows", rows, n, out, Op::ConcatRows(parts.to_vec()))
    }

    /// Row `r` of the output is row `index[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= m) {
            return Err(shape_err("gather_rows", (m, n), (bad, 0)));
        }
        let v = self.value(a);
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in &index {
            out.extend_from_slice(&v[i * n..(i + 1) * n]);
        }
        let rows = index.len();
        self.push("gather_rows", rows, n, out, Op::Gather(a, index))
    }

    /// Sparse-dense product: row `r` of the output is `sum(v * w[c])` over
    /// the `(c, v)` entries of `rows[r]`.
    pub fn sparse_matmul(&mut self, rows: Vec<SparseRow>, w: Var) -> Result<Var, NumericsError> {
        let (k, n) = self.dims(w);
        let wv = self.value(w);
        let mut out = vec![0.0; rows.len() * n];
        for (r, entries) in rows.iter().enumerate() {
            let orow = &mut out[r * n..(r + 1) * n];
            for &(c, x) in entries {
                if c >= k {
                    return Err(shape_err("sparse_matmul", (rows.len(), c + 1), (k, n)));
                }
                for (o, &wval) in orow.iter_mut().zip(&wv[c * n..(c + 1) * n]) {
                    *o += x * wval;
                }
            }
        }
        let m = rows.len();
        self.push("sparse_matmul", m, n, out, Op::Sparse(rows, w))
    }

    /// Per-row dot product, `[m x 1]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(shape_err("row_dot", da, db));
        }
        let n = da.1.max(1);
        let out = self
            .value(a)
            .chunks(n)
            .zip(self.value(b).chunks(n))
            .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        self.push("row_dot", da.0, 1, out, Op::RowDot(a, b))
    }

    /// Euclidean norm of every row, `[m x 1]`. The gradient at a zero row is
    /// taken to be zero.
    pub fn row_norm(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        let out = self
            .value(a)
            .chunks(n.max(1))
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        self.push("row_norm", m, 1, out, Op::RowNorm(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        if n == 0 {
            return Err(NumericsError::Empty { op: "softmax" });
        }
        let v = self.value(a);
        let mut out = vec![0.0; m * n];
        for (src, dst) in v.chunks(n).zip(out.chunks_mut(n)) {
            ops::softmax_into(src, dst);
        }
        self.push("softmax", m, n, out, Op::SoftmaxRows(a))
    }

    /// Softmax over contiguous row ranges of a column vector `[m x 1]`.
    pub fn group_softmax(
        &mut self,
        a: Var,
        groups: Vec<Range<usize>>,
    ) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        if n != 1 {
            return Err(shape_err("group_softmax", (m, n), (m, 1)));
        }
        let v = self.value(a);
        let mut out = vec![0.0; m];
        for g in &groups {
            if g.end > m {
                return Err(shape_err("group_softmax", (m, n), (g.end, 1)));
            }
            if g.is_empty() {
                continue;
            }
            ops::softmax_into(&v[g.clone()], &mut out[g.clone()]);
        }
        self.push("group_softmax", m, 1, out, Op::GroupSoftmax(a, groups))
    }

    /// Sums contiguous row ranges of `a[m x n]` into `[groups x n]`. An empty
    /// range produces a zero row.
    pub fn group_sum(&mut self, a: Var, groups: Vec<Range<usize>>) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(a);
        let v = self.value(a);
        let mut out = vec![0.0; groups.len() * n];
        for (gi, g) in groups.iter().enumerate() {
            if g.end > m {
                return Err(shape_err("group_sum", (m, n), (g.end, n)));
            }
            let orow = &mut out[gi * n..(gi + 1) * n];
            for r in g.clone() {
                for (o, &x) in orow.iter_mut().zip(&v[r * n..(r + 1) * n]) {
                    *o += x;
                }
            }
        }
        let rows = groups.len();
        self.push("group_sum", rows, n, out, Op::GroupSum(a, groups))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `labels`,
    /// computed in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var, NumericsError> {
        let (m, n) = self.dims(logits);
        if m * n != labels.len() || labels.is_empty() {
            return Err(shape_err("bce_with_logits", (m, n), (labels.len(), 1)));
        }
        let z = self.value(logits);
        let total: f64 = z
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = total / labels.len() as f64;
        self.push(
            "bce_with_logits",
            1,
            1,
            vec![loss],
            Op::BceLogits(logits, labels.to_vec()),
        )
    }

    /// Reverse pass from a scalar. Gradients of every tracked node are kept
    /// until the next call and are readable through [`Tape::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), NumericsError> {
        if self.dims(loss) != (1, 1) {
            return Err(NumericsError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.dims(loss)
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.tracks(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Adds the gradients of bound parameters into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.bound {
            if let Some(g) = self.grads.get(v.0).and_then(|g| g.as_ref()) {
                if let Some(dst) = store.get_mut(id).grad_mut() {
                    for (d, s) in dst.iter_mut().zip(g) {
                        *d += s;
                    }
                }
            }
        }
    }

    /// `backward` followed by `accumulate_into`.
    pub fn backward_into(
        &mut self,
        loss: Var,
        store: &mut ParamStore,
    ) -> Result<(), NumericsError> {
        self.backward(loss)?;
        self.accumulate_into(store);
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`, zeros if none
    /// reached it.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => vec![0.0; self.nodes[v.0].value.len()],
        }
    }

    fn acc(&mut self, v: Var) -> Option<&mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        let len = node.rows * node.cols;
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        // The op is moved out temporarily so node values can be borrowed
        // while parent gradients are written.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let (rows, cols) = (self.nodes[i].rows, self.nodes[i].cols);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if self.tracks(*a) {
                    let bv = std::mem::take(&mut self.nodes[b.0].value);
                    if let Some(ga) = self.acc(*a) {
                        gemm_bt_acc(g, &bv, m, k, n, ga);
                    }
                    self.nodes[b.0].value = bv;
                }
                if self.tracks(*b) {
                    let av = std::mem::take(&mut self.nodes[a.0].value);
                    if let Some(gb) = self.acc(*b) {
                        gemm_at_acc(&av, g, m, k, n, gb);
                    }
                    self.nodes[a.0].value = av;
                }
            }
            Op::Binary(kind, a, b) => match kind {
                Binary::Add | Binary::Sub => {
                    if let Some(ga) = self.acc(*a) {
                        ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                    let sign = if *kind == Binary::Add { 1.0 } else { -1.0 };
                    if let Some(gb) = self.acc(*b) {
                        gb.iter_mut().zip(g).for_each(|(x, y)| *x += sign * y);
                    }
                }
                Binary::Mul => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    if let Some(ga) = self.acc(*a) {
                        for ((x, y), bb) in ga.iter_mut().zip(g).zip(&bv) {
                            *x += y * bb;
                        }
                    }
                    if let Some(gb) = self.acc(*b) {
                        for ((x, y), aa) in gb.iter_mut().zip(g).zip(&av) {
                            *x += y * aa;
                        }
                    }
                }
            },
            Op::AddRow(a, r) => {
                if let Some(ga) = self.acc(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gr) = self.acc(*r) {
                    for chunk in g.chunks(cols.max(1)) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::MulCol(a, c) => {
                let n = cols.max(1);
                if self.tracks(*a) {
                    let cv = self.nodes[c.0].value.clone();
                    if let Some(ga) = self.acc(*a) {
                        for (r, (dst, src)) in ga.chunks_mut(n).zip(g.chunks(n)).enumerate() {
                            dst.iter_mut().zip(src).for_each(|(x, y)| *x += y * cv[r]);
                        }
                    }
                }
                if self.tracks(*c) {
                    let av = self.nodes[a.0].value.clone();
                    if let Some(gc) = self.acc(*c) {
                        for (r, (src, arow)) in g.chunks(n).zip(av.chunks(n)).enumerate() {
                            gc[r] += src.iter().zip(arow).map(|(p, q)| p * q).sum::<f64>();
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                if let Some(ga) = self.acc(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += s * y);
                }
            }
            Op::AddScalar(a) => {
                if let Some(ga) = self.acc(*a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
            }
            Op::Unary(kind, a) => {
                let out = std::mem::take(&mut self.nodes[i].value);
                if let Some(ga) = self.acc(*a) {
                    for ((x, y), o) in ga.iter_mut().zip(g).zip(&out) {
                        *x += y * kind.derivative_from_output(*o);
                    }
                }
                self.nodes[i].value = out;
            }
            Op::Sum(a) => {
                let g0 = g[0];
                if let Some(ga) = self.acc(*a) {
                    ga.iter_mut().for_each(|x| *x += g0);
                }
            }
            Op::Mean(a) => {
                let len = self.nodes[a.0].value.len() as f64;
                let g0 = g[0] / len;
                if let Some(ga) = self.acc(*a) {
                    ga.iter_mut().for_each(|x| *x += g0);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let c = self.dims(p).1;
                    if let Some(gp) = self.acc(p) {
                        for r in 0..rows {
                            let src = &g[r * cols + offset..r * cols + offset + c];
                            gp[r * c..(r + 1) * c]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let n = self.dims(*a).1;
                let start = *start;
                if let Some(ga) = self.acc(*a) {
                    for r in 0..rows {
                        let src = &g[r * cols..(r + 1) * cols];
                        ga[r * n + start..r * n + start + cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    if let Some(gp) = self.acc(p) {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(x, y)| *x += y);
                    }
                    offset += len;
                }
            }
            Op::Gather(a, index) => {
                let n = cols;
                if let Some(ga) = self.acc(*a) {
                    for (r, &src) in index.iter().enumerate() {
                        ga[src * n..(src + 1) * n]
                            .iter_mut()
                            .zip(&g[r * n..(r + 1) * n])
                            .for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Sparse(sparse_rows, w) => {
                let n = cols;
                if let Some(gw) = self.acc(*w) {
                    for (r, entries) in sparse_rows.iter().enumerate() {
                        let grow = &g[r * n..(r + 1) * n];
                        for &(c, x) in entries {
                            gw[c * n..(c + 1) * n]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(d, y)| *d += x * y);
                        }
                    }
                }
            }
            Op::RowDot(a, b) => {
                let n = self.dims(*a).1.max(1);
                let av = self.nodes[a.0].value.clone();
                let bv = self.nodes[b.0].value.clone();
                if let Some(ga) = self.acc(*a) {
                    for (r, (dst, src)) in ga.chunks_mut(n).zip(bv.chunks(n)).enumerate() {
                        dst.iter_mut().zip(src).for_each(|(x, y)| *x += g[r] * y);
                    }
                }
                if let Some(gb) = self.acc(*b) {
                    for (r, (dst, src)) in gb.chunks_mut(n).zip(av.chunks(n)).enumerate() {
                        dst.iter_mut().zip(src).for_each(|(x, y)| *x += g[r] * y);
                    }
                }
            }
            Op::RowNorm(a) => {
                let n = self.dims(*a).1.max(1);
                let av = self.nodes[a.0].value.clone();
                let norms = self.nodes[i].value.clone();
                if let Some(ga) = self.acc(*a) {
                    for (r, (dst, src)) in ga.chunks_mut(n).zip(av.chunks(n)).enumerate() {
                        if norms[r] > 0.0 {
                            let f = g[r] / norms[r];
                            dst.iter_mut().zip(src).for_each(|(x, y)| *x += f * y);
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = self.nodes[i].value.clone();
                let n = cols;
                if let Some(ga) = self.acc(*a) {
                    for ((dst, gy), yy) in ga.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let dot: f64 = gy.iter().zip(yy).map(|(p, q)| p * q).sum();
                        for ((x, gv), yv) in dst.iter_mut().zip(gy).zip(yy) {
                            *x += yv * (gv - dot);
                        }
                    }
                }
            }
            Op::GroupSoftmax(a, groups) => {
                let y = self.nodes[i].value.clone();
                if let Some(ga) = self.acc(*a) {
                    for grp in groups {
                        let dot: f64 = grp.clone().map(|r| g[r] * y[r]).sum();
                        for r in grp.clone() {
                            ga[r] += y[r] * (g[r] - dot);
                        }
                    }
                }
            }
            Op::GroupSum(a, groups) => {
                let n = cols;
                if let Some(ga) = self.acc(*a) {
                    for (gi, grp) in groups.iter().enumerate() {
                        let src = &g[gi * n..(gi + 1) * n];
                        for r in grp.clone() {
                            ga[r * n..(r + 1) * n]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            Op::BceLogits(a, labels) => {
                let z = self.nodes[a.0].value.clone();
                let scale = g[0] / labels.len() as f64;
                if let Some(ga) = self.acc(*a) {
                    for ((x, zz), y) in ga.iter_mut().zip(&z).zip(labels) {
                        *x += scale * (sigmoid_scalar(*zz) - y);
                    }
                }
            }
        }
        self.nodes[i].op = op;
    }
}
