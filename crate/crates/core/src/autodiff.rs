//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks it in reverse and returns the gradient of a scalar loss with respect
//! to every recorded node. Traced values are never mutated in place, and a
//! fresh tape is built for every step.

use crate::chamfer::{chamfer_loss, ChamferConfig, Point6};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "matrix",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<const D: usize>(rows: &[[f64; D]]) -> Self {
        Matrix {
            rows: rows.len(),
            cols: D,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn scalar(v: f64) -> Self {
        Matrix {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn add_assign(&mut self, other: &Matrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (p, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(p)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self^T * other`.
    fn t_matmul(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let orow = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in dst.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other^T`.
    fn matmul_t(&self, other: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = a.iter().zip(other.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    LeakyRelu(Var, f64),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    /// Max over consecutive groups of rows; stores the winning row per output cell.
    GroupMax(Var, Vec<usize>),
    Sum(Var),
    WeightedSum(Var, Matrix),
    Chamfer(Var, Vec<Point6>),
    /// Mean cross-entropy; stores `softmax - onehot` scaled by 1/batch.
    CrossEntropy(Var, Matrix),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    non_finite: Option<&'static str>,
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// First operation that produced a non-finite value, as an error.
    pub fn check_finite(&self) -> Result<()> {
        match self.non_finite {
            Some(op) => Err(Error::NaNDetected(op)),
            None => Ok(()),
        }
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, requires_grad: bool) -> Var {
        if self.non_finite.is_none() && !value.is_finite() {
            self.non_finite = Some(name);
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A differentiable input (a parameter).
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push("param", value, Op::Leaf, true)
    }

    /// A constant input; no gradient is propagated into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push("constant", value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols != y.rows {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let v = x.matmul(y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push("matmul", v, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x cols` bias to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows != 1 || b.cols != x.cols {
            return Err(Error::shape("add_bias", format!("{:?} + {:?}", x.shape(), b.shape())));
        }
        let mut v = x.clone();
        for row in v.data.chunks_mut(b.cols) {
            for (o, &c) in row.iter_mut().zip(&b.data) {
                *o += c;
            }
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push("add_bias", v, Op::AddBias(a, bias), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push("add", v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut v = self.value(a).clone();
        for (o, &y) in v.data.iter_mut().zip(&self.value(b).data) {
            *o -= y;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push("sub", v, Op::Sub(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= s);
        let rg = self.rg(a);
        self.push("scale", v, Op::Scale(a, s), rg)
    }

    /// `max(x, slope*x)` elementwise; slope 1 is the identity, slope 0 is ReLU.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| {
            if *x < 0.0 {
                *x *= slope
            }
        });
        let rg = self.rg(a);
        self.push("leaky_relu", v, Op::LeakyRelu(a, slope), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows != y.rows {
            return Err(Error::shape(
                "concat_cols",
                format!("{:?} | {:?}", x.shape(), y.shape()),
            ));
        }
        let cols = x.cols + y.cols;
        let mut data = Vec::with_capacity(x.rows * cols);
        for r in 0..x.rows {
            data.extend_from_slice(x.row(r));
            data.extend_from_slice(y.row(r));
        }
        let v = Matrix {
            rows: x.rows,
            cols,
            data,
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push("concat_cols", v, Op::ConcatCols(a, b), rg))
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= x.rows) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {}", x.rows)));
        }
        let mut data = Vec::with_capacity(index.len() * x.cols);
        for &i in &index {
            data.extend_from_slice(x.row(i));
        }
        let v = Matrix {
            rows: index.len(),
            cols: x.cols,
            data,
        };
        let rg = self.rg(a);
        Ok(self.push("gather_rows", v, Op::GatherRows(a, index), rg))
    }

    /// Channelwise max over consecutive blocks of `group` rows:
    /// `(n*group) x c -> n x c`. The first maximal row wins ties.
    pub fn group_max(&mut self, a: Var, group: usize) -> Result<Var> {
        let x = self.value(a);
        if group == 0 || !x.rows.is_multiple_of(group) || x.rows == 0 {
            return Err(Error::shape(
                "group_max",
                format!("{} rows in groups of {group}", x.rows),
            ));
        }
        let n = x.rows / group;
        let mut v = Matrix::zeros(n, x.cols);
        let mut arg = vec![0usize; n * x.cols];
        for g in 0..n {
            for c in 0..x.cols {
                let mut best = (g * group, x.get(g * group, c));
                for r in g * group + 1..(g + 1) * group {
                    let val = x.get(r, c);
                    if val > best.1 {
                        best = (r, val);
                    }
                }
                v.data[g * x.cols + c] = best.1;
                arg[g * x.cols + c] = best.0;
            }
        }
        let rg = self.rg(a);
        Ok(self.push("group_max", v, Op::GroupMax(a, arg), rg))
    }

    /// Channelwise max over all rows: `n x c -> 1 x c`.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let rows = self.value(a).rows;
        self.group_max(a, rows)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.rg(a);
        self.push("sum", Matrix::scalar(s), Op::Sum(a), rg)
    }

    /// `sum(a .* weights)` for a constant weight matrix.
    pub fn weighted_sum(&mut self, a: Var, weights: Matrix) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != weights.shape() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{:?} vs {:?}", x.shape(), weights.shape()),
            ));
        }
        let s = x.data.iter().zip(&weights.data).map(|(p, q)| p * q).sum();
        let rg = self.rg(a);
        Ok(self.push("weighted_sum", Matrix::scalar(s), Op::WeightedSum(a, weights), rg))
    }

    /// Chamfer loss between a fixed target and the `n x 6` prediction `pred`.
    pub fn chamfer(&mut self, pred: Var, target: &[Point6], config: &ChamferConfig) -> Result<Var> {
        let x = self.value(pred);
        if x.cols != 6 {
            return Err(Error::shape("chamfer", format!("prediction has {} channels", x.cols)));
        }
        let pts: Vec<Point6> = x.data.chunks(6).map(|c| c.try_into().unwrap()).collect();
        let (value, grad) = chamfer_loss(target, &pts, config)?;
        let rg = self.rg(pred);
        Ok(self.push("chamfer", Matrix::scalar(value), Op::Chamfer(pred, grad), rg))
    }

    /// Mean softmax cross-entropy of `logits` (`batch x classes`) against `labels`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let x = self.value(logits);
        if x.rows != labels.len() || x.rows == 0 {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} rows, {} labels", x.rows, labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= x.cols) {
            return Err(Error::shape(
                "cross_entropy",
                format!("label {bad} with {} classes", x.cols),
            ));
        }
        let batch = x.rows as f64;
        let mut loss = 0.0;
        let mut dlogits = Matrix::zeros(x.rows, x.cols);
        for (r, &label) in labels.iter().enumerate() {
            let row = x.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            for (c, &v) in row.iter().enumerate() {
                let p = (v - lse).exp();
                dlogits.data[r * x.cols + c] = (p - if c == label { 1.0 } else { 0.0 }) / batch;
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            "cross_entropy",
            Matrix::scalar(loss / batch),
            Op::CrossEntropy(logits, dlogits),
            rg,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check_finite()?;
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(Error::NonScalarLoss {
                rows: lv.rows,
                cols: lv.cols,
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NaNDetected("backward"));
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let mut acc = |v: Var, contrib: Matrix| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.rg(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::AddBias(a, b) => {
                acc(*a, g.clone());
                if self.rg(*b) {
                    let mut db = Matrix::zeros(1, g.cols);
                    for row in g.data.chunks(g.cols) {
                        for (o, &v) in db.data.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                let mut neg = g.clone();
                neg.data.iter_mut().for_each(|x| *x = -*x);
                acc(*b, neg);
            }
            Op::Scale(a, s) => {
                let mut d = g.clone();
                d.data.iter_mut().for_each(|x| *x *= s);
                acc(*a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                for (o, &x) in d.data.iter_mut().zip(&self.value(*a).data) {
                    if x < 0.0 {
                        *o *= slope;
                    }
                }
                acc(*a, d);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).cols;
                let cb = self.value(*b).cols;
                let mut da = Matrix::zeros(g.rows, ca);
                let mut db = Matrix::zeros(g.rows, cb);
                for r in 0..g.rows {
                    let row = g.row(r);
                    da.data[r * ca..(r + 1) * ca].copy_from_slice(&row[..ca]);
                    db.data[r * cb..(r + 1) * cb].copy_from_slice(&row[ca..]);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::GatherRows(a, index) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for (r, &i) in index.iter().enumerate() {
                    let dst = &mut d.data[i * x.cols..(i + 1) * x.cols];
                    for (o, &v) in dst.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*a, d);
            }
            Op::GroupMax(a, arg) => {
                let x = self.value(*a);
                let mut d = Matrix::zeros(x.rows, x.cols);
                for (cell, &src) in arg.iter().enumerate() {
                    let c = cell % x.cols;
                    d.data[src * x.cols + c] += g.data[cell];
                }
                acc(*a, d);
            }
            Op::Sum(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    Matrix {
                        rows: x.rows,
                        cols: x.cols,
                        data: vec![g.data[0]; x.data.len()],
                    },
                );
            }
            Op::WeightedSum(a, w) => {
                let mut d = w.clone();
                d.data.iter_mut().for_each(|x| *x *= g.data[0]);
                acc(*a, d);
            }
            Op::Chamfer(pred, grad) => {
                let s = g.data[0];
                let data = grad.iter().flatten().map(|v| v * s).collect();
                acc(
                    *pred,
                    Matrix {
                        rows: grad.len(),
                        cols: 6,
                        data,
                    },
                );
            }
            Op::CrossEntropy(logits, d) => {
                let mut d = d.clone();
                d.data.iter_mut().for_each(|x| *x *= g.data[0]);
                acc(*logits, d);
            }
        }
    }
}

#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, zero-filled when the loss does not depend on it.
    pub fn get_or_zero(&self, v: Var, shape: [usize; 2]) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape[0], shape[1]))
    }
}
