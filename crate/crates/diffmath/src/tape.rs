//! Reverse-mode differentiation over a flat operation tape.
//!
//! Every op appends one node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse creation order, which is a valid reverse
//! topological order because inputs always precede their consumers.

use crate::error::DiffError;
use crate::tensor::Tensor;

/// Lower clamp applied to the input of [`Tape::log`].
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-wise and elementwise nonlinearities selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    SoftmaxRow,
    Concat,
    ElementwiseMul,
    MaxPoolRows,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Log(usize),
    Pow(usize, f64),
    SoftmaxRows(usize),
    LogSoftmaxRows(usize),
    ConcatCols(Vec<usize>),
    // argmax holds the winning input row for every output element
    SegmentMax { input: usize, argmax: Vec<usize> },
    GatherRows { input: usize, index: Vec<usize> },
    ScatterAddRows { input: usize, index: Vec<usize> },
    Propagate { coef: usize, h: usize, src: Vec<usize>, dst: Vec<usize> },
    ScaleRows(usize, usize),
    SliceRows { input: usize, start: usize },
    Sum(usize),
    Mean(usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of primitive ops with cached forward values.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`. Parameters that did not
    /// influence the loss get a zero tensor; constants get `None`.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> DiffError {
    DiffError::Shape { op, detail: format!("{:?} vs {:?}", a.shape(), b.shape()) }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_index(op: &'static str, index: &[usize], len: usize) -> Result<(), DiffError> {
    match index.iter().find(|&&i| i >= len) {
        Some(&i) => Err(DiffError::Index { op, index: i, len }),
        None => Ok(()),
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(value, Op::MatMul(a.0, b.0), rg))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, DiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(op_name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.rows(), ta.cols(), data)?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, DiffError> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err("add_row", ta, tr));
        }
        let mut value = ta.clone();
        let c = ta.cols();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += tr.data()[i % c];
        }
        let rg = self.rg(&[a.0, row.0]);
        Ok(self.push(value, Op::AddRow(a.0, row.0), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v * k);
        let rg = self.rg(&[a.0]);
        self.push(value, Op::Scale(a.0, k), rg)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a).map(|v| v + k);
        let rg = self.rg(&[a.0]);
        self.push(value, Op::AddScalar(a.0), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(&[a.0]);
        self.push(value, Op::Relu(a.0), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(&[a.0]);
        self.push(value, Op::Sigmoid(a.0), rg)
    }

    /// Natural log with the input clamped to at least [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(LOG_FLOOR).ln());
        let rg = self.rg(&[a.0]);
        self.push(value, Op::Log(a.0), rg)
    }

    /// Elementwise power; inputs must be positive when `p` is fractional.
    pub fn pow(&mut self, a: Var, p: f64) -> Var {
        let value = self.value(a).map(|v| v.powf(p));
        let rg = self.rg(&[a.0]);
        self.push(value, Op::Pow(a.0, p), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        for r in 0..t.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(value, Op::SoftmaxRows(a.0), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        for r in 0..t.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(value, Op::LogSoftmaxRows(a.0), rg)
    }

    /// Horizontal concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts.first().ok_or(DiffError::EmptyInput { op: "concat" })?;
        let rows = self.value(*first).rows();
        for p in parts {
            if self.value(*p).rows() != rows {
                return Err(shape_err("concat", self.value(*first), self.value(*p)));
            }
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(value, Op::ConcatCols(ids), rg))
    }

    /// Columnwise max over all rows, giving a `1 x c` row.
    pub fn max_pool_rows(&mut self, a: Var) -> Result<Var, DiffError> {
        let rows = self.value(a).rows();
        self.segment_max_rows(a, &[0, rows])
    }

    /// Columnwise max within consecutive row segments.
    ///
    /// `offsets` has one more entry than there are segments; segment `s`
    /// covers rows `offsets[s]..offsets[s + 1]`.
    pub fn segment_max_rows(&mut self, a: Var, offsets: &[usize]) -> Result<Var, DiffError> {
        let t = self.value(a);
        if offsets.len() < 2 || *offsets.last().unwrap() > t.rows() {
            return Err(DiffError::Shape {
                op: "segment_max",
                detail: format!("bad offsets for {} rows", t.rows()),
            });
        }
        let segments = offsets.len() - 1;
        let cols = t.cols();
        if cols == 0 {
            return Err(DiffError::EmptyInput { op: "max_pool_rows" });
        }
        let mut value = Tensor::zeros(segments, cols);
        let mut argmax = vec![0; segments * cols];
        for s in 0..segments {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if lo >= hi {
                return Err(DiffError::EmptyInput { op: "max_pool_rows" });
            }
            for c in 0..cols {
                let mut best = lo;
                for r in lo + 1..hi {
                    if t.get(r, c) > t.get(best, c) {
                        best = r;
                    }
                }
                value.set(s, c, t.get(best, c));
                argmax[s * cols + c] = best;
            }
        }
        let rg = self.rg(&[a.0]);
        Ok(self.push(value, Op::SegmentMax { input: a.0, argmax }, rg))
    }

    /// Picks rows of `a`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var, DiffError> {
        let t = self.value(a);
        check_index("gather_rows", index, t.rows())?;
        let cols = t.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::new(index.len(), cols, data)?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(value, Op::GatherRows { input: a.0, index: index.to_vec() }, rg))
    }

    /// Sums row `e` of `a` into output row `index[e]`, producing `n` rows.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], n: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        if index.len() != t.rows() {
            return Err(DiffError::Shape {
                op: "scatter_add_rows",
                detail: format!("{} indices for {} rows", index.len(), t.rows()),
            });
        }
        check_index("scatter_add_rows", index, n)?;
        let cols = t.cols();
        let mut value = Tensor::zeros(n, cols);
        for (e, &i) in index.iter().enumerate() {
            for (o, &v) in value.row_mut(i).iter_mut().zip(t.row(e)) {
                *o += v;
            }
        }
        let rg = self.rg(&[a.0]);
        Ok(self.push(value, Op::ScatterAddRows { input: a.0, index: index.to_vec() }, rg))
    }

    /// Weighted message passing: `out[dst[e]] += coef[e] * h[src[e]]`.
    ///
    /// `coef` is an `E x 1` column, `h` is `n x c`; the output has `h`'s shape.
    pub fn propagate(&mut self, coef: Var, h: Var, src: &[usize], dst: &[usize]) -> Result<Var, DiffError> {
        let (tc, th) = (self.value(coef), self.value(h));
        if tc.cols() != 1 || tc.rows() != src.len() || src.len() != dst.len() {
            return Err(shape_err("propagate", tc, th));
        }
        check_index("propagate", src, th.rows())?;
        check_index("propagate", dst, th.rows())?;
        let mut value = Tensor::zeros(th.rows(), th.cols());
        for (e, (&s, &d)) in src.iter().zip(dst).enumerate() {
            let w = tc.data()[e];
            if w == 0.0 {
                continue;
            }
            let hs = th.row(s);
            for (o, &v) in value.row_mut(d).iter_mut().zip(hs) {
                *o += w * v;
            }
        }
        let rg = self.rg(&[coef.0, h.0]);
        let op = Op::Propagate { coef: coef.0, h: h.0, src: src.to_vec(), dst: dst.to_vec() };
        Ok(self.push(value, op, rg))
    }

    /// Multiplies row `i` of `h` by `s[i]` where `s` is an `n x 1` column.
    pub fn scale_rows(&mut self, h: Var, s: Var) -> Result<Var, DiffError> {
        let (th, ts) = (self.value(h), self.value(s));
        if ts.cols() != 1 || ts.rows() != th.rows() {
            return Err(shape_err("scale_rows", th, ts));
        }
        let mut value = th.clone();
        for r in 0..th.rows() {
            let k = ts.data()[r];
            for v in value.row_mut(r) {
                *v *= k;
            }
        }
        let rg = self.rg(&[h.0, s.0]);
        Ok(self.push(value, Op::ScaleRows(h.0, s.0), rg))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var, DiffError> {
        let t = self.value(a);
        if start > end || end > t.rows() {
            return Err(DiffError::Index { op: "slice_rows", index: end, len: t.rows() });
        }
        let cols = t.cols();
        let value = Tensor::new(end - start, cols, t.data()[start * cols..end * cols].to_vec())?;
        let rg = self.rg(&[a.0]);
        Ok(self.push(value, Op::SliceRows { input: a.0, start }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a.0]);
        self.push(value, Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, DiffError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(DiffError::EmptyInput { op: "mean" });
        }
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a.0]);
        Ok(self.push(value, Op::Mean(a.0), rg))
    }

    /// Dispatches one of the named nonlinearities.
    pub fn activation(&mut self, kind: Activation, inputs: &[Var]) -> Result<Var, DiffError> {
        let unary = |inputs: &[Var]| -> Result<Var, DiffError> {
            match inputs {
                [x] => Ok(*x),
                _ => Err(DiffError::Shape {
                    op: "activation",
                    detail: format!("{kind:?} takes one input, got {}", inputs.len()),
                }),
            }
        };
        match kind {
            Activation::Relu => Ok(self.relu(unary(inputs)?)),
            Activation::Sigmoid => Ok(self.sigmoid(unary(inputs)?)),
            Activation::SoftmaxRow => Ok(self.softmax_rows(unary(inputs)?)),
            Activation::MaxPoolRows => self.max_pool_rows(unary(inputs)?),
            Activation::Concat => self.concat_cols(inputs),
            Activation::ElementwiseMul => match inputs {
                [a, b] => self.mul(*a, *b),
                _ => Err(DiffError::Shape {
                    op: "activation",
                    detail: format!("elementwise-mul takes two inputs, got {}", inputs.len()),
                }),
            },
        }
    }

    /// Back-propagates from a `1 x 1` loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(DiffError::NonScalarLoss { rows: lt.rows(), cols: lt.cols() });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        for (idx, node) in self.nodes.iter().enumerate() {
            match node.op {
                Op::Leaf if node.requires_grad => {
                    if grads[idx].is_none() {
                        grads[idx] = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
                    }
                }
                _ if !node.requires_grad => grads[idx] = None,
                _ => {}
            }
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let out = &node.value;
        let val = |i: usize| &self.nodes[i].value;
        let needs = |i: usize| self.nodes[i].requires_grad;

        let mut accumulate = |i: usize, delta: Tensor| match &mut grads[i] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                if needs(*a) {
                    accumulate(*a, matmul_nt(g, tb));
                }
                if needs(*b) {
                    accumulate(*b, matmul_tn(ta, g));
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(*a, g.clone());
                }
                if needs(*b) {
                    accumulate(*b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(*a, g.clone());
                }
                if needs(*b) {
                    accumulate(*b, g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    accumulate(*a, zip(g, val(*b), |x, y| x * y));
                }
                if needs(*b) {
                    accumulate(*b, zip(g, val(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                if needs(*a) {
                    accumulate(*a, g.clone());
                }
                if needs(*row) {
                    let mut d = Tensor::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, &v) in d.data_mut().iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(*row, d);
                }
            }
            Op::Scale(a, k) => accumulate(*a, g.map(|v| v * k)),
            Op::AddScalar(a) => accumulate(*a, g.clone()),
            Op::Relu(a) => accumulate(*a, zip(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })),
            Op::Sigmoid(a) => accumulate(*a, zip(g, out, |gv, y| gv * y * (1.0 - y))),
            Op::Log(a) => {
                accumulate(*a, zip(g, val(*a), |gv, x| if x >= LOG_FLOOR { gv / x } else { 0.0 }))
            }
            Op::Pow(a, p) => accumulate(*a, zip(g, val(*a), |gv, x| gv * p * x.powf(p - 1.0))),
            Op::SoftmaxRows(a) => {
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for ((o, &gv), &y) in d.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = y * (gv - dot);
                    }
                }
                accumulate(*a, d);
            }
            Op::LogSoftmaxRows(a) => {
                let mut d = Tensor::zeros(g.rows(), g.cols());
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let total: f64 = gr.iter().sum();
                    for ((o, &gv), &ly) in d.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = gv - ly.exp() * total;
                    }
                }
                accumulate(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let tp = val(p);
                    let cols = tp.cols();
                    if needs(p) {
                        let mut d = Tensor::zeros(tp.rows(), cols);
                        for r in 0..tp.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[offset..offset + cols]);
                        }
                        accumulate(p, d);
                    }
                    offset += cols;
                }
            }
            Op::SegmentMax { input, argmax } => {
                let ti = val(*input);
                let cols = ti.cols();
                let mut d = Tensor::zeros(ti.rows(), cols);
                for (k, &r) in argmax.iter().enumerate() {
                    let c = k % cols;
                    let cur = d.get(r, c);
                    d.set(r, c, cur + g.data()[k]);
                }
                accumulate(*input, d);
            }
            Op::GatherRows { input, index } => {
                let ti = val(*input);
                let mut d = Tensor::zeros(ti.rows(), ti.cols());
                for (k, &i) in index.iter().enumerate() {
                    for (o, &v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                accumulate(*input, d);
            }
            Op::ScatterAddRows { input, index } => {
                let ti = val(*input);
                let mut d = Tensor::zeros(ti.rows(), ti.cols());
                for (e, &i) in index.iter().enumerate() {
                    d.row_mut(e).copy_from_slice(g.row(i));
                }
                accumulate(*input, d);
            }
            Op::Propagate { coef, h, src, dst } => {
                let (tc, th) = (val(*coef), val(*h));
                if needs(*h) {
                    let mut d = Tensor::zeros(th.rows(), th.cols());
                    for (e, (&s, &t)) in src.iter().zip(dst).enumerate() {
                        let w = tc.data()[e];
                        if w == 0.0 {
                            continue;
                        }
                        let gr = g.row(t);
                        for (o, &v) in d.row_mut(s).iter_mut().zip(gr) {
                            *o += w * v;
                        }
                    }
                    accumulate(*h, d);
                }
                if needs(*coef) {
                    let d: Vec<f64> = src
                        .iter()
                        .zip(dst)
                        .map(|(&s, &t)| g.row(t).iter().zip(th.row(s)).map(|(x, y)| x * y).sum())
                        .collect();
                    accumulate(*coef, Tensor::column(d));
                }
            }
            Op::ScaleRows(h, s) => {
                let (th, ts) = (val(*h), val(*s));
                if needs(*h) {
                    let mut d = g.clone();
                    for r in 0..d.rows() {
                        let k = ts.data()[r];
                        for v in d.row_mut(r) {
                            *v *= k;
                        }
                    }
                    accumulate(*h, d);
                }
                if needs(*s) {
                    let d: Vec<f64> = (0..th.rows())
                        .map(|r| g.row(r).iter().zip(th.row(r)).map(|(x, y)| x * y).sum())
                        .collect();
                    accumulate(*s, Tensor::column(d));
                }
            }
            Op::SliceRows { input, start } => {
                let ti = val(*input);
                let mut d = Tensor::zeros(ti.rows(), ti.cols());
                let cols = ti.cols();
                d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(*input, d);
            }
            Op::Sum(a) => {
                let ta = val(*a);
                accumulate(*a, Tensor::filled(ta.rows(), ta.cols(), g.item()));
            }
            Op::Mean(a) => {
                let ta = val(*a);
                accumulate(*a, Tensor::filled(ta.rows(), ta.cols(), g.item() / ta.len() as f64));
            }
        }
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip of equal shapes")
}

/// `g * b^T`
fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n, k) = (g.rows(), g.cols(), b.rows());
    let mut out = Tensor::zeros(m, k);
    for i in 0..m {
        let gr = g.row(i);
        for j in 0..k {
            let br = b.row(j);
            let mut acc = 0.0;
            for p in 0..n {
                acc += gr[p] * br[p];
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// `a^T * g`
fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), g.cols());
    let mut out = Tensor::zeros(k, n);
    for i in 0..m {
        let ar = a.row(i);
        let gr = g.row(i);
        for (p, &av) in ar.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            for (o, &gv) in out.row_mut(p).iter_mut().zip(gr) {
                *o += av * gv;
            }
        }
    }
    out
}
