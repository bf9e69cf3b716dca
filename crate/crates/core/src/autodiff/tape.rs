//! Tape-based reverse-mode differentiation over dense matrices.
//!
//! Every primitive appends one node to the tape. [`Tape::backward`] walks the
//! nodes in exact reverse recording order, so the recording order is already
//! a topological order of the computation.

use std::sync::atomic::{AtomicU32, Ordering};

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};
use crate::Scalar;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

/// Normalization axis for [`Tape::softmax`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Normalize each row (across columns).
    Rows,
    /// Normalize each column (across rows).
    Cols,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Abs(Var),
    Softmax(Var, Axis),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentLogSoftmax(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Var, Var),
    ConcatCols(Var, Var),
    MulCol(Var, Var),
    Sum(Var),
    WeightedSum(Var, Tensor<T>),
    BceWithLogits {
        logits: Var,
        targets: Vec<T>,
        weights: Vec<T>,
    },
    BatchNormTrain {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
    BatchNormInfer {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation. Single owner; consumed by [`Tape::backward`].
pub struct Tape<T> {
    id: u32,
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    tape: u32,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_ref())
    }

    /// Like [`Gradients::get`], but materializes zeros of the given shape.
    pub fn get_or_zeros(&self, v: Var, rows: usize, cols: usize) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(rows, cols))
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn owns(&self, v: Var) -> bool {
        v.tape == self.id && v.idx < self.nodes.len()
    }

    /// Trainable leaf: gradients are tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "Var used with a foreign tape");
        &self.nodes[v.idx].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let idx = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self.id, idx }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.idx].requires_grad
    }

    fn record(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(value, op, rg))
    }

    fn check(&self, v: Var) -> Result<()> {
        if self.owns(v) {
            Ok(())
        } else {
            Err(Error::Contract("variable does not belong to this tape".into()))
        }
    }

    /// `x · wᵀ` for `x: n×k`, `w: m×k`.
    pub fn matmul_t(&mut self, x: Var, w: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.cols() {
            return shape_err(
                "matmul_t",
                format!("{:?} times transpose of {:?}", xv.shape(), wv.shape()),
            );
        }
        let (n, m) = (xv.rows(), wv.rows());
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            let xr = xv.row(i);
            for j in 0..m {
                let wr = wv.row(j);
                let mut acc = T::zero();
                for (&a, &b) in xr.iter().zip(wr) {
                    acc += a * b;
                }
                out.push(acc);
            }
        }
        let value = Tensor::from_vec(n, m, out)?;
        self.record("matmul_t", value, Op::MatMulT(x, w), &[x, w])
    }

    /// Adds a `1 × c` bias to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return shape_err("add_row", format!("{:?} + row {:?}", xv.shape(), bv.shape()));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            for (a, &c) in value.row_mut(i).iter_mut().zip(bv.data()) {
                *a += c;
            }
        }
        self.record("add_row", value, Op::AddRow(x, b), &[x, b])
    }

    /// `x · Wᵀ + b`, the affine map used throughout the model.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul_t(x, w)?;
        self.add_row(y, b)
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(name, format!("{:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::from_vec(av.rows(), av.cols(), data)?;
        self.record(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(|x| x * c);
        self.record("scale", value, Op::Scale(a, c), &[a])
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        self.check(a)?;
        let value = self.value(a).map(f);
        self.record(name, value, op, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Result<Var> {
        self.unary(
            "leaky_relu",
            a,
            move |x| if x > T::zero() { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, |x| x.abs(), Op::Abs(a))
    }

    pub fn softmax(&mut self, a: Var, axis: Axis) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        let (n, c) = av.shape();
        let mut value = av.clone();
        match axis {
            Axis::Rows => {
                for i in 0..n {
                    softmax_in_place(value.row_mut(i));
                }
            }
            Axis::Cols => {
                let mut buf = vec![T::zero(); n];
                for j in 0..c {
                    for (i, b) in buf.iter_mut().enumerate() {
                        *b = av.get(i, j);
                    }
                    softmax_in_place(&mut buf);
                    for (i, &b) in buf.iter().enumerate() {
                        value.set(i, j, b);
                    }
                }
            }
        }
        self.record("softmax", value, Op::Softmax(a, axis), &[a])
    }

    fn check_segments(&self, name: &'static str, a: Var, groups: &[usize]) -> Result<()> {
        self.check(a)?;
        let av = self.value(a);
        if av.cols() != 1 || av.rows() != groups.len() {
            return shape_err(
                name,
                format!("{:?} with {} group labels", av.shape(), groups.len()),
            );
        }
        Ok(())
    }

    /// Softmax of an `E × 1` column within each group of rows sharing a label.
    pub fn segment_softmax(&mut self, a: Var, groups: Vec<usize>) -> Result<Var> {
        self.check_segments("segment_softmax", a, &groups)?;
        let x = self.value(a).data().to_vec();
        let lse = segment_logsumexp(&x, &groups);
        let data = x.iter().zip(&groups).map(|(&v, &g)| (v - lse[g]).exp()).collect();
        let value = Tensor::from_vec(x.len(), 1, data)?;
        self.record("segment_softmax", value, Op::SegmentSoftmax(a, groups), &[a])
    }

    /// Log-softmax of an `E × 1` column within each group of rows.
    pub fn segment_log_softmax(&mut self, a: Var, groups: Vec<usize>) -> Result<Var> {
        self.check_segments("segment_log_softmax", a, &groups)?;
        let x = self.value(a).data().to_vec();
        let lse = segment_logsumexp(&x, &groups);
        let data = x.iter().zip(&groups).map(|(&v, &g)| v - lse[g]).collect();
        let value = Tensor::from_vec(x.len(), 1, data)?;
        self.record("segment_log_softmax", value, Op::SegmentLogSoftmax(a, groups), &[a])
    }

    /// Scatter-add of rows into `n_groups` output rows (empty groups are zero).
    pub fn segment_sum(&mut self, a: Var, groups: Vec<usize>, n_groups: usize) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        if av.rows() != groups.len() || groups.iter().any(|&g| g >= n_groups) {
            return shape_err("segment_sum", "group labels do not match rows");
        }
        let mut value = Tensor::zeros(n_groups, av.cols());
        for (i, &g) in groups.iter().enumerate() {
            for (o, &x) in value.row_mut(g).iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        self.record("segment_sum", value, Op::SegmentSum(a, groups), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        if idx.iter().any(|&i| i >= av.rows()) {
            return shape_err("gather_rows", format!("index out of {} rows", av.rows()));
        }
        let value = av.gather_rows(&idx);
        self.record("gather_rows", value, Op::GatherRows(a, idx), &[a])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return shape_err("concat_rows", format!("{:?} over {:?}", av.shape(), bv.shape()));
        }
        let mut data = av.data().to_vec();
        data.extend_from_slice(bv.data());
        let value = Tensor::from_vec(av.rows() + bv.rows(), av.cols(), data)?;
        self.record("concat_rows", value, Op::ConcatRows(a, b), &[a, b])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return shape_err("concat_cols", format!("{:?} beside {:?}", av.shape(), bv.shape()));
        }
        let mut data = Vec::with_capacity(av.len() + bv.len());
        for i in 0..av.rows() {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        let value = Tensor::from_vec(av.rows(), av.cols() + bv.cols(), data)?;
        self.record("concat_cols", value, Op::ConcatCols(a, b), &[a, b])
    }

    /// Scales row `i` of `x` by `s[i]` for an `n × 1` column `s`.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check(x)?;
        self.check(s)?;
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.cols() != 1 || sv.rows() != xv.rows() {
            return shape_err("mul_col", format!("{:?} by column {:?}", xv.shape(), sv.shape()));
        }
        let mut value = xv.clone();
        for i in 0..value.rows() {
            let c = sv.get(i, 0);
            for v in value.row_mut(i) {
                *v *= c;
            }
        }
        self.record("mul_col", value, Op::MulCol(x, s), &[x, s])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let value = Tensor::scalar(self.value(a).sum());
        self.record("sum", value, Op::Sum(a), &[a])
    }

    /// `Σ w ∘ a` with constant weights of the same shape.
    pub fn weighted_sum(&mut self, a: Var, weights: Tensor<T>) -> Result<Var> {
        self.check(a)?;
        let av = self.value(a);
        if av.shape() != weights.shape() {
            return shape_err(
                "weighted_sum",
                format!("{:?} vs weights {:?}", av.shape(), weights.shape()),
            );
        }
        let s = av.data().iter().zip(weights.data()).map(|(&x, &w)| x * w).sum();
        self.record("weighted_sum", Tensor::scalar(s), Op::WeightedSum(a, weights), &[a])
    }

    /// `Σᵢ wᵢ · BCE(σ(oᵢ), yᵢ)` evaluated in logit space.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<T>, weights: Vec<T>) -> Result<Var> {
        self.check(logits)?;
        let ov = self.value(logits);
        if ov.cols() != 1 || ov.rows() != targets.len() || targets.len() != weights.len() {
            return shape_err(
                "bce_with_logits",
                format!("{:?} with {} targets", ov.shape(), targets.len()),
            );
        }
        let total = ov
            .data()
            .iter()
            .zip(targets.iter().zip(&weights))
            .map(|(&o, (&y, &w))| w * bce_logit(o, y))
            .sum();
        self.record(
            "bce_with_logits",
            Tensor::scalar(total),
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            },
            &[logits],
        )
    }

    /// Training-mode batch normalization over the rows of `x`.
    ///
    /// Returns the output plus the batch mean and population variance per
    /// column (for running-statistics updates).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, Vec<T>, Vec<T>)> {
        self.check(x)?;
        let xv = self.value(x);
        let (n, c) = xv.shape();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        self.check_affine("batch_norm", gamma, beta, c)?;
        let nf = T::lit(n as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for i in 0..n {
            for (m, &v) in mean.iter_mut().zip(xv.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        for i in 0..n {
            for j in 0..c {
                let d = xv.get(i, j) - mean[j];
                var[j] += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xhat = normalize(xv, &mean, &inv_std);
        let value = affine(&xhat, self.value(gamma), self.value(beta));
        let out = self.record(
            "batch_norm",
            value,
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )?;
        Ok((out, mean, var))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Var> {
        self.check(x)?;
        let c = self.value(x).cols();
        self.check_affine("batch_norm", gamma, beta, c)?;
        if mean.len() != c || var.len() != c {
            return shape_err("batch_norm", "running statistics width mismatch");
        }
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let xhat = normalize(self.value(x), mean, &inv_std);
        let value = affine(&xhat, self.value(gamma), self.value(beta));
        self.record(
            "batch_norm",
            value,
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    fn check_affine(&self, name: &'static str, gamma: Var, beta: Var, c: usize) -> Result<()> {
        self.check(gamma)?;
        self.check(beta)?;
        if self.shape(gamma) != (1, c) || self.shape(beta) != (1, c) {
            return shape_err(name, format!("gamma/beta must be 1x{c}"));
        }
        Ok(())
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if loss.tape != self.id || loss.idx >= self.nodes.len() {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        if self.nodes[loss.idx].value.shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes[loss.idx].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.idx] = Some(Tensor::scalar(T::one()));

        for idx in (0..=loss.idx).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.idx].value;
        let y = &node.value;
        let mut acc = |v: Var, delta: Tensor<T>| {
            if !self.nodes[v.idx].requires_grad {
                return;
            }
            match &mut grads[v.idx] {
                Some(t) => t.add_assign(&delta),
                slot => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMulT(x, w) => {
                let (xv, wv) = (val(*x), val(*w));
                let (n, k) = xv.shape();
                let m = wv.rows();
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(n, k);
                    for i in 0..n {
                        let gi = g.row(i);
                        let dxr = dx.row_mut(i);
                        for (j, &gij) in gi.iter().enumerate() {
                            if gij == T::zero() {
                                continue;
                            }
                            for (d, &wv) in dxr.iter_mut().zip(wv.row(j)) {
                                *d += gij * wv;
                            }
                        }
                    }
                    acc(*x, dx);
                }
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(m, k);
                    for i in 0..n {
                        let xr = xv.row(i);
                        for (j, &gij) in g.row(i).iter().enumerate() {
                            if gij == T::zero() {
                                continue;
                            }
                            for (d, &xv) in dw.row_mut(j).iter_mut().zip(xr) {
                                *d += gij * xv;
                            }
                        }
                    }
                    acc(*w, dw);
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                let mut db = Tensor::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (d, &v) in db.data_mut().iter_mut().zip(g.row(i)) {
                        *d += v;
                    }
                }
                acc(*b, db);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, zip_map(g, bv, |gi, bi| gi * bi));
                acc(*b, zip_map(g, av, |gi, ai| gi * ai));
            }
            Op::Scale(a, c) => acc(*a, g.map(|v| v * *c)),
            Op::Relu(a) => acc(
                *a,
                zip_map(g, val(*a), |gi, xi| if xi > T::zero() { gi } else { T::zero() }),
            ),
            Op::LeakyRelu(a, slope) => acc(
                *a,
                zip_map(g, val(*a), |gi, xi| if xi > T::zero() { gi } else { gi * *slope }),
            ),
            Op::Sigmoid(a) => acc(*a, zip_map(g, y, |gi, yi| gi * yi * (T::one() - yi))),
            Op::Tanh(a) => acc(*a, zip_map(g, y, |gi, yi| gi * (T::one() - yi * yi))),
            Op::Abs(a) => acc(
                *a,
                zip_map(g, val(*a), |gi, xi| {
                    if xi > T::zero() {
                        gi
                    } else if xi < T::zero() {
                        -gi
                    } else {
                        T::zero()
                    }
                }),
            ),
            Op::Softmax(a, axis) => {
                let (n, c) = y.shape();
                let mut dx = Tensor::zeros(n, c);
                match axis {
                    Axis::Rows => {
                        for i in 0..n {
                            let dot: T = g.row(i).iter().zip(y.row(i)).map(|(&a, &b)| a * b).sum();
                            for j in 0..c {
                                dx.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                            }
                        }
                    }
                    Axis::Cols => {
                        for j in 0..c {
                            let dot: T = (0..n).map(|i| g.get(i, j) * y.get(i, j)).sum();
                            for i in 0..n {
                                dx.set(i, j, y.get(i, j) * (g.get(i, j) - dot));
                            }
                        }
                    }
                }
                acc(*a, dx);
            }
            Op::SegmentSoftmax(a, groups) => {
                let n_groups = groups.iter().max().map_or(0, |&m| m + 1);
                let mut dot = vec![T::zero(); n_groups];
                for (i, &gr) in groups.iter().enumerate() {
                    dot[gr] += g.data()[i] * y.data()[i];
                }
                let data = groups
                    .iter()
                    .enumerate()
                    .map(|(i, &gr)| y.data()[i] * (g.data()[i] - dot[gr]))
                    .collect();
                acc(*a, Tensor::from_vec(groups.len(), 1, data).expect("shape"));
            }
            Op::SegmentLogSoftmax(a, groups) => {
                let n_groups = groups.iter().max().map_or(0, |&m| m + 1);
                let mut gsum = vec![T::zero(); n_groups];
                for (i, &gr) in groups.iter().enumerate() {
                    gsum[gr] += g.data()[i];
                }
                let data = groups
                    .iter()
                    .enumerate()
                    .map(|(i, &gr)| g.data()[i] - y.data()[i].exp() * gsum[gr])
                    .collect();
                acc(*a, Tensor::from_vec(groups.len(), 1, data).expect("shape"));
            }
            Op::SegmentSum(a, groups) => {
                acc(*a, g.gather_rows(groups));
            }
            Op::GatherRows(a, idx) => {
                let av = val(*a);
                let mut da = Tensor::zeros(av.rows(), av.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (d, &v) in da.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*a, da);
            }
            Op::ConcatRows(a, b) => {
                let split = val(*a).len();
                let (ar, br) = (val(*a).rows(), val(*b).rows());
                let c = g.cols();
                acc(*a, Tensor::from_vec(ar, c, g.data()[..split].to_vec()).expect("shape"));
                acc(*b, Tensor::from_vec(br, c, g.data()[split..].to_vec()).expect("shape"));
            }
            Op::ConcatCols(a, b) => {
                let (ac, bc) = (val(*a).cols(), val(*b).cols());
                let n = g.rows();
                let mut da = Vec::with_capacity(n * ac);
                let mut db = Vec::with_capacity(n * bc);
                for i in 0..n {
                    let r = g.row(i);
                    da.extend_from_slice(&r[..ac]);
                    db.extend_from_slice(&r[ac..]);
                }
                acc(*a, Tensor::from_vec(n, ac, da).expect("shape"));
                acc(*b, Tensor::from_vec(n, bc, db).expect("shape"));
            }
            Op::MulCol(x, s) => {
                let (xv, sv) = (val(*x), val(*s));
                let mut dx = g.clone();
                let mut ds = Tensor::zeros(sv.rows(), 1);
                for i in 0..xv.rows() {
                    let c = sv.get(i, 0);
                    let mut dot = T::zero();
                    for (d, &xi) in dx.row_mut(i).iter_mut().zip(xv.row(i)) {
                        dot += *d * xi;
                        *d *= c;
                    }
                    ds.set(i, 0, dot);
                }
                acc(*x, dx);
                acc(*s, ds);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::filled(r, c, g.data()[0]));
            }
            Op::WeightedSum(a, w) => {
                let g0 = g.data()[0];
                acc(*a, w.map(|v| v * g0));
            }
            Op::BceWithLogits {
                logits,
                targets,
                weights,
            } => {
                let g0 = g.data()[0];
                let ov = val(*logits);
                let data = ov
                    .data()
                    .iter()
                    .zip(targets.iter().zip(weights))
                    .map(|(&o, (&t, &w))| g0 * w * (sigmoid(o) - t))
                    .collect();
                acc(*logits, Tensor::from_vec(ov.rows(), 1, data).expect("shape"));
            }
            Op::BatchNormTrain {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c) = xhat.shape();
                let nf = T::lit(n as f64);
                let gam = val(*gamma);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                for i in 0..n {
                    for j in 0..c {
                        sum_g[j] += g.get(i, j);
                        sum_gx[j] += g.get(i, j) * xhat.get(i, j);
                    }
                }
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(n, c);
                    for i in 0..n {
                        for j in 0..c {
                            let k = gam.data()[j] * inv_std[j] / nf;
                            let v = nf * g.get(i, j) - sum_g[j] - xhat.get(i, j) * sum_gx[j];
                            dx.set(i, j, k * v);
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, Tensor::row_vector(&sum_gx));
                acc(*beta, Tensor::row_vector(&sum_g));
            }
            Op::BatchNormInfer {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (n, c) = xhat.shape();
                let gam = val(*gamma);
                let mut sum_g = vec![T::zero(); c];
                let mut sum_gx = vec![T::zero(); c];
                let mut dx = Tensor::zeros(n, c);
                for i in 0..n {
                    for j in 0..c {
                        sum_g[j] += g.get(i, j);
                        sum_gx[j] += g.get(i, j) * xhat.get(i, j);
                        dx.set(i, j, g.get(i, j) * gam.data()[j] * inv_std[j]);
                    }
                }
                acc(*x, dx);
                acc(*gamma, Tensor::row_vector(&sum_gx));
                acc(*beta, Tensor::row_vector(&sum_g));
            }
        }
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("matching shapes")
}

fn normalize<T: Scalar>(x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> Tensor<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = (*v - mean[j]) * inv_std[j];
        }
    }
    out
}

fn affine<T: Scalar>(xhat: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Tensor<T> {
    let mut out = xhat.clone();
    for i in 0..out.rows() {
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = *v * gamma.data()[j] + beta.data()[j];
        }
    }
    out
}

/// Logistic function, stable for large |x|.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `-[y ln σ(o) + (1-y) ln(1-σ(o))]` without forming `σ(o)`.
pub fn bce_logit<T: Scalar>(o: T, y: T) -> T {
    o.max(T::zero()) - o * y + (T::one() + (-o.abs()).exp()).ln()
}

fn softmax_in_place<T: Scalar>(xs: &mut [T]) {
    let Some(m) = xs.iter().copied().reduce(T::max) else { return };
    let mut s = T::zero();
    for v in xs.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in xs.iter_mut() {
        *v /= s;
    }
}

fn segment_logsumexp<T: Scalar>(x: &[T], groups: &[usize]) -> Vec<T> {
    let n_groups = groups.iter().max().map_or(0, |&m| m + 1);
    let mut max = vec![T::neg_infinity(); n_groups];
    for (&v, &g) in x.iter().zip(groups) {
        max[g] = max[g].max(v);
    }
    let mut s = vec![T::zero(); n_groups];
    for (&v, &g) in x.iter().zip(groups) {
        s[g] += (v - max[g]).exp();
    }
    max.iter()
        .zip(&s)
        .map(|(&m, &s)| if s > T::zero() { m + s.ln() } else { T::zero() })
        .collect()
}
