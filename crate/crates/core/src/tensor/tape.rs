use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Gradients, ParamId, ParamStore};
use super::{gemm_acc, Matrix, Scalar};
use crate::error::{Error, Result};

/// Segment id marking a row that takes no part in a segment reduction.
pub const EXCLUDED: usize = usize::MAX;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    SegmentMean(Var, Arc<[usize]>, Vec<usize>),
    SegmentSoftmax(Var, Arc<[usize]>, usize),
    RowSum(Var),
    Blend(Var, Var, Arc<[bool]>),
    CrossEntropy(Var, Arc<[usize]>, Matrix<T>),
    SumAll(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in reverse.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    frozen: HashSet<ParamId>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            frozen: HashSet::new(),
            dropout: None,
        }
    }

    /// Turns [`Tape::dropout`] on: each later call zeroes entries with
    /// probability `rate` and rescales the survivors.
    pub fn enable_dropout(&mut self, rate: f64, seed: u64) {
        if rate > 0.0 {
            self.dropout = Some((rate.min(0.99), ChaCha8Rng::seed_from_u64(seed)));
        }
    }

    /// Inverted dropout; the identity unless enabled.
    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((rate, rng)) = self.dropout.as_mut() else { return x };
        let (rows, cols) = self.nodes[x.0].value.shape();
        let keep = T::lit(1.0 / (1.0 - *rate));
        let mask: Vec<T> = (0..rows * cols)
            .map(|_| if rng.random_bool(*rate) { T::zero() } else { keep })
            .collect();
        let mask = self.constant(Matrix::from_vec(rows, cols, mask));
        self.mul(x, mask)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v).data()[0]
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward_with_inputs`].
    pub fn input(&mut self, value: Matrix<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a parameter once per tape; repeated calls return the same var.
    /// Frozen parameters are recorded as constants.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let trainable = !self.frozen.contains(&id);
        let op = if trainable { Op::Param(id) } else { Op::Leaf };
        let v = self.push(store.get(id).clone(), op, trainable);
        self.params.insert(id, v);
        v
    }

    /// Excludes parameters from gradient computation on this tape.
    pub fn freeze(&mut self, ids: impl IntoIterator<Item = ParamId>) {
        self.frozen.extend(ids);
    }

    pub fn check_finite(&self, v: Var, phase: impl Into<String>) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { phase: phase.into() })
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(false, self.value(b), false);
        let ng = self.needs(a) || self.needs(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// Adds a `1 x n` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (xv, rv) = (self.value(x), self.value(row));
        assert_eq!(rv.rows(), 1, "add_row expects a single row");
        assert_eq!(xv.cols(), rv.cols(), "add_row width");
        let mut out = xv.clone();
        let r = rv.data();
        for i in 0..out.rows() {
            for (o, &b) in out.row_mut(i).iter_mut().zip(r) {
                *o = *o + b;
            }
        }
        let ng = self.needs(x) || self.needs(row);
        self.push(out, Op::AddRow(x, row), ng)
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Matrix<T> {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "elementwise shape");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Matrix::from_vec(av.rows(), av.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Scales row `i` of `x` by `w[i]` where `w` is `m x 1`.
    pub fn mul_col(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(wv.shape(), (xv.rows(), 1), "mul_col weight shape");
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let s = wv.data()[i];
            for o in out.row_mut(i) {
                *o = *o * s;
            }
        }
        let ng = self.needs(x) || self.needs(w);
        self.push(out, Op::MulCol(x, w), ng)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|a| a * c);
        let ng = self.needs(x);
        self.push(v, Op::Scale(x, c), ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a < T::zero() { T::zero() } else { a });
        let ng = self.needs(x);
        self.push(v, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| T::one() / (T::one() + (-a).exp()));
        let ng = self.needs(x);
        self.push(v, Op::Sigmoid(x), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.tanh());
        let ng = self.needs(x);
        self.push(v, Op::Tanh(x), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), rows, "concat_cols row count");
            let w = pv.cols();
            for i in 0..rows {
                out.row_mut(i)[off..off + w].copy_from_slice(pv.row(i));
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), cols, "concat_rows width");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        assert!(start + width <= xv.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(xv.rows(), width);
        for i in 0..xv.rows() {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + width]);
        }
        let ng = self.needs(x);
        self.push(out, Op::SliceCols(x, start), ng)
    }

    /// Row `r` of the result is row `index[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, index: Arc<[usize]>) -> Var {
        let xv = self.value(x);
        let mut out = Matrix::zeros(index.len(), xv.cols());
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(xv.row(i));
        }
        let ng = self.needs(x);
        self.push(out, Op::GatherRows(x, index), ng)
    }

    /// Sums rows of `x` into `count` buckets; rows tagged [`EXCLUDED`] are skipped.
    pub fn segment_sum(&mut self, x: Var, segments: Arc<[usize]>, count: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(segments.len(), xv.rows(), "segment ids per row");
        let mut out = Matrix::zeros(count, xv.cols());
        for (i, &s) in segments.iter().enumerate() {
            if s == EXCLUDED {
                continue;
            }
            for (o, &v) in out.row_mut(s).iter_mut().zip(xv.row(i)) {
                *o = *o + v;
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::SegmentSum(x, segments), ng)
    }

    /// Per-bucket mean; an empty bucket yields an exact zero row.
    pub fn segment_mean(&mut self, x: Var, segments: Arc<[usize]>, count: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(segments.len(), xv.rows(), "segment ids per row");
        let mut counts = vec![0usize; count];
        let mut out = Matrix::zeros(count, xv.cols());
        for (i, &s) in segments.iter().enumerate() {
            if s == EXCLUDED {
                continue;
            }
            counts[s] += 1;
            for (o, &v) in out.row_mut(s).iter_mut().zip(xv.row(i)) {
                *o = *o + v;
            }
        }
        for (s, &c) in counts.iter().enumerate() {
            if c > 1 {
                let inv = T::one() / T::lit(c as f64);
                for o in out.row_mut(s) {
                    *o = *o * inv;
                }
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::SegmentMean(x, segments, counts), ng)
    }

    /// Softmax of an `m x 1` column within each bucket. Excluded rows get weight 0.
    pub fn segment_softmax(&mut self, x: Var, segments: Arc<[usize]>, count: usize) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.cols(), 1, "segment_softmax expects a column");
        assert_eq!(segments.len(), xv.rows(), "segment ids per row");
        let mut max = vec![T::neg_infinity(); count];
        for (i, &s) in segments.iter().enumerate() {
            if s != EXCLUDED {
                max[s] = max[s].max(xv.data()[i]);
            }
        }
        let mut out = Matrix::zeros(xv.rows(), 1);
        let mut sum = vec![T::zero(); count];
        for (i, &s) in segments.iter().enumerate() {
            if s != EXCLUDED {
                let e = (xv.data()[i] - max[s]).exp();
                out.data_mut()[i] = e;
                sum[s] = sum[s] + e;
            }
        }
        for (i, &s) in segments.iter().enumerate() {
            if s != EXCLUDED {
                out.data_mut()[i] = out.data()[i] / sum[s];
            }
        }
        let ng = self.needs(x);
        self.push(out, Op::SegmentSoftmax(x, segments, count), ng)
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = (0..xv.rows()).map(|i| xv.row(i).iter().copied().sum()).collect();
        let out = Matrix::from_vec(xv.rows(), 1, data);
        let ng = self.needs(x);
        self.push(out, Op::RowSum(x), ng)
    }

    /// Row-wise select: `mask[i] ? new[i] : old[i]`.
    pub fn blend(&mut self, new: Var, old: Var, mask: Arc<[bool]>) -> Var {
        let (nv, ov) = (self.value(new), self.value(old));
        assert_eq!(nv.shape(), ov.shape(), "blend shape");
        assert_eq!(mask.len(), nv.rows(), "blend mask length");
        let mut out = ov.clone();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                out.row_mut(i).copy_from_slice(nv.row(i));
            }
        }
        let ng = self.needs(new) || self.needs(old);
        self.push(out, Op::Blend(new, old, mask), ng)
    }

    /// Mean softmax cross-entropy of `logits` (`b x n`) against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: Arc<[usize]>) -> Var {
        let lv = self.value(logits);
        assert_eq!(targets.len(), lv.rows(), "one target per row");
        let mut probs = Matrix::zeros(lv.rows(), lv.cols());
        let mut loss = T::zero();
        for i in 0..lv.rows() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (p, &z) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (z - max).exp();
                sum = sum + *p;
            }
            for p in probs.row_mut(i) {
                *p = *p / sum;
            }
            loss = loss - (row[targets[i]] - max - sum.ln());
        }
        let b = T::lit(lv.rows().max(1) as f64);
        let out = Matrix::from_vec(1, 1, vec![loss / b]);
        let ng = self.needs(logits);
        self.push(out, Op::CrossEntropy(logits, targets, probs), ng)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let ng = self.needs(x);
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumAll(x), ng)
    }

    /// Reverse pass from a `1 x 1` loss; returns parameter gradients.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        self.backward_with_inputs(loss, &[]).0
    }

    /// Reverse pass that also reports gradients for the listed input leaves.
    pub fn backward_with_inputs(&self, loss: Var, inputs: &[Var]) -> (Gradients<T>, Vec<Matrix<T>>) {
        assert_eq!(self.value(loss).shape(), (1, 1), "loss must be a scalar");
        let mut grads: Vec<Option<Matrix<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![T::one()]));
        let mut out = Gradients::new(0);
        let mut input_grads: HashMap<usize, Matrix<T>> = HashMap::new();
        let wanted: HashSet<usize> = inputs.iter().map(|v| v.0).collect();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    if wanted.contains(&idx) {
                        input_grads.insert(idx, dy);
                    }
                }
                Op::Param(id) => out.accumulate(*id, &dy),
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let g = slot(&mut grads, self, *a);
                        gemm_acc(&dy, false, &self.nodes[b.0].value, true, g);
                    }
                    if self.needs(*b) {
                        let g = slot(&mut grads, self, *b);
                        gemm_acc(&self.nodes[a.0].value, true, &dy, false, g);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.needs(*x) {
                        add_into(slot(&mut grads, self, *x).data_mut(), dy.data());
                    }
                    if self.needs(*row) {
                        let g = slot(&mut grads, self, *row);
                        for i in 0..dy.rows() {
                            add_into(g.data_mut(), dy.row(i));
                        }
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        add_into(slot(&mut grads, self, *a).data_mut(), dy.data());
                    }
                    if self.needs(*b) {
                        add_into(slot(&mut grads, self, *b).data_mut(), dy.data());
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        add_into(slot(&mut grads, self, *a).data_mut(), dy.data());
                    }
                    if self.needs(*b) {
                        let g = slot(&mut grads, self, *b);
                        for (o, &d) in g.data_mut().iter_mut().zip(dy.data()) {
                            *o = *o - d;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let bv = self.nodes[b.0].value.data();
                        let g = slot(&mut grads, self, *a);
                        for ((o, &d), &y) in g.data_mut().iter_mut().zip(dy.data()).zip(bv) {
                            *o = *o + d * y;
                        }
                    }
                    if self.needs(*b) {
                        let av = self.nodes[a.0].value.data();
                        let g = slot(&mut grads, self, *b);
                        for ((o, &d), &x) in g.data_mut().iter_mut().zip(dy.data()).zip(av) {
                            *o = *o + d * x;
                        }
                    }
                }
                Op::MulCol(x, w) => {
                    let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    if self.needs(*x) {
                        let g = slot(&mut grads, self, *x);
                        for i in 0..dy.rows() {
                            let s = wv.data()[i];
                            for (o, &d) in g.row_mut(i).iter_mut().zip(dy.row(i)) {
                                *o = *o + d * s;
                            }
                        }
                    }
                    if self.needs(*w) {
                        let g = slot(&mut grads, self, *w);
                        for i in 0..dy.rows() {
                            let dot: T = dy.row(i).iter().zip(xv.row(i)).map(|(&d, &v)| d * v).sum();
                            g.data_mut()[i] = g.data()[i] + dot;
                        }
                    }
                }
                Op::Scale(x, c) => {
                    let g = slot(&mut grads, self, *x);
                    for (o, &d) in g.data_mut().iter_mut().zip(dy.data()) {
                        *o = *o + d * *c;
                    }
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let g = slot(&mut grads, self, *x);
                    for ((o, &d), &v) in g.data_mut().iter_mut().zip(dy.data()).zip(y) {
                        if v > T::zero() {
                            *o = *o + d;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    let g = slot(&mut grads, self, *x);
                    for ((o, &d), &v) in g.data_mut().iter_mut().zip(dy.data()).zip(y) {
                        *o = *o + d * v * (T::one() - v);
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let g = slot(&mut grads, self, *x);
                    for ((o, &d), &v) in g.data_mut().iter_mut().zip(dy.data()).zip(y) {
                        *o = *o + d * (T::one() - v * v);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols();
                        if self.needs(*p) {
                            let g = slot(&mut grads, self, *p);
                            for i in 0..dy.rows() {
                                add_into(g.row_mut(i), &dy.row(i)[off..off + w]);
                            }
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let cols = dy.cols();
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        if self.needs(*p) {
                            add_into(slot(&mut grads, self, *p).data_mut(), &dy.data()[off..off + n]);
                        }
                        off += n;
                    }
                    debug_assert_eq!(off, dy.rows() * cols);
                }
                Op::SliceCols(x, start) => {
                    let w = dy.cols();
                    let g = slot(&mut grads, self, *x);
                    for i in 0..dy.rows() {
                        add_into(&mut g.row_mut(i)[*start..*start + w], dy.row(i));
                    }
                }
                Op::GatherRows(x, index) => {
                    let g = slot(&mut grads, self, *x);
                    for (r, &i) in index.iter().enumerate() {
                        add_into(g.row_mut(i), dy.row(r));
                    }
                }
                Op::SegmentSum(x, segments) => {
                    let g = slot(&mut grads, self, *x);
                    for (i, &s) in segments.iter().enumerate() {
                        if s != EXCLUDED {
                            add_into(g.row_mut(i), dy.row(s));
                        }
                    }
                }
                Op::SegmentMean(x, segments, counts) => {
                    let g = slot(&mut grads, self, *x);
                    for (i, &s) in segments.iter().enumerate() {
                        if s != EXCLUDED {
                            let inv = T::one() / T::lit(counts[s] as f64);
                            for (o, &d) in g.row_mut(i).iter_mut().zip(dy.row(s)) {
                                *o = *o + d * inv;
                            }
                        }
                    }
                }
                Op::SegmentSoftmax(x, segments, count) => {
                    let y = node.value.data();
                    let mut dots = vec![T::zero(); *count];
                    for (i, &s) in segments.iter().enumerate() {
                        if s != EXCLUDED {
                            dots[s] = dots[s] + y[i] * dy.data()[i];
                        }
                    }
                    let g = slot(&mut grads, self, *x);
                    for (i, &s) in segments.iter().enumerate() {
                        if s != EXCLUDED {
                            g.data_mut()[i] = g.data()[i] + y[i] * (dy.data()[i] - dots[s]);
                        }
                    }
                }
                Op::RowSum(x) => {
                    let g = slot(&mut grads, self, *x);
                    for i in 0..dy.rows() {
                        let d = dy.data()[i];
                        for o in g.row_mut(i) {
                            *o = *o + d;
                        }
                    }
                }
                Op::Blend(new, old, mask) => {
                    if self.needs(*new) {
                        let g = slot(&mut grads, self, *new);
                        for (i, &m) in mask.iter().enumerate() {
                            if m {
                                add_into(g.row_mut(i), dy.row(i));
                            }
                        }
                    }
                    if self.needs(*old) {
                        let g = slot(&mut grads, self, *old);
                        for (i, &m) in mask.iter().enumerate() {
                            if !m {
                                add_into(g.row_mut(i), dy.row(i));
                            }
                        }
                    }
                }
                Op::CrossEntropy(logits, targets, probs) => {
                    let scale = dy.data()[0] / T::lit(probs.rows().max(1) as f64);
                    let g = slot(&mut grads, self, *logits);
                    for i in 0..probs.rows() {
                        for (j, (o, &p)) in g.row_mut(i).iter_mut().zip(probs.row(i)).enumerate() {
                            let t = if j == targets[i] { T::one() } else { T::zero() };
                            *o = *o + (p - t) * scale;
                        }
                    }
                }
                Op::SumAll(x) => {
                    let d = dy.data()[0];
                    let g = slot(&mut grads, self, *x);
                    for o in g.data_mut() {
                        *o = *o + d;
                    }
                }
            }
        }
        let inputs = inputs
            .iter()
            .map(|v| {
                input_grads.remove(&v.0).unwrap_or_else(|| {
                    let val = self.value(*v);
                    Matrix::zeros(val.rows(), val.cols())
                })
            })
            .collect();
        (out, inputs)
    }
}

fn slot<'a, T: Scalar>(grads: &'a mut [Option<Matrix<T>>], tape: &Tape<T>, v: Var) -> &'a mut Matrix<T> {
    grads[v.0].get_or_insert_with(|| {
        let val = tape.value(v);
        Matrix::zeros(val.rows(), val.cols())
    })
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &s) in dst.iter_mut().zip(src) {
        *o = *o + s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(rows, cols, data.to_vec())
    }

    /// Central differences of `f` w.r.t. every entry of every input.
    fn numeric(inputs: &[Matrix<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> Vec<Matrix<f64>> {
        let h = 1e-6;
        let eval = |vals: &[Matrix<f64>]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| t.input(v.clone())).collect();
            let out = f(&mut t, &vars);
            t.scalar(out)
        };
        inputs
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let mut g = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.len() {
                    let mut plus = inputs.to_vec();
                    plus[k].data_mut()[i] += h;
                    let mut minus = inputs.to_vec();
                    minus[k].data_mut()[i] -= h;
                    g.data_mut()[i] = (eval(&plus) - eval(&minus)) / (2.0 * h);
                }
                g
            })
            .collect()
    }

    fn check(inputs: &[Matrix<f64>], f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|v| t.input(v.clone())).collect();
        let out = f(&mut t, &vars);
        let (_, analytic) = t.backward_with_inputs(out, &vars);
        let numeric = numeric(inputs, f);
        for (a, n) in analytic.iter().zip(&numeric) {
            for (x, y) in a.data().iter().zip(n.data()) {
                assert!((x - y).abs() < 1e-6 * (1.0 + y.abs()), "analytic {x} vs numeric {y}");
            }
        }
    }

    fn weights(t: &mut Tape<f64>, rows: usize, cols: usize) -> Var {
        let data = (0..rows * cols).map(|i| ((i * 7 % 11) as f64 - 5.0) / 7.0).collect();
        t.constant(Matrix::from_vec(rows, cols, data))
    }

    #[test]
    fn matmul_bias_and_activations() {
        let x = m(2, 3, &[0.3, -0.2, 0.5, 1.0, 0.1, -0.7]);
        let w = m(3, 2, &[0.2, -0.4, 0.6, 0.1, -0.3, 0.8]);
        let b = m(1, 2, &[0.05, -0.1]);
        check(&[x, w, b], &|t, v| {
            let y = t.matmul(v[0], v[1]);
            let y = t.add_row(y, v[2]);
            let a = t.tanh(y);
            let s = t.sigmoid(y);
            let r = t.relu(y);
            let p = t.mul(a, s);
            let q = t.sub(p, r);
            let q = t.scale(q, 1.7);
            let q = t.add(q, a);
            t.sum_all(q)
        });
    }

    #[test]
    fn concat_slice_gather_blend() {
        let a = m(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let b = m(3, 1, &[-0.1, 0.9, 0.4]);
        check(&[a, b], &|t, v| {
            let c = t.concat_cols(&[v[0], v[1]]);
            let s = t.slice_cols(c, 1, 2);
            let g = t.gather_rows(s, vec![2, 0, 2, 1].into());
            let r = t.concat_rows(&[g, s]);
            let old = t.gather_rows(s, vec![0, 0, 1, 1, 2, 2, 0].into());
            let bl = t.blend(r, old, vec![true, false, true, true, false, true, false].into());
            let w = weights(t, 2, 1);
            let y = t.matmul(bl, w);
            let y = t.tanh(y);
            let sq = t.mul(y, y);
            t.sum_all(sq)
        });
    }

    #[test]
    fn segment_ops() {
        let x = m(5, 2, &[0.1, -0.2, 0.3, 0.5, -0.4, 0.2, 0.7, 0.1, 0.0, 0.3]);
        let seg: Arc<[usize]> = vec![0, 2, 0, EXCLUDED, 2].into();
        check(&[x], &|t, v| {
            let s = t.segment_sum(v[0], seg.clone(), 3);
            let mn = t.segment_mean(v[0], seg.clone(), 3);
            let w = weights(t, 2, 1);
            let logits = t.matmul(v[0], w);
            let att = t.segment_softmax(logits, seg.clone(), 3);
            let weighted = t.mul_col(v[0], att);
            let pooled = t.segment_sum(weighted, seg.clone(), 3);
            let z = t.add(s, mn);
            let z = t.mul(z, pooled);
            let rs = t.row_sum(z);
            let rs = t.tanh(rs);
            t.sum_all(rs)
        });
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = m(3, 4, &[0.1, 0.5, -0.3, 0.0, 1.2, -0.7, 0.3, 0.3, 0.0, 0.0, 0.0, 2.0]);
        check(&[logits], &|t, v| t.cross_entropy(v[0], vec![1, 0, 3].into()));
    }

    #[test]
    fn empty_segment_mean_is_exact_zero() {
        let mut t = Tape::<f32>::new();
        let x = t.constant(Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let m = t.segment_mean(x, vec![0, 0].into(), 2);
        assert_eq!(t.value(m).row(1), &[0.0, 0.0]);
        assert_eq!(t.value(m).row(0), &[2.0, 3.0]);
    }

    #[test]
    fn excluded_rows_get_zero_attention() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Matrix::from_vec(3, 1, vec![5.0, 1.0, 2.0]));
        let a = t.segment_softmax(x, vec![EXCLUDED, 0, 0].into(), 1);
        let v = t.value(a).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] + v[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn params_are_recorded_once_and_accumulate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Matrix::from_vec(1, 1, vec![3.0]));
        let mut t = Tape::new();
        let a = t.param(&store, id);
        let b = t.param(&store, id);
        assert_eq!(a, b);
        let y = t.mul(a, b);
        let grads = t.backward(y);
        assert_eq!(grads.get(id).unwrap().data(), &[6.0]);
    }
}
