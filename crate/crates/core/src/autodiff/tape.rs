use std::ops::Range;

use super::Real;
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
///
/// A `Var` is only meaningful for the tape that created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Dense row-major tensor. Immutable once recorded; gradients live on the tape.
#[derive(Debug, Clone)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Backward rule for an operation defined outside this module.
///
/// Receives the op inputs and the upstream gradient of the output, and
/// returns one gradient per input (`None` for inputs that get nothing).
pub trait CustomBackward<T>: Send + Sync {
    fn backward(&self, inputs: &[&Tensor<T>], grad_out: &[T]) -> Vec<Option<Vec<T>>>;
}

enum Op<T> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    WeightedGather {
        x: Var,
        idx: Vec<usize>,
        weights: Vec<T>,
    },
    Reshape(Var),
    ReduceMax {
        x: Var,
        argmax: Vec<u32>,
    },
    RepeatRows(Var),
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    NormalizeCols {
        x: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    AffineCols {
        x: Var,
        scale: Var,
        shift: Var,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomBackward<T>>,
    },
}

/// Ordered record of primitive applications.
///
/// Every op's inputs are recorded before it, so reverse insertion order is a
/// valid topological order for the backward sweep.
pub struct Tape<T: Real> {
    tensors: Vec<Tensor<T>>,
    ops: Vec<Op<T>>,
    grads: Vec<Option<Vec<T>>>,
    frozen: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            frozen: false,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn tensor(&self, v: Var) -> &Tensor<T> {
        &self.tensors[v.0]
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.tensors[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.tensors[v.0].shape
    }

    /// Accumulated gradient. Parameters always have one (zero if untouched);
    /// intermediate tensors only after `backward` reached them.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Scalar value of a single-element tensor.
    pub fn scalar_value(&self, v: Var) -> T {
        self.tensors[v.0].data[0]
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::Shape {
                op,
                left: other.to_vec(),
                right: vec![0, 0],
            }),
        }
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Result<Var> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Linear { x, w, b } => {
                self.rg(*x) || self.rg(*w) || b.map(|b| self.rg(b)).unwrap_or(false)
            }
            Op::Relu(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Reshape(x)
            | Op::RepeatRows(x)
            | Op::SliceCols { x, .. }
            | Op::SliceRows { x, .. }
            | Op::GatherRows { x, .. }
            | Op::WeightedGather { x, .. }
            | Op::ReduceMax { x, .. }
            | Op::NormalizeCols { x, .. }
            | Op::SoftmaxCe { logits: x, .. } => self.rg(*x),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => self.rg(*a) || self.rg(*b),
            Op::AffineCols { x, scale, shift } => self.rg(*x) || self.rg(*scale) || self.rg(*shift),
            Op::ConcatCols(xs) | Op::ConcatRows(xs) | Op::Custom { inputs: xs, .. } => {
                xs.iter().any(|x| self.rg(*x))
            }
        };
        let id = self.tensors.len();
        self.tensors.push(Tensor {
            shape,
            data,
            requires_grad,
        });
        self.ops.push(op);
        self.grads.push(None);
        Ok(Var(id))
    }

    fn rg(&self, v: Var) -> bool {
        self.tensors[v.0].requires_grad
    }

    fn leaf(&mut self, shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        if t.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: "leaf" });
        }
        let id = self.tensors.len();
        let n = t.data.len();
        self.tensors.push(Tensor { requires_grad, ..t });
        self.ops.push(Op::Leaf);
        self.grads
            .push(if requires_grad { Some(vec![T::zero(); n]) } else { None });
        Ok(Var(id))
    }

    /// Records a constant input.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        self.leaf(shape, data, false)
    }

    /// Records a trainable input; its gradient starts at zero.
    pub fn param(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<Var> {
        self.leaf(shape, data, true)
    }

    pub fn scalar(&mut self, x: T) -> Result<Var> {
        self.constant(vec![1], vec![x])
    }

    /// Shared affine map `x·W + b` applied to every row of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, cin) = self.dims2(x, "linear")?;
        let (win, cout) = self.dims2(w, "linear")?;
        if win != cin {
            return Err(Error::Shape {
                op: "linear",
                left: self.shape(x).to_vec(),
                right: self.shape(w).to_vec(),
            });
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::Shape {
                    op: "linear bias",
                    left: self.shape(w).to_vec(),
                    right: self.shape(b).to_vec(),
                });
            }
        }
        let xs = self.value(x);
        let ws = self.value(w);
        let mut out = vec![T::zero(); n * cout];
        for (i, row) in out.chunks_exact_mut(cout).enumerate() {
            if let Some(b) = b {
                row.copy_from_slice(self.value(b));
            }
            for (k, &xv) in xs[i * cin..(i + 1) * cin].iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                for (o, &wv) in row.iter_mut().zip(&ws[k * cout..(k + 1) * cout]) {
                    *o += xv * wv;
                }
            }
        }
        self.push("linear", vec![n, cout], out, Op::Linear { x, w, b })
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v.max(T::zero())).collect();
        self.push("relu", self.shape(x).to_vec(), out, Op::Relu(x))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        self.push("add", self.shape(a).to_vec(), out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        self.push("sub", self.shape(a).to_vec(), out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x * y).collect();
        self.push("mul", self.shape(a).to_vec(), out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.value(x).iter().map(|&v| v * s).collect();
        self.push("scale", self.shape(x).to_vec(), out, Op::Scale(x, s))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::EmptyReduction { op: "mean" });
        }
        let s: T = self.value(x).iter().copied().sum();
        self.push("mean", vec![1], vec![s / T::cast(n as f64)], Op::Mean(x))
    }

    /// Column-wise concatenation of 2-D tensors sharing a row count.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(Error::EmptyReduction { op: "concat" })?;
        let (n, _) = self.dims2(first, "concat")?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (r, c) = self.dims2(x, "concat")?;
            if r != n {
                return Err(Error::Shape {
                    op: "concat",
                    left: self.shape(first).to_vec(),
                    right: self.shape(x).to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for (&x, &c) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x)[i * c..(i + 1) * c]);
            }
        }
        self.push("concat", vec![n, total], out, Op::ConcatCols(xs.to_vec()))
    }

    /// Row-wise stacking of 2-D tensors sharing a column count.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(Error::EmptyReduction { op: "concat_rows" })?;
        let (_, c) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let (r, cc) = self.dims2(x, "concat_rows")?;
            if cc != c {
                return Err(Error::Shape {
                    op: "concat_rows",
                    left: self.shape(first).to_vec(),
                    right: self.shape(x).to_vec(),
                });
            }
            rows += r;
            out.extend_from_slice(self.value(x));
        }
        self.push("concat_rows", vec![rows, c], out, Op::ConcatRows(xs.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, cols: Range<usize>) -> Result<Var> {
        let (n, c) = self.dims2(x, "slice_cols")?;
        if cols.start > cols.end || cols.end > c {
            return Err(Error::Shape {
                op: "slice_cols",
                left: vec![n, c],
                right: vec![cols.start, cols.end],
            });
        }
        let w = cols.len();
        let mut out = Vec::with_capacity(n * w);
        for row in self.value(x).chunks_exact(c) {
            out.extend_from_slice(&row[cols.clone()]);
        }
        self.push("slice_cols", vec![n, w], out, Op::SliceCols { x, start: cols.start })
    }

    pub fn slice_rows(&mut self, x: Var, rows: Range<usize>) -> Result<Var> {
        let (n, c) = self.dims2(x, "slice_rows")?;
        if rows.start > rows.end || rows.end > n {
            return Err(Error::Shape {
                op: "slice_rows",
                left: vec![n, c],
                right: vec![rows.start, rows.end],
            });
        }
        let out = self.value(x)[rows.start * c..rows.end * c].to_vec();
        self.push(
            "slice_rows",
            vec![rows.len(), c],
            out,
            Op::SliceRows { x, start: rows.start },
        )
    }

    /// `out[i] = x[idx[i]]`. Backward scatters (adds) into the source rows.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2(x, "gather_rows")?;
        let xs = self.value(x);
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    len: n,
                });
            }
            out.extend_from_slice(&xs[i * c..(i + 1) * c]);
        }
        self.push(
            "gather_rows",
            vec![idx.len(), c],
            out,
            Op::GatherRows { x, idx: idx.to_vec() },
        )
    }

    /// `out[i] = Σ_j weights[i·k + j] · x[idx[i·k + j]]` with `k = idx.len() / rows_out`.
    /// The terms are added in ascending `j`.
    pub fn weighted_gather(&mut self, x: Var, idx: &[usize], weights: &[T], rows_out: usize) -> Result<Var> {
        let (n, c) = self.dims2(x, "weighted_gather")?;
        if idx.len() != weights.len() || rows_out == 0 || idx.len() % rows_out != 0 {
            return Err(Error::Shape {
                op: "weighted_gather",
                left: vec![idx.len(), rows_out],
                right: vec![weights.len()],
            });
        }
        let k = idx.len() / rows_out;
        let xs = self.value(x);
        let mut out = vec![T::zero(); rows_out * c];
        for (i, row) in out.chunks_exact_mut(c).enumerate() {
            for j in i * k..(i + 1) * k {
                let src = idx[j];
                if src >= n {
                    return Err(Error::IndexOutOfRange {
                        op: "weighted_gather",
                        index: src,
                        len: n,
                    });
                }
                let w = weights[j];
                for (o, &v) in row.iter_mut().zip(&xs[src * c..(src + 1) * c]) {
                    *o += w * v;
                }
            }
        }
        self.push(
            "weighted_gather",
            vec![rows_out, c],
            out,
            Op::WeightedGather {
                x,
                idx: idx.to_vec(),
                weights: weights.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::Shape {
                op: "reshape",
                left: self.shape(x).to_vec(),
                right: shape,
            });
        }
        let out = self.value(x).to_vec();
        self.push("reshape", shape, out, Op::Reshape(x))
    }

    /// Max over the middle axis of `[N, K, C]`. Gradient goes to the lowest
    /// `k` attaining the maximum.
    pub fn reduce_max(&mut self, x: Var) -> Result<Var> {
        let (n, k, c) = match self.shape(x) {
            [n, k, c] => (*n, *k, *c),
            other => {
                return Err(Error::Shape {
                    op: "reduce_max",
                    left: other.to_vec(),
                    right: vec![0, 0, 0],
                })
            }
        };
        if k == 0 {
            return Err(Error::EmptyReduction { op: "reduce_max" });
        }
        let xs = self.value(x);
        let mut out = Vec::with_capacity(n * c);
        let mut argmax = Vec::with_capacity(n * c);
        for i in 0..n {
            let block = &xs[i * k * c..(i + 1) * k * c];
            out.extend_from_slice(&block[..c]);
            argmax.extend(std::iter::repeat(0u32).take(c));
            let base = i * c;
            for kk in 1..k {
                for (ch, &v) in block[kk * c..(kk + 1) * c].iter().enumerate() {
                    if v > out[base + ch] {
                        out[base + ch] = v;
                        argmax[base + ch] = kk as u32;
                    }
                }
            }
        }
        self.push("reduce_max", vec![n, c], out, Op::ReduceMax { x, argmax })
    }

    /// Broadcasts a `[1, C]` row to `[n, C]`.
    pub fn repeat_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "repeat_rows")?;
        if r != 1 {
            return Err(Error::Shape {
                op: "repeat_rows",
                left: vec![r, c],
                right: vec![1, c],
            });
        }
        let row = self.value(x);
        let mut out = Vec::with_capacity(n * c);
        for _ in 0..n {
            out.extend_from_slice(row);
        }
        self.push("repeat_rows", vec![n, c], out, Op::RepeatRows(x))
    }

    /// Mean over rows of `-log softmax(logits)[label]`, stabilised by the
    /// per-row maximum.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.dims2(logits, "softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: vec![n, c],
                right: vec![labels.len()],
            });
        }
        if n == 0 {
            return Err(Error::EmptyReduction {
                op: "softmax_cross_entropy",
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label: bad, classes: c });
        }
        let zs = self.value(logits);
        let mut probs = Vec::with_capacity(n * c);
        let mut total = 0.0f64;
        for (row, &label) in zs.chunks_exact(c).zip(labels) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = row.iter().map(|&z| (z - m).exp()).collect();
            let s: T = exps.iter().copied().sum();
            total += (s.ln() + m - row[label]).as_f64();
            probs.extend(exps.into_iter().map(|e| e / s));
        }
        let loss = T::cast(total / n as f64);
        self.push(
            "softmax_cross_entropy",
            vec![1],
            vec![loss],
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        )
    }

    /// Standardises every column of `[N, C]` to zero mean and unit variance
    /// over the rows.
    pub fn normalize_cols(&mut self, x: Var, eps: T) -> Result<Var> {
        let (n, c) = self.dims2(x, "normalize_cols")?;
        if n == 0 {
            return Err(Error::EmptyReduction { op: "normalize_cols" });
        }
        let xs = self.value(x);
        let nf = T::cast(n as f64);
        let mut mean = vec![T::zero(); c];
        for row in xs.chunks_exact(c) {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![T::zero(); c];
        for row in xs.chunks_exact(c) {
            for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let inv_std: Vec<T> = var.iter().map(|&s| T::one() / (s / nf + eps).sqrt()).collect();
        let mut xhat = Vec::with_capacity(n * c);
        for row in xs.chunks_exact(c) {
            for ((&v, &m), &is) in row.iter().zip(&mean).zip(&inv_std) {
                xhat.push((v - m) * is);
            }
        }
        let out = xhat.clone();
        self.push(
            "normalize_cols",
            vec![n, c],
            out,
            Op::NormalizeCols { x, xhat, inv_std },
        )
    }

    /// `y[i, c] = x[i, c]·scale[c] + shift[c]`.
    pub fn affine_cols(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        let (n, c) = self.dims2(x, "affine_cols")?;
        if self.shape(scale) != [c] || self.shape(shift) != [c] {
            return Err(Error::Shape {
                op: "affine_cols",
                left: vec![n, c],
                right: self.shape(scale).to_vec(),
            });
        }
        let (s, b) = (self.value(scale), self.value(shift));
        let mut out = Vec::with_capacity(n * c);
        for row in self.value(x).chunks_exact(c) {
            for ((&v, &sv), &bv) in row.iter().zip(s).zip(b) {
                out.push(v * sv + bv);
            }
        }
        self.push("affine_cols", vec![n, c], out, Op::AffineCols { x, scale, shift })
    }

    /// Records an op whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        name: &'static str,
        inputs: &[Var],
        shape: Vec<usize>,
        data: Vec<T>,
        rule: Box<dyn CustomBackward<T>>,
    ) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        self.push(
            name,
            t.shape,
            t.data,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
        )
    }

    /// Reverse sweep from a scalar root. Freezes the tape.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.frozen {
            return Err(Error::TapeFrozen);
        }
        if self.tensors[root.0].data.len() != 1 {
            return Err(Error::NonScalarRoot(self.tensors[root.0].shape.clone()));
        }
        self.frozen = true;
        if !self.tensors[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0].get_or_insert_with(|| vec![T::zero()])[0] += T::one();
        let Tape {
            tensors, ops, grads, ..
        } = self;
        for id in (0..=root.0).rev() {
            if !tensors[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            propagate(tensors, &ops[id], grads, id, &g);
            grads[id] = Some(g);
        }
        Ok(())
    }
}

fn slot<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], tensors: &[Tensor<T>], v: Var) -> Option<&'a mut Vec<T>> {
    let t = &tensors[v.0];
    if !t.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); t.data.len()]))
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn cols_of<T: Real>(t: &Tensor<T>) -> usize {
    *t.shape.last().unwrap_or(&1)
}

fn propagate<T: Real>(tensors: &[Tensor<T>], op: &Op<T>, grads: &mut [Option<Vec<T>>], id: usize, g: &[T]) {
    match op {
        Op::Leaf => {}
        Op::Linear { x, w, b } => {
            let (xs, ws) = (&tensors[x.0].data, &tensors[w.0].data);
            let cin = cols_of(&tensors[x.0]);
            let cout = cols_of(&tensors[id]);
            if let Some(dx) = slot(grads, tensors, *x) {
                let mut wt = vec![T::zero(); cin * cout];
                for k in 0..cin {
                    for j in 0..cout {
                        wt[j * cin + k] = ws[k * cout + j];
                    }
                }
                for (grow, dxrow) in g.chunks_exact(cout).zip(dx.chunks_exact_mut(cin)) {
                    for (j, &gv) in grow.iter().enumerate() {
                        if gv == T::zero() {
                            continue;
                        }
                        for (d, &wv) in dxrow.iter_mut().zip(&wt[j * cin..(j + 1) * cin]) {
                            *d += gv * wv;
                        }
                    }
                }
            }
            if let Some(dw) = slot(grads, tensors, *w) {
                for (grow, xrow) in g.chunks_exact(cout).zip(xs.chunks_exact(cin)) {
                    for (k, &xv) in xrow.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        for (d, &gv) in dw[k * cout..(k + 1) * cout].iter_mut().zip(grow) {
                            *d += xv * gv;
                        }
                    }
                }
            }
            if let Some(b) = b {
                if let Some(db) = slot(grads, tensors, *b) {
                    for grow in g.chunks_exact(cout) {
                        add_into(db, grow);
                    }
                }
            }
        }
        Op::Relu(x) => {
            let xs = &tensors[x.0].data;
            if let Some(dx) = slot(grads, tensors, *x) {
                for ((d, &gv), &xv) in dx.iter_mut().zip(g).zip(xs) {
                    if xv > T::zero() {
                        *d += gv;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(da) = slot(grads, tensors, *a) {
                add_into(da, g);
            }
            if let Some(db) = slot(grads, tensors, *b) {
                add_into(db, g);
            }
        }
        Op::Sub(a, b) => {
            if let Some(da) = slot(grads, tensors, *a) {
                add_into(da, g);
            }
            if let Some(db) = slot(grads, tensors, *b) {
                for (d, &gv) in db.iter_mut().zip(g) {
                    *d -= gv;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&tensors[a.0].data, &tensors[b.0].data);
            if let Some(da) = slot(grads, tensors, *a) {
                for ((d, &gv), &y) in da.iter_mut().zip(g).zip(bv) {
                    *d += gv * y;
                }
            }
            if let Some(db) = slot(grads, tensors, *b) {
                for ((d, &gv), &x) in db.iter_mut().zip(g).zip(av) {
                    *d += gv * x;
                }
            }
        }
        Op::Scale(x, s) => {
            if let Some(dx) = slot(grads, tensors, *x) {
                for (d, &gv) in dx.iter_mut().zip(g) {
                    *d += gv * *s;
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = slot(grads, tensors, *x) {
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Mean(x) => {
            let n = T::cast(tensors[x.0].data.len() as f64);
            if let Some(dx) = slot(grads, tensors, *x) {
                dx.iter_mut().for_each(|d| *d += g[0] / n);
            }
        }
        Op::ConcatCols(xs) => {
            let total = cols_of(&tensors[id]);
            let mut offset = 0;
            for x in xs {
                let c = cols_of(&tensors[x.0]);
                if let Some(dx) = slot(grads, tensors, *x) {
                    for (drow, grow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(total)) {
                        add_into(drow, &grow[offset..offset + c]);
                    }
                }
                offset += c;
            }
        }
        Op::ConcatRows(xs) => {
            let mut offset = 0;
            for x in xs {
                let len = tensors[x.0].data.len();
                if let Some(dx) = slot(grads, tensors, *x) {
                    add_into(dx, &g[offset..offset + len]);
                }
                offset += len;
            }
        }
        Op::SliceCols { x, start } => {
            let c = cols_of(&tensors[x.0]);
            let w = cols_of(&tensors[id]);
            if let Some(dx) = slot(grads, tensors, *x) {
                for (drow, grow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(w)) {
                    add_into(&mut drow[*start..*start + w], grow);
                }
            }
        }
        Op::SliceRows { x, start } => {
            let c = cols_of(&tensors[x.0]);
            if let Some(dx) = slot(grads, tensors, *x) {
                add_into(&mut dx[start * c..start * c + g.len()], g);
            }
        }
        Op::GatherRows { x, idx } => {
            let c = cols_of(&tensors[x.0]);
            if let Some(dx) = slot(grads, tensors, *x) {
                for (&i, grow) in idx.iter().zip(g.chunks_exact(c)) {
                    add_into(&mut dx[i * c..(i + 1) * c], grow);
                }
            }
        }
        Op::WeightedGather { x, idx, weights } => {
            let c = cols_of(&tensors[x.0]);
            let rows_out = tensors[id].shape[0];
            let k = idx.len() / rows_out;
            if let Some(dx) = slot(grads, tensors, *x) {
                for (i, grow) in g.chunks_exact(c).enumerate() {
                    for j in i * k..(i + 1) * k {
                        let w = weights[j];
                        let src = idx[j];
                        for (d, &gv) in dx[src * c..(src + 1) * c].iter_mut().zip(grow) {
                            *d += w * gv;
                        }
                    }
                }
            }
        }
        Op::Reshape(x) => {
            if let Some(dx) = slot(grads, tensors, *x) {
                add_into(dx, g);
            }
        }
        Op::ReduceMax { x, argmax } => {
            let shape = &tensors[x.0].shape;
            let (k, c) = (shape[1], shape[2]);
            if let Some(dx) = slot(grads, tensors, *x) {
                for (pos, (&gv, &am)) in g.iter().zip(argmax).enumerate() {
                    let (n, ch) = (pos / c, pos % c);
                    dx[n * k * c + am as usize * c + ch] += gv;
                }
            }
        }
        Op::RepeatRows(x) => {
            let c = cols_of(&tensors[x.0]);
            if let Some(dx) = slot(grads, tensors, *x) {
                for grow in g.chunks_exact(c) {
                    add_into(dx, grow);
                }
            }
        }
        Op::SoftmaxCe { logits, labels, probs } => {
            let c = cols_of(&tensors[logits.0]);
            let scale = g[0] / T::cast(labels.len() as f64);
            if let Some(dz) = slot(grads, tensors, *logits) {
                for (i, (drow, prow)) in dz.chunks_exact_mut(c).zip(probs.chunks_exact(c)).enumerate() {
                    for (j, (d, &p)) in drow.iter_mut().zip(prow).enumerate() {
                        let target = if j == labels[i] { T::one() } else { T::zero() };
                        *d += scale * (p - target);
                    }
                }
            }
        }
        Op::NormalizeCols { x, xhat, inv_std } => {
            let c = inv_std.len();
            let n = g.len() / c;
            let nf = T::cast(n as f64);
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for (grow, xrow) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for j in 0..c {
                    sum_g[j] += grow[j];
                    sum_gx[j] += grow[j] * xrow[j];
                }
            }
            if let Some(dx) = slot(grads, tensors, *x) {
                for ((drow, grow), xrow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)).zip(xhat.chunks_exact(c)) {
                    for j in 0..c {
                        drow[j] += inv_std[j] / nf * (nf * grow[j] - sum_g[j] - xrow[j] * sum_gx[j]);
                    }
                }
            }
        }
        Op::AffineCols { x, scale, shift } => {
            let xs = &tensors[x.0].data;
            let s = &tensors[scale.0].data;
            let c = s.len();
            if let Some(dx) = slot(grads, tensors, *x) {
                for (drow, grow) in dx.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                    for ((d, &gv), &sv) in drow.iter_mut().zip(grow).zip(s) {
                        *d += gv * sv;
                    }
                }
            }
            if let Some(ds) = slot(grads, tensors, *scale) {
                for (grow, xrow) in g.chunks_exact(c).zip(xs.chunks_exact(c)) {
                    for ((d, &gv), &xv) in ds.iter_mut().zip(grow).zip(xrow) {
                        *d += gv * xv;
                    }
                }
            }
            if let Some(db) = slot(grads, tensors, *shift) {
                for grow in g.chunks_exact(c) {
                    add_into(db, grow);
                }
            }
        }
        Op::Custom { inputs, rule } => {
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| &tensors[v.0]).collect();
            let parts = rule.backward(&ins, g);
            for (v, part) in inputs.iter().zip(parts) {
                if let (Some(part), Some(dv)) = (part, slot(grads, tensors, *v)) {
                    add_into(dv, &part);
                }
            }
        }
    }
}
