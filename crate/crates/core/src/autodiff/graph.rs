//! Tape-based reverse-mode differentiation over dense 2-D tensors.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles.
//! [`Graph::backward`] walks the record in reverse and accumulates exact
//! gradients. Parameters enter the record through [`Graph::param`] and their
//! gradients are added back into the [`ParameterStore`] they came from.
//!
//! Graph aggregations use gather/scatter over explicit row indices rather
//! than sparse matrices.

use std::collections::HashMap;

use super::{ParamId, ParameterStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value in a [`Graph`]. Cheap to copy; only meaningful for the
/// graph that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n_seq: usize,
    l_in: usize,
    l_out: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
}

enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    AddRow(Var, Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    Reshape(Var),
    Relu(Var),
    LayerNorm(Var, Vec<T>),
    Softmax(Var),
    Conv1d(Var, Var, Var, ConvGeom),
    Sum(Var),
    Mean(Var),
    MaskedMean(Var, Vec<bool>, usize),
    SmoothL1(Var, Var),
    Mse(Var, Var),
    CrossEntropy(Var, Vec<usize>, Vec<T>),
    Focal {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
        gamma: T,
        alpha: T,
    },
    BinaryFocal {
        logits: Var,
        targets: Vec<bool>,
        gamma: T,
        alpha: T,
    },
    RowNorm(Var),
    Ln(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Layer-norm epsilon added to the variance.
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Smooth-L1 transition point.
pub const SMOOTH_L1_BETA: f64 = 1.0;

/// A single-threaded computation record.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node of a graph.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; zeros when `v` did not influence the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        let (r, c) = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(r, c, g.clone()).expect("gradient matches node shape"),
            None => Tensor::zeros(r, c),
        }
    }
}

fn same_shape(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch { op, left: a, right: b });
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    fn vals(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant_f64(&mut self, rows: usize, cols: usize, data: &[f64]) -> Result<Var> {
        Ok(self.constant(Tensor::from_f64(rows, cols, data)?))
    }

    /// Binds a stored parameter into this record. Repeated calls return the
    /// same handle, so gradients from every use accumulate on one node.
    pub fn param(&mut self, store: &ParameterStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param, true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: (m, k),
                right: (k2, n),
            });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.vals(a),
            (k as isize, 1),
            self.vals(b),
            (n as isize, 1),
            T::zero(),
            &mut out,
        );
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, node: Op<T>) -> Result<Var> {
        same_shape(op, self.shape(a), self.shape(b))?;
        let (r, c) = self.shape(a);
        let out: Vec<T> = self.vals(a).iter().zip(self.vals(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(r, c, out)?, node, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        let (r, c) = self.shape(a);
        let out = self.vals(a).iter().map(|&x| x * s).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(r, c, out).expect("same shape"), Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        let (r, c) = self.shape(a);
        let out = self.vals(a).iter().map(|&x| x + s).collect();
        let rg = self.rg(&[a]);
        self.push(Tensor::new(r, c, out).expect("same shape"), Op::AddScalar(a), rg)
    }

    /// `x[r, :] + b[0, :]` for every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.shape(x);
        let (br, bc) = self.shape(b);
        if br != 1 || bc != c {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                left: (r, c),
                right: (br, bc),
            });
        }
        let bv = self.vals(b);
        let out = self
            .vals(x)
            .chunks(c.max(1))
            .flat_map(|row| row.iter().zip(bv).map(|(&v, &w)| v + w))
            .collect::<Vec<_>>();
        let out = if c == 0 { Vec::new() } else { out };
        let rg = self.rg(&[x, b]);
        Ok(self.push(Tensor::new(r, c, out)?, Op::AddRow(x, b), rg))
    }

    /// `x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_cols", "no inputs"))?;
        let r = self.shape(first).0;
        for &p in parts {
            if self.shape(p).0 != r {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
        }
        let c: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(r, c, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::invalid("concat_rows", "no inputs"))?;
        let c = self.shape(first).1;
        for &p in parts {
            if self.shape(p).1 != c {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
        }
        let r: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut out = Vec::with_capacity(r * c);
        for &p in parts {
            out.extend_from_slice(self.vals(p));
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(r, c, out)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows of `x` selected (with repetition) by `idx`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::invalid("gather_rows", format!("index {bad} out of {r} rows")));
        }
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(self.value(x).row(i));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(idx.len(), c, out)?, Op::GatherRows(x, idx.to_vec()), rg))
    }

    /// `out[idx[e]] += x[e]` into a fresh `n_out`-row tensor.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], n_out: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if idx.len() != r {
            return Err(Error::invalid(
                "scatter_add_rows",
                format!("{} indices for {r} rows", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(Error::invalid("scatter_add_rows", format!("index {bad} out of {n_out} rows")));
        }
        let mut out = vec![T::zero(); n_out * c];
        let xv = self.vals(x);
        for (e, &i) in idx.iter().enumerate() {
            for j in 0..c {
                out[i * c + j] += xv[e * c + j];
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(n_out, c, out)?, Op::ScatterAddRows(x, idx.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start > end || end > c {
            return Err(Error::invalid("slice_cols", format!("range {start}..{end} of {c} columns")));
        }
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&self.value(x).row(i)[start..end]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(r, w, out)?, Op::SliceCols(x, start), rg))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if r * c != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: (r, c),
                right: (rows, cols),
            });
        }
        let data = self.vals(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(rows, cols, data)?, Op::Reshape(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let out = self.vals(x).iter().map(|&v| v.max(T::zero())).collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(r, c, out).expect("same shape"), Op::Relu(x), rg)
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let eps = T::from_f64(LAYER_NORM_EPS);
        let n = T::from_f64((c) as f64);
        let mut out = Vec::with_capacity(r * c);
        let mut rstds = Vec::with_capacity(r);
        for i in 0..r {
            let row = self.value(x).row(i);
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + eps).sqrt();
            out.extend(row.iter().map(|&v| (v - mean) * rstd));
            rstds.push(rstd);
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(r, c, out).expect("same shape"), Op::LayerNorm(x, rstds), rg)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Var {
        let (r, c) = self.shape(x);
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            out.extend(softmax_row(self.value(x).row(i)));
        }
        let rg = self.rg(&[x]);
        self.push(Tensor::new(r, c, out).expect("same shape"), Op::Softmax(x), rg)
    }

    /// Temporal convolution with kernel 3 and zero padding 1.
    ///
    /// `x` holds `n_seq` sequences stacked row-wise (`n_seq*l_in × c_in`,
    /// time-major within each sequence); `w` is `3*c_in × c_out` with the
    /// kernel tap as the slow index; `b` is `1 × c_out`. The output has
    /// `l_out = (l_in - 1) / stride + 1` rows per sequence.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, n_seq: usize, stride: usize) -> Result<Var> {
        let (xr, c_in) = self.shape(x);
        let (wr, c_out) = self.shape(w);
        if stride == 0 || n_seq == 0 || xr % n_seq != 0 {
            return Err(Error::invalid("conv1d", format!("{xr} rows do not split into {n_seq} sequences")));
        }
        if wr != 3 * c_in {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                left: (xr, c_in),
                right: (wr, c_out),
            });
        }
        same_shape("conv1d", self.shape(b), (1, c_out))?;
        let l_in = xr / n_seq;
        let l_out = (l_in - 1) / stride + 1;
        let geom = ConvGeom {
            n_seq,
            l_in,
            l_out,
            c_in,
            c_out,
            stride,
        };
        let col = im2col(self.vals(x), geom);
        let rows = n_seq * l_out;
        let mut out = vec![T::zero(); rows * c_out];
        let bv = self.vals(b);
        for i in 0..rows {
            out[i * c_out..(i + 1) * c_out].copy_from_slice(bv);
        }
        T::gemm(
            rows,
            3 * c_in,
            c_out,
            &col,
            ((3 * c_in) as isize, 1),
            self.vals(w),
            (c_out as isize, 1),
            T::one(),
            &mut out,
        );
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(Tensor::new(rows, c_out, out)?, Op::Conv1d(x, w, b, geom), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.vals(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.vals(x).len();
        if n == 0 {
            return Err(Error::invalid("mean", "empty input"));
        }
        let s: T = self.vals(x).iter().copied().sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s / T::from_f64((n) as f64)), Op::Mean(x), rg))
    }

    /// Mean over the rows of `x` whose mask entry is set; returns `1 × cols`.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let (r, c) = self.shape(x);
        if mask.len() != r {
            return Err(Error::invalid("masked_mean", format!("mask of {} for {r} rows", mask.len())));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::invalid("masked_mean", "no rows selected"));
        }
        let inv = T::one() / T::from_f64((count) as f64);
        let mut out = vec![T::zero(); c];
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            for (o, &v) in out.iter_mut().zip(self.value(x).row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(1, c, out)?, Op::MaskedMean(x, mask.to_vec(), count), rg))
    }

    /// Mean smooth-L1 (Huber with transition 1.0) over all elements.
    pub fn smooth_l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("smooth_l1", self.shape(pred), self.shape(target))?;
        let n = self.vals(pred).len();
        if n == 0 {
            return Err(Error::invalid("smooth_l1", "empty input"));
        }
        let beta = T::from_f64(SMOOTH_L1_BETA);
        let half = T::from_f64(0.5);
        let s: T = self
            .vals(pred)
            .iter()
            .zip(self.vals(target))
            .map(|(&p, &t)| {
                let d = (p - t).abs();
                if d < beta {
                    half * d * d / beta
                } else {
                    d - half * beta
                }
            })
            .sum();
        let rg = self.rg(&[pred, target]);
        Ok(self.push(
            Tensor::scalar(s / T::from_f64((n) as f64)),
            Op::SmoothL1(pred, target),
            rg,
        ))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape("mse", self.shape(pred), self.shape(target))?;
        let n = self.vals(pred).len();
        if n == 0 {
            return Err(Error::invalid("mse", "empty input"));
        }
        let s: T = self
            .vals(pred)
            .iter()
            .zip(self.vals(target))
            .map(|(&p, &t)| (p - t) * (p - t))
            .sum();
        let rg = self.rg(&[pred, target]);
        Ok(self.push(
            Tensor::scalar(s / T::from_f64((n) as f64)),
            Op::Mse(pred, target),
            rg,
        ))
    }

    fn check_labels(&self, op: &'static str, logits: Var, labels: &[usize]) -> Result<(usize, usize)> {
        let (r, c) = self.shape(logits);
        if labels.len() != r || r == 0 {
            return Err(Error::invalid(op, format!("{} labels for {r} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::invalid(op, format!("label {bad} out of {c} classes")));
        }
        Ok((r, c))
    }

    /// Mean softmax cross-entropy of row logits against class labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = self.check_labels("cross_entropy", logits, labels)?;
        let mut probs = Vec::with_capacity(r * c);
        let mut total = T::zero();
        for (i, &t) in labels.iter().enumerate() {
            let row = self.value(logits).row(i);
            total -= log_softmax_at(row, t);
            probs.extend(softmax_row(row));
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / T::from_f64((r) as f64)),
            Op::CrossEntropy(logits, labels.to_vec(), probs),
            rg,
        ))
    }

    /// Mean categorical focal loss `-alpha (1 - p_t)^gamma log p_t`.
    /// With `gamma = 0, alpha = 1` this is exactly [`Graph::cross_entropy`].
    pub fn focal_loss(&mut self, logits: Var, labels: &[usize], gamma: T, alpha: T) -> Result<Var> {
        let (r, c) = self.check_labels("focal_loss", logits, labels)?;
        if gamma < T::zero() {
            return Err(Error::invalid("focal_loss", "gamma must be nonnegative"));
        }
        let mut probs = Vec::with_capacity(r * c);
        let mut total = T::zero();
        for (i, &t) in labels.iter().enumerate() {
            let row = self.value(logits).row(i);
            let lp = log_softmax_at(row, t);
            let pt = lp.exp();
            total -= alpha * pow_or_one(T::one() - pt, gamma) * lp;
            probs.extend(softmax_row(row));
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / T::from_f64((r) as f64)),
            Op::Focal {
                logits,
                labels: labels.to_vec(),
                probs,
                gamma,
                alpha,
            },
            rg,
        ))
    }

    /// Mean binary focal loss on logits with the alpha-balanced convention:
    /// positives weighted by `alpha`, negatives by `1 - alpha`.
    pub fn binary_focal_loss(&mut self, logits: Var, targets: &[bool], gamma: T, alpha: T) -> Result<Var> {
        let n = self.vals(logits).len();
        if targets.len() != n || n == 0 {
            return Err(Error::invalid(
                "binary_focal_loss",
                format!("{} targets for {n} logits", targets.len()),
            ));
        }
        if gamma < T::zero() {
            return Err(Error::invalid("binary_focal_loss", "gamma must be nonnegative"));
        }
        let mut total = T::zero();
        for (&z, &y) in self.vals(logits).iter().zip(targets) {
            let (sz, at) = if y { (z, alpha) } else { (-z, T::one() - alpha) };
            let lpt = -softplus(-sz);
            let pt = lpt.exp();
            total -= at * pow_or_one(T::one() - pt, gamma) * lpt;
        }
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(total / T::from_f64((n) as f64)),
            Op::BinaryFocal {
                logits,
                targets: targets.to_vec(),
                gamma,
                alpha,
            },
            rg,
        ))
    }

    /// Euclidean norm of each row; returns `rows × 1`.
    pub fn row_norm(&mut self, x: Var) -> Var {
        let (r, _) = self.shape(x);
        let out = (0..r)
            .map(|i| self.value(x).row(i).iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        let rg = self.rg(&[x]);
        self.push(Tensor::new(r, 1, out).expect("r values"), Op::RowNorm(x), rg)
    }

    /// Elementwise natural log; every input must be strictly positive.
    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if let Some(&bad) = self.vals(x).iter().find(|&&v| !(v > T::zero())) {
            return Err(Error::NonPositiveLog {
                op: "ln",
                value: bad.as_f64(),
            });
        }
        let (r, c) = self.shape(x);
        let out = self.vals(x).iter().map(|&v| v.ln()).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(r, c, out)?, Op::Ln(x), rg))
    }

    /// Gradients of the scalar `loss` with respect to every recorded node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.backprop(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    /// Runs [`Graph::gradients`] and adds every bound parameter's gradient
    /// into `store`. Parameters the loss does not reach receive nothing.
    pub fn backward(&self, loss: Var, store: &mut ParameterStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        let mut bound: Vec<_> = self.params.iter().collect();
        bound.sort_by_key(|(id, _)| **id);
        for (&id, &v) in bound {
            if let Some(g) = &grads.grads[v.0] {
                let p = store.get_mut(id);
                for (dst, &src) in p.grad.data_mut().iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
        Ok(())
    }

    fn backprop(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let (rows, cols) = node.value.shape();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = cols;
                if self.requires_grad(*a) {
                    let ga = self.grad_buf(grads, *a);
                    T::gemm(m, n, k, g, (n as isize, 1), self.vals(*b), (1, n as isize), T::one(), ga);
                }
                if self.requires_grad(*b) {
                    let av = self.nodes[a.0].value.data();
                    let gb = self.grad_buf(grads, *b);
                    T::gemm(k, m, n, av, (1, k as isize), g, (n as isize, 1), T::one(), gb);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |dst| add_into(dst, g));
                self.acc(grads, *b, |dst| add_into(dst, g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |dst| add_into(dst, g));
                self.acc(grads, *b, |dst| dst.iter_mut().zip(g).for_each(|(d, &v)| *d -= v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.vals(*a), self.vals(*b));
                self.acc(grads, *a, |dst| {
                    for ((d, &gv), &y) in dst.iter_mut().zip(g).zip(bv) {
                        *d += gv * y;
                    }
                });
                self.acc(grads, *b, |dst| {
                    for ((d, &gv), &x) in dst.iter_mut().zip(g).zip(av) {
                        *d += gv * x;
                    }
                });
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.acc(grads, *a, |dst| dst.iter_mut().zip(g).for_each(|(d, &v)| *d += v * s));
            }
            Op::AddScalar(a) | Op::Reshape(a) => self.acc(grads, *a, |dst| add_into(dst, g)),
            Op::AddRow(x, b) => {
                self.acc(grads, *x, |dst| add_into(dst, g));
                self.acc(grads, *b, |dst| {
                    for row in g.chunks(cols) {
                        add_into(dst, row);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.shape(p).1;
                    self.acc(grads, p, |dst| {
                        for r in 0..rows {
                            add_into(&mut dst[r * pc..(r + 1) * pc], &g[r * cols + off..r * cols + off + pc]);
                        }
                    });
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.vals(p).len();
                    self.acc(grads, p, |dst| add_into(dst, &g[off..off + len]));
                    off += len;
                }
            }
            Op::GatherRows(x, idx) => self.acc(grads, *x, |dst| {
                for (e, &r) in idx.iter().enumerate() {
                    add_into(&mut dst[r * cols..(r + 1) * cols], &g[e * cols..(e + 1) * cols]);
                }
            }),
            Op::ScatterAddRows(x, idx) => self.acc(grads, *x, |dst| {
                for (e, &r) in idx.iter().enumerate() {
                    add_into(&mut dst[e * cols..(e + 1) * cols], &g[r * cols..(r + 1) * cols]);
                }
            }),
            Op::SliceCols(x, start) => {
                let xc = self.shape(*x).1;
                self.acc(grads, *x, |dst| {
                    for r in 0..rows {
                        add_into(&mut dst[r * xc + start..r * xc + start + cols], &g[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = self.vals(*x);
                self.acc(grads, *x, |dst| {
                    for ((d, &gv), &v) in dst.iter_mut().zip(g).zip(xv) {
                        if v > T::zero() {
                            *d += gv;
                        }
                    }
                });
            }
            Op::LayerNorm(x, rstds) => {
                let y = node.value.data();
                let n = T::from_f64((cols) as f64);
                self.acc(grads, *x, |dst| {
                    for r in 0..rows {
                        let gy = &g[r * cols..(r + 1) * cols];
                        let yr = &y[r * cols..(r + 1) * cols];
                        let mean_g = gy.iter().copied().sum::<T>() / n;
                        let mean_gy = gy.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                        for j in 0..cols {
                            dst[r * cols + j] += rstds[r] * (gy[j] - mean_g - yr[j] * mean_gy);
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                self.acc(grads, *x, |dst| {
                    for r in 0..rows {
                        let gy = &g[r * cols..(r + 1) * cols];
                        let yr = &y[r * cols..(r + 1) * cols];
                        let dot = gy.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>();
                        for j in 0..cols {
                            dst[r * cols + j] += yr[j] * (gy[j] - dot);
                        }
                    }
                });
            }
            Op::Conv1d(x, w, b, geom) => {
                let geom = *geom;
                let kc = 3 * geom.c_in;
                let out_rows = geom.n_seq * geom.l_out;
                if self.requires_grad(*b) {
                    self.acc(grads, *b, |dst| {
                        for row in g.chunks(geom.c_out) {
                            add_into(dst, row);
                        }
                    });
                }
                if self.requires_grad(*w) {
                    let col = im2col(self.vals(*x), geom);
                    let gw = self.grad_buf(grads, *w);
                    T::gemm(
                        kc,
                        out_rows,
                        geom.c_out,
                        &col,
                        (1, kc as isize),
                        g,
                        (geom.c_out as isize, 1),
                        T::one(),
                        gw,
                    );
                }
                if self.requires_grad(*x) {
                    let mut dcol = vec![T::zero(); out_rows * kc];
                    T::gemm(
                        out_rows,
                        geom.c_out,
                        kc,
                        g,
                        (geom.c_out as isize, 1),
                        self.vals(*w),
                        (1, geom.c_out as isize),
                        T::zero(),
                        &mut dcol,
                    );
                    let gx = self.grad_buf(grads, *x);
                    col2im_add(&dcol, geom, gx);
                }
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.acc(grads, *x, |dst| dst.iter_mut().for_each(|d| *d += g0));
            }
            Op::Mean(x) => {
                let s = g[0] / T::from_f64((self.vals(*x).len()) as f64);
                self.acc(grads, *x, |dst| dst.iter_mut().for_each(|d| *d += s));
            }
            Op::MaskedMean(x, mask, count) => {
                let inv = T::one() / T::from_f64((*count) as f64);
                self.acc(grads, *x, |dst| {
                    for (r, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                        for j in 0..cols {
                            dst[r * cols + j] += g[j] * inv;
                        }
                    }
                });
            }
            Op::SmoothL1(p, t) => {
                let n = T::from_f64((self.vals(*p).len()) as f64);
                let beta = T::from_f64(SMOOTH_L1_BETA);
                let d: Vec<T> = self
                    .vals(*p)
                    .iter()
                    .zip(self.vals(*t))
                    .map(|(&a, &b)| {
                        let diff = a - b;
                        let clipped = if diff.abs() < beta { diff / beta } else { diff.signum() };
                        clipped * g[0] / n
                    })
                    .collect();
                self.acc(grads, *p, |dst| add_into(dst, &d));
                self.acc(grads, *t, |dst| dst.iter_mut().zip(&d).for_each(|(x, &v)| *x -= v));
            }
            Op::Mse(p, t) => {
                let n = T::from_f64((self.vals(*p).len()) as f64);
                let two = T::from_f64(2.0);
                let d: Vec<T> = self
                    .vals(*p)
                    .iter()
                    .zip(self.vals(*t))
                    .map(|(&a, &b)| two * (a - b) * g[0] / n)
                    .collect();
                self.acc(grads, *p, |dst| add_into(dst, &d));
                self.acc(grads, *t, |dst| dst.iter_mut().zip(&d).for_each(|(x, &v)| *x -= v));
            }
            Op::CrossEntropy(logits, labels, probs) => {
                let c = self.shape(*logits).1;
                let scale = g[0] / T::from_f64((labels.len()) as f64);
                self.acc(grads, *logits, |dst| {
                    for (r, &t) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            dst[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                });
            }
            Op::Focal {
                logits,
                labels,
                probs,
                gamma,
                alpha,
            } => {
                let c = self.shape(*logits).1;
                let scale = g[0] / T::from_f64((labels.len()) as f64);
                let (gamma, alpha) = (*gamma, *alpha);
                self.acc(grads, *logits, |dst| {
                    for (r, &t) in labels.iter().enumerate() {
                        let pt = probs[r * c + t];
                        let lp = log_softmax_at(self.value(*logits).row(r), t);
                        let q = T::one() - pt;
                        // dL/dlog(p_t); the chain through softmax is (onehot - p).
                        let dldlp = -alpha * (pow_or_one(q, gamma) - gamma * pow_or_zero(q, gamma - T::one()) * pt * lp);
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            dst[r * c + j] += scale * dldlp * (onehot - probs[r * c + j]);
                        }
                    }
                });
            }
            Op::BinaryFocal {
                logits,
                targets,
                gamma,
                alpha,
            } => {
                let scale = g[0] / T::from_f64((targets.len()) as f64);
                let (gamma, alpha) = (*gamma, *alpha);
                let zs = self.vals(*logits);
                self.acc(grads, *logits, |dst| {
                    for ((d, &z), &y) in dst.iter_mut().zip(zs).zip(targets) {
                        let (s, at) = if y { (T::one(), alpha) } else { (-T::one(), T::one() - alpha) };
                        let lpt = -softplus(-s * z);
                        let pt = lpt.exp();
                        let q = T::one() - pt;
                        *d += scale * (-at * s * pow_or_one(q, gamma) * (q - gamma * pt * lpt));
                    }
                });
            }
            Op::RowNorm(x) => {
                let xc = self.shape(*x).1;
                let norms = node.value.data();
                let xv = self.vals(*x);
                self.acc(grads, *x, |dst| {
                    for r in 0..rows {
                        if norms[r] > T::zero() {
                            for j in 0..xc {
                                dst[r * xc + j] += g[r] * xv[r * xc + j] / norms[r];
                            }
                        }
                    }
                });
            }
            Op::Ln(x) => {
                let xv = self.vals(*x);
                self.acc(grads, *x, |dst| {
                    for ((d, &gv), &v) in dst.iter_mut().zip(g).zip(xv) {
                        *d += gv / v;
                    }
                });
            }
        }
    }

    fn grad_buf<'a>(&self, grads: &'a mut [Option<Vec<T>>], v: Var) -> &'a mut [T] {
        let len = self.vals(v).len();
        grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn acc(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if self.requires_grad(v) {
            f(self.grad_buf(grads, v));
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn pow_or_one<T: Real>(base: T, e: T) -> T {
    if e == T::zero() {
        T::one()
    } else {
        base.powf(e)
    }
}

fn pow_or_zero<T: Real>(base: T, e: T) -> T {
    if base == T::zero() {
        T::zero()
    } else {
        base.powf(e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) without overflow
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softmax_row<T: Real>(row: &[T]) -> Vec<T> {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax_at<T: Real>(row: &[T], t: usize) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
    row[t] - lse
}

fn im2col<T: Real>(x: &[T], g: ConvGeom) -> Vec<T> {
    let kc = 3 * g.c_in;
    let mut col = vec![T::zero(); g.n_seq * g.l_out * kc];
    for s in 0..g.n_seq {
        for o in 0..g.l_out {
            let dst = &mut col[(s * g.l_out + o) * kc..(s * g.l_out + o + 1) * kc];
            for k in 0..3 {
                let i = (o * g.stride + k) as isize - 1;
                if i >= 0 && (i as usize) < g.l_in {
                    let src = (s * g.l_in + i as usize) * g.c_in;
                    dst[k * g.c_in..(k + 1) * g.c_in].copy_from_slice(&x[src..src + g.c_in]);
                }
            }
        }
    }
    col
}

fn col2im_add<T: Real>(dcol: &[T], g: ConvGeom, dx: &mut [T]) {
    let kc = 3 * g.c_in;
    for s in 0..g.n_seq {
        for o in 0..g.l_out {
            let src = &dcol[(s * g.l_out + o) * kc..(s * g.l_out + o + 1) * kc];
            for k in 0..3 {
                let i = (o * g.stride + k) as isize - 1;
                if i >= 0 && (i as usize) < g.l_in {
                    let dst = (s * g.l_in + i as usize) * g.c_in;
                    add_into(&mut dx[dst..dst + g.c_in], &src[k * g.c_in..(k + 1) * g.c_in]);
                }
            }
        }
    }
}
