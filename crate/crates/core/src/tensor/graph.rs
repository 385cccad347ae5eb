use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, T),
    Exp(usize),
    Ln(usize),
    Gelu(usize),
    Softmax(usize),
    LogSumExp(usize),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Reshape(usize),
    L2Normalize(usize),
    LayerNorm(usize, T),
}

#[derive(Clone, Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run tape. Every node is a 2-D `[rows, cols]` array; backward walks
/// the nodes in reverse construction order.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node created after `mark`. Vars at or beyond `mark` become invalid.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("graph values are finite")
    }

    pub fn leaf(&mut self, t: &Tensor<T>, requires_grad: bool) -> Var {
        let (rows, cols) = (t.rows(), t.cols());
        self.push(rows, cols, t.values().to_vec(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Result<Var> {
        if rows * cols != value.len() || rows == 0 || cols == 0 {
            return Err(shape_err("constant", format!("[{rows}, {cols}] vs {} values", value.len())));
        }
        check_finite("constant", &value)?;
        Ok(self.push(rows, cols, value, Op::Leaf, false))
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { rows, cols, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn emit(&mut self, op_name: &'static str, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Result<Var> {
        check_finite(op_name, &value)?;
        let requires_grad = op_inputs(&op).iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(rows, cols, value, op, requires_grad))
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.shape(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let out = matmul_raw(&self.nodes[a.0].value, &self.nodes[b.0].value, m, k, n);
        self.emit("matmul", m, n, out, Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let out = transpose_raw(&self.nodes[a.0].value, m, n);
        self.emit("transpose", n, m, out, Op::Transpose(a.0))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (m, n) = self.dims(a);
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        self.emit("add", m, n, out, Op::Add(a.0, b.0))
    }

    /// `a[m, n] + row[1, n]`, broadcasting the row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(shape_err("add_row", format!("[{m}, {n}] + {:?}", self.dims(row))));
        }
        let r = &self.nodes[row.0].value;
        let out = self.nodes[a.0].value.iter().enumerate().map(|(i, &x)| x + r[i % n]).collect();
        self.emit("add_row", m, n, out, Op::AddRow(a.0, row.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (m, n) = self.dims(a);
        let out = zip_map(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        self.emit("mul", m, n, out, Op::Mul(a.0, b.0))
    }

    /// `a[m, n] * row[1, n]` elementwise, broadcasting the row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(shape_err("mul_row", format!("[{m}, {n}] * {:?}", self.dims(row))));
        }
        let r = &self.nodes[row.0].value;
        let out = self.nodes[a.0].value.iter().enumerate().map(|(i, &x)| x * r[i % n]).collect();
        self.emit("mul_row", m, n, out, Op::MulRow(a.0, row.0))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        let (m, n) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|&x| x * c).collect();
        self.emit("scale", m, n, out, Op::Scale(a.0, c))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -T::one())?;
        self.add(a, nb)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|x| x.exp()).collect();
        self.emit("exp", m, n, out, Op::Exp(a.0))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|x| x.ln()).collect();
        self.emit("ln", m, n, out, Op::Ln(a.0))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let out = self.nodes[a.0].value.iter().map(|&x| gelu_fwd(x)).collect();
        self.emit("gelu", m, n, out, Op::Gelu(a.0))
    }

    /// Row-wise softmax. `key_mask[j] == false` forces column `j` to exactly zero.
    pub fn softmax_rows(&mut self, a: Var, key_mask: Option<&[bool]>) -> Result<Var> {
        let (m, n) = self.dims(a);
        if let Some(mask) = key_mask {
            if mask.len() != n {
                return Err(shape_err("softmax", format!("mask of {} for {n} columns", mask.len())));
            }
            if !mask.iter().any(|&b| b) {
                return Err(shape_err("softmax", "mask hides every column"));
            }
        }
        let x = &self.nodes[a.0].value;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let valid = |j: usize| key_mask.is_none_or(|mk| mk[j]);
            let mx = (0..n).filter(|&j| valid(j)).map(|j| row[j]).fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for j in 0..n {
                if valid(j) {
                    let e = (row[j] - mx).exp();
                    out[i * n + j] = e;
                    s = s + e;
                }
            }
            for j in 0..n {
                out[i * n + j] = out[i * n + j] / s;
            }
        }
        self.emit("softmax", m, n, out, Op::Softmax(a.0))
    }

    /// Row-wise log-sum-exp, `[m, n] -> [m, 1]`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let x = &self.nodes[a.0].value;
        let out = (0..m).map(|i| log_sum_exp(&x[i * n..(i + 1) * n])).collect();
        self.emit("log_sum_exp", m, 1, out, Op::LogSumExp(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.nodes[a.0].value.iter().fold(T::zero(), |acc, &x| acc + x);
        self.emit("sum", 1, 1, vec![s], Op::Sum(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = &self.nodes[a.0].value;
        let s = v.iter().fold(T::zero(), |acc, &x| acc + x) / T::from_usize_lossy(v.len());
        self.emit("mean", 1, 1, vec![s], Op::Mean(a.0))
    }

    /// Column means, `[m, n] -> [1, n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let x = &self.nodes[a.0].value;
        let mut out = vec![T::zero(); n];
        for i in 0..m {
            for j in 0..n {
                out[j] = out[j] + x[i * n + j];
            }
        }
        let mm = T::from_usize_lossy(m);
        out.iter_mut().for_each(|v| *v = *v / mm);
        self.emit("mean_rows", 1, n, out, Op::MeanRows(a.0))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_rows", "no inputs"));
        };
        let n = self.dims(first).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims(p);
            if c != n {
                return Err(shape_err("concat_rows", format!("width {c} vs {n}")));
            }
            rows += r;
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let ids = parts.iter().map(|p| p.0).collect();
        self.emit("concat_rows", rows, n, out, Op::ConcatRows(ids))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > m {
            return Err(shape_err("slice_rows", format!("rows {start}..{} of {m}", start + len)));
        }
        let out = self.nodes[a.0].value[start * n..(start + len) * n].to_vec();
        self.emit("slice_rows", len, n, out, Op::SliceRows(a.0, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if len == 0 || start + len > n {
            return Err(shape_err("slice_cols", format!("cols {start}..{} of {n}", start + len)));
        }
        let x = &self.nodes[a.0].value;
        let out = (0..m).flat_map(|i| x[i * n + start..i * n + start + len].iter().copied()).collect();
        self.emit("slice_cols", m, len, out, Op::SliceCols(a.0, start))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let (m, n) = self.dims(a);
        if m * n != rows * cols {
            return Err(shape_err("reshape", format!("[{m}, {n}] -> [{rows}, {cols}]")));
        }
        let out = self.nodes[a.0].value.clone();
        self.emit("reshape", rows, cols, out, Op::Reshape(a.0))
    }

    /// Scale every row to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let x = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            out.extend(super::normalized(&x[i * n..(i + 1) * n])?);
        }
        self.emit("l2_normalize", m, n, out, Op::L2Normalize(a.0))
    }

    /// Row-wise standardization (no affine part).
    pub fn layer_norm_rows(&mut self, a: Var, eps: T) -> Result<Var> {
        let (m, n) = self.dims(a);
        let x = &self.nodes[a.0].value;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let (mu, sigma) = row_stats(row, eps);
            out.extend(row.iter().map(|&v| (v - mu) / sigma));
        }
        self.emit("layer_norm", m, n, out, Op::LayerNorm(a.0, eps))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.dims(a), self.dims(b))));
        }
        Ok(())
    }

    /// Reverse pass from a single-element node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let ln = &self.nodes[loss.0];
        if ln.value.len() != 1 {
            return Err(shape_err("backward", format!("loss has shape [{}, {}]", ln.rows, ln.cols)));
        }
        if !ln.value[0].is_finite() {
            return Err(Error::NonFiniteLoss { step: None });
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(go) = grads[id].take() else { continue };
            self.backprop_node(node, &go, &mut grads);
            grads[id] = Some(go);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, node: &Node<T>, go: &[T], grads: &mut [Option<Vec<T>>]) {
        let (m, n) = (node.rows, node.cols);
        let val = |i: usize| &self.nodes[i].value;
        let mut acc = |i: usize, g: Vec<T>| {
            if !self.nodes[i].requires_grad {
                return;
            }
            match &mut grads[i] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e = *e + x),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let k = self.nodes[a].cols;
                if self.nodes[a].requires_grad {
                    let bt = transpose_raw(val(b), k, n);
                    acc(a, matmul_raw(go, &bt, m, n, k));
                }
                if self.nodes[b].requires_grad {
                    let at = transpose_raw(val(a), m, k);
                    acc(b, matmul_raw(&at, go, k, m, n));
                }
            }
            &Op::Transpose(a) => acc(a, transpose_raw(go, m, n)),
            &Op::Add(a, b) => {
                acc(a, go.to_vec());
                acc(b, go.to_vec());
            }
            &Op::AddRow(a, r) => {
                acc(a, go.to_vec());
                acc(r, column_sums(go, m, n));
            }
            &Op::Mul(a, b) => {
                acc(a, zip_map(go, val(b), |g, y| g * y));
                acc(b, zip_map(go, val(a), |g, x| g * x));
            }
            &Op::MulRow(a, r) => {
                let rv = val(r);
                acc(a, go.iter().enumerate().map(|(i, &g)| g * rv[i % n]).collect());
                let prod = zip_map(go, val(a), |g, x| g * x);
                acc(r, column_sums(&prod, m, n));
            }
            &Op::Scale(a, c) => acc(a, go.iter().map(|&g| g * c).collect()),
            &Op::Exp(a) => acc(a, zip_map(go, &node.value, |g, y| g * y)),
            &Op::Ln(a) => acc(a, zip_map(go, val(a), |g, x| g / x)),
            &Op::Gelu(a) => acc(a, zip_map(go, val(a), |g, x| g * gelu_grad(x))),
            Op::Softmax(a) => {
                let y = &node.value;
                let mut gx = vec![T::zero(); m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let d = y[r.clone()].iter().zip(&go[r.clone()]).fold(T::zero(), |s, (&p, &g)| s + p * g);
                    for j in r {
                        gx[j] = y[j] * (go[j] - d);
                    }
                }
                acc(*a, gx);
            }
            &Op::LogSumExp(a) => {
                let (_, k) = (self.nodes[a].rows, self.nodes[a].cols);
                let x = val(a);
                let mut gx = vec![T::zero(); m * k];
                for i in 0..m {
                    let lse = node.value[i];
                    for j in 0..k {
                        gx[i * k + j] = go[i] * (x[i * k + j] - lse).exp();
                    }
                }
                acc(a, gx);
            }
            &Op::Sum(a) => acc(a, vec![go[0]; val(a).len()]),
            &Op::Mean(a) => {
                let len = val(a).len();
                acc(a, vec![go[0] / T::from_usize_lossy(len); len]);
            }
            &Op::MeanRows(a) => {
                let rows = self.nodes[a].rows;
                let inv = T::one() / T::from_usize_lossy(rows);
                acc(a, (0..rows * n).map(|i| go[i % n] * inv).collect());
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p].value.len();
                    acc(p, go[off..off + len].to_vec());
                    off += len;
                }
            }
            &Op::SliceRows(a, start) => {
                let mut gx = vec![T::zero(); val(a).len()];
                gx[start * n..(start + m) * n].copy_from_slice(go);
                acc(a, gx);
            }
            &Op::SliceCols(a, start) => {
                let full = self.nodes[a].cols;
                let mut gx = vec![T::zero(); val(a).len()];
                for i in 0..m {
                    gx[i * full + start..i * full + start + n].copy_from_slice(&go[i * n..(i + 1) * n]);
                }
                acc(a, gx);
            }
            &Op::Reshape(a) => acc(a, go.to_vec()),
            &Op::L2Normalize(a) => {
                let x = val(a);
                let y = &node.value;
                let mut gx = vec![T::zero(); m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let nrm = crate::scalar::norm(&x[r.clone()]);
                    let d = crate::scalar::dot(&y[r.clone()], &go[r.clone()]);
                    for j in r {
                        gx[j] = (go[j] - y[j] * d) / nrm;
                    }
                }
                acc(a, gx);
            }
            &Op::LayerNorm(a, eps) => {
                let x = val(a);
                let y = &node.value;
                let nn = T::from_usize_lossy(n);
                let mut gx = vec![T::zero(); m * n];
                for i in 0..m {
                    let r = i * n..(i + 1) * n;
                    let (_, sigma) = row_stats(&x[r.clone()], eps);
                    let mg = go[r.clone()].iter().fold(T::zero(), |s, &g| s + g) / nn;
                    let mgy = crate::scalar::dot(&go[r.clone()], &y[r.clone()]) / nn;
                    for j in r {
                        gx[j] = (go[j] - mg - y[j] * mgy) / sigma;
                    }
                }
                acc(a, gx);
            }
        }
    }
}

/// Result of a backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; `None` when `v` does not
    /// require gradients or does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zeros when it did not reach `v`.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<T> {
        self.get(v).map_or_else(|| vec![T::zero(); len], <[T]>::to_vec)
    }
}

fn op_inputs<T>(op: &Op<T>) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        &Op::MatMul(a, b) | &Op::Add(a, b) | &Op::AddRow(a, b) | &Op::Mul(a, b) | &Op::MulRow(a, b) => vec![a, b],
        Op::ConcatRows(parts) => parts.clone(),
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::Exp(a)
        | Op::Ln(a)
        | Op::Gelu(a)
        | Op::Softmax(a)
        | Op::LogSumExp(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::MeanRows(a)
        | Op::SliceRows(a, _)
        | Op::SliceCols(a, _)
        | Op::Reshape(a)
        | Op::L2Normalize(a)
        | Op::LayerNorm(a, _) => vec![*a],
    }
}

fn check_finite<T: Scalar>(op: &'static str, v: &[T]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn zip_map<T: Scalar>(a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn column_sums<T: Scalar>(x: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n];
    for i in 0..m {
        for j in 0..n {
            out[j] = out[j] + x[i * n + j];
        }
    }
    out
}

pub(crate) fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Numerically stable `ln(sum(exp(x)))`.
pub(crate) fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let mx = x.iter().copied().fold(T::neg_infinity(), T::max);
    let s = x.iter().fold(T::zero(), |acc, &v| acc + (v - mx).exp());
    mx + s.ln()
}

fn row_stats<T: Scalar>(row: &[T], eps: T) -> (T, T) {
    let n = T::from_usize_lossy(row.len());
    let mu = row.iter().fold(T::zero(), |s, &v| s + v) / n;
    let var = row.iter().fold(T::zero(), |s, &v| s + (v - mu) * (v - mu)) / n;
    (mu, (var + eps).sqrt())
}

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let u = c * (x + T::lit(GELU_C) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(SQRT_2_OVER_PI);
    let k = T::lit(GELU_C);
    let t = (c * (x + k * x * x * x)).tanh();
    let half = T::lit(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x)
}
