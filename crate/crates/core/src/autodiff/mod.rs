//! Tape-based reverse-mode automatic differentiation over `f64` tensors.
//!
//! Every operation appends a node to a [`Tape`] holding its forward value
//! and whatever it needs for the backward pass. [`Tape::backward`] walks
//! the nodes once in reverse order, so a node's inputs always precede it.
//!
//! ```
//! use kgfuse::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0, 3.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.mean(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert!((grads.get(x).data()[2] - 2.0).abs() < 1e-15);
//! ```

mod gradcheck;
mod tensor;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use thiserror::Error;

pub use gradcheck::{grad_check, grad_check_many};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch(Vec<usize>, Vec<usize>),
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalarRoot(Vec<usize>),
    #[error("backward root is not recorded on this tape")]
    DetachedRoot,
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
}

type Result<T> = std::result::Result<T, TensorError>;

static NEXT_TAPE: AtomicUsize = AtomicUsize::new(1);

/// Handle to a node on a specific [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    id: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    GatherRows { table: Var, ids: Vec<usize> },
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Softmax(Var),
    RmsNorm { x: Var, inv_rms: Vec<f64> },
    MulRow(Var, Var),
    Gelu(Var),
    Dropout { x: Var, mask: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: usize, probs: Vec<f64>, count: usize },
    Cosine { a: Var, b: Var, na: f64, nb: f64 },
    Sum(Var),
    Mean(Var),
    GatherBias { table: Var, head: usize, idx: Vec<Option<usize>> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug)]
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    tape: usize,
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` did not participate.
    pub fn get(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable from another tape");
        let shape = &self.shapes[v.id];
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Raw gradient slice without allocation, `None` when zero.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        assert_eq!(v.tape, self.tape, "variable from another tape");
        self.grads[v.id].as_deref()
    }
}

/// `C = op(A)·op(B) + beta·C` for row-major storage.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the
    // strides above address only within them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    let cols = *shape.last().unwrap_or(&1);
    (shape.iter().product::<usize>() / cols.max(1), cols)
}

const RMS_EPS: f64 = 1e-12;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

impl Tape {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, id }
    }

    fn node(&self, v: Var) -> &Node {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.id]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.node(v).requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch(sa.to_vec(), sb.to_vec()));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b)?;
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x * c).collect();
        let t = Tensor::new(va.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, c), rg)
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch(sa.to_vec(), sb.to_vec()));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// `[m×k] · [n×k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(TensorError::ShapeMismatch(sa.to_vec(), sb.to_vec()));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), true, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMulT(a, b), rg))
    }

    /// Selects rows of a 2-D table; repeated ids accumulate gradient.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        let (rows, cols) = tv.dims2();
        if ids.is_empty() {
            return Err(TensorError::InvalidShape(vec![0, cols]));
        }
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &i in ids {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange { index: i, len: rows });
            }
            data.extend_from_slice(tv.row(i));
        }
        let t = Tensor::new(vec![ids.len(), cols], data)?;
        let rg = self.rg(&[table]);
        Ok(self.push(t, Op::GatherRows { table, ids: ids.to_vec() }, rg))
    }

    /// Stacks 2-D tensors with equal column counts along axis 0.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::InvalidShape(vec![]))?;
        let cols = dims2(self.shape(first)).1;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            let (_, c) = v.dims2();
            if c != cols {
                return Err(TensorError::ShapeMismatch(self.shape(first).to_vec(), v.shape().to_vec()));
            }
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols;
        let rg = self.rg(parts);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        if len == 0 || start + len > cols {
            return Err(TensorError::InvalidShape(vec![rows, start + len]));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&xv.row(r)[start..start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![rows, len], data)?, Op::SliceCols { x, start }, rg))
    }

    /// Max-shifted softmax along the last axis.
    pub fn softmax_lastdim(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        let mut out = xv.data().to_vec();
        for r in 0..rows {
            softmax_in_place(&mut out[r * cols..(r + 1) * cols]);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Softmax(x), rg)
    }

    /// Divides each last-axis slice by its root mean square.
    pub fn rms_norm(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        let mut out = xv.data().to_vec();
        let mut inv_rms = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &mut out[r * cols..(r + 1) * cols];
            let ms = row.iter().map(|v| v * v).sum::<f64>() / cols as f64;
            let s = 1.0 / (ms + RMS_EPS).sqrt();
            row.iter_mut().for_each(|v| *v *= s);
            inv_rms.push(s);
        }
        let t = Tensor::new(xv.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::RmsNorm { x, inv_rms }, rg)
    }

    /// Multiplies every row of `x` elementwise by the vector `g`.
    pub fn mul_row(&mut self, x: Var, g: Var) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(g));
        let (rows, cols) = xv.dims2();
        if gv.len() != cols {
            return Err(TensorError::ShapeMismatch(xv.shape().to_vec(), gv.shape().to_vec()));
        }
        let mut out = xv.data().to_vec();
        for r in 0..rows {
            for (o, w) in out[r * cols..(r + 1) * cols].iter_mut().zip(gv.data()) {
                *o *= w;
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(&[x, g]);
        Ok(self.push(t, Op::MulRow(x, g), rg))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv
            .data()
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_K * (v + GELU_C * v * v * v)).tanh()))
            .collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Gelu(x), rg)
    }

    /// Inverted dropout: zeroes with probability `drop_p`, scales survivors
    /// by `1/(1-drop_p)`. Identity when `train` is false or `drop_p` is 0.
    pub fn dropout<R: Rng>(&mut self, x: Var, drop_p: f64, train: bool, rng: &mut R) -> Var {
        if !train || drop_p <= 0.0 {
            return x;
        }
        let keep = 1.0 - drop_p;
        let xv = self.value(x);
        let mask: Vec<f64> =
            (0..xv.len()).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let data = xv.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Dropout { x, mask }, rg)
    }

    /// Mean token-level cross entropy over positions whose target is not
    /// `ignore`. All-ignored input yields 0 with zero gradient.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, classes) = lv.dims2();
        if rows != targets.len() {
            return Err(TensorError::ShapeMismatch(lv.shape().to_vec(), vec![targets.len()]));
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        let mut count = 0;
        for (r, &t) in targets.iter().enumerate() {
            if t == ignore {
                continue;
            }
            if t >= classes {
                return Err(TensorError::TargetOutOfRange { target: t, classes });
            }
            let z = &mut probs[r * classes..(r + 1) * classes];
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            total += (m - z[t]) + s.ln();
            count += 1;
            z.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy { logits, targets: targets.to_vec(), ignore, probs, count },
            rg,
        ))
    }

    /// Differentiable cosine similarity of two equal-length tensors.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(TensorError::ShapeMismatch(va.shape().to_vec(), vb.shape().to_vec()));
        }
        let c = crate::embed::cosine_sim(va.data(), vb.data()).map_err(|_| TensorError::ZeroVector)?;
        let na = norm(va.data());
        let nb = norm(vb.data());
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::scalar(c), Op::Cosine { a, b, na, nb }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Builds a `[rows×cols]` matrix whose `(i, j)` entry is
    /// `table[idx[i*cols+j], head]`, or 0 where the index is `None`.
    pub fn gather_bias(&mut self, table: Var, head: usize, idx: &[Option<usize>], rows: usize, cols: usize) -> Result<Var> {
        let tv = self.value(table);
        let (n, heads) = tv.dims2();
        if idx.len() != rows * cols || head >= heads {
            return Err(TensorError::InvalidShape(vec![rows, cols]));
        }
        let mut data = Vec::with_capacity(idx.len());
        for i in idx {
            data.push(match *i {
                Some(b) if b >= n => return Err(TensorError::IndexOutOfRange { index: b, len: n }),
                Some(b) => tv.data()[b * heads + head],
                None => 0.0,
            });
        }
        let rg = self.rg(&[table]);
        Ok(self.push(Tensor::new(vec![rows, cols], data)?, Op::GatherBias { table, head, idx: idx.to_vec() }, rg))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if root.tape != self.id || root.id >= self.nodes.len() {
            return Err(TensorError::DetachedRoot);
        }
        let rv = &self.nodes[root.id].value;
        if !rv.is_scalar() {
            return Err(TensorError::NotScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.id + 1];
        grads[root.id] = Some(vec![1.0]);

        for i in (0..=root.id).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { tape: self.id, grads, shapes })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &self.nodes[v.id];
            if !n.requires_grad {
                return;
            }
            let slot = grads[v.id].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.nodes[a.id].value.data(), self.nodes[b.id].value.data());
                acc(*a, &mut |d| {
                    for ((x, y), w) in d.iter_mut().zip(g).zip(vb) {
                        *x += y * w;
                    }
                });
                acc(*b, &mut |d| {
                    for ((x, y), w) in d.iter_mut().zip(g).zip(va) {
                        *x += y * w;
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)),
            Op::MatMul(a, b) => {
                let (va, vb) = (&self.nodes[a.id].value, &self.nodes[b.id].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                // dA = dC·Bᵀ, dB = Aᵀ·dC
                acc(*a, &mut |d| gemm(m, n, k, g, false, vb.data(), true, d, 1.0));
                acc(*b, &mut |d| gemm(k, m, n, va.data(), true, g, false, d, 1.0));
            }
            Op::MatMulT(a, b) => {
                let (va, vb) = (&self.nodes[a.id].value, &self.nodes[b.id].value);
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[0]);
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A
                acc(*a, &mut |d| gemm(m, n, k, g, false, vb.data(), false, d, 1.0));
                acc(*b, &mut |d| gemm(n, m, k, g, true, va.data(), false, d, 1.0));
            }
            Op::GatherRows { table, ids } => {
                let cols = self.nodes[table.id].value.dims2().1;
                acc(*table, &mut |d| {
                    for (r, &i) in ids.iter().enumerate() {
                        add_into(&mut d[i * cols..(i + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.nodes[p.id].value.len();
                    acc(*p, &mut |d| add_into(d, &g[off..off + len]));
                    off += len;
                }
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = self.nodes[x.id].value.dims2();
                let len = node.value.dims2().1;
                acc(*x, &mut |d| {
                    for r in 0..rows {
                        add_into(&mut d[r * cols + start..r * cols + start + len], &g[r * len..(r + 1) * len]);
                    }
                });
            }
            Op::Softmax(x) => {
                let (rows, cols) = node.value.dims2();
                let y = node.value.data();
                acc(*x, &mut |d| {
                    for r in 0..rows {
                        let ys = &y[r * cols..(r + 1) * cols];
                        let gs = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for ((dx, yi), gi) in d[r * cols..(r + 1) * cols].iter_mut().zip(ys).zip(gs) {
                            *dx += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::RmsNorm { x, inv_rms } => {
                let xv = &self.nodes[x.id].value;
                let (rows, cols) = xv.dims2();
                acc(*x, &mut |d| {
                    for r in 0..rows {
                        let s = inv_rms[r];
                        let xs = xv.row(r);
                        let gs = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = xs.iter().zip(gs).map(|(a, b)| a * b).sum();
                        let c = s * s * s * dot / cols as f64;
                        for ((dx, xi), gi) in d[r * cols..(r + 1) * cols].iter_mut().zip(xs).zip(gs) {
                            *dx += s * gi - c * xi;
                        }
                    }
                });
            }
            Op::MulRow(x, w) => {
                let (xv, wv) = (&self.nodes[x.id].value, &self.nodes[w.id].value);
                let (rows, cols) = xv.dims2();
                acc(*x, &mut |d| {
                    for r in 0..rows {
                        for c in 0..cols {
                            d[r * cols + c] += g[r * cols + c] * wv.data()[c];
                        }
                    }
                });
                acc(*w, &mut |d| {
                    for r in 0..rows {
                        for c in 0..cols {
                            d[c] += g[r * cols + c] * xv.data()[r * cols + c];
                        }
                    }
                });
            }
            Op::Gelu(x) => {
                let xv = self.nodes[x.id].value.data();
                acc(*x, &mut |d| {
                    for ((dx, &v), gi) in d.iter_mut().zip(xv).zip(g) {
                        let t = (GELU_K * (v + GELU_C * v * v * v)).tanh();
                        let dt = (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * v * v);
                        *dx += gi * (0.5 * (1.0 + t) + 0.5 * v * dt);
                    }
                });
            }
            Op::Dropout { x, mask } => {
                acc(*x, &mut |d| {
                    for ((dx, m), gi) in d.iter_mut().zip(mask).zip(g) {
                        *dx += gi * m;
                    }
                });
            }
            Op::CrossEntropy { logits, targets, ignore, probs, count } => {
                if *count == 0 {
                    return;
                }
                let classes = self.nodes[logits.id].value.dims2().1;
                let scale = g[0] / *count as f64;
                acc(*logits, &mut |d| {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        let p = &probs[r * classes..(r + 1) * classes];
                        let dr = &mut d[r * classes..(r + 1) * classes];
                        for (dx, pi) in dr.iter_mut().zip(p) {
                            *dx += scale * pi;
                        }
                        dr[t] -= scale;
                    }
                });
            }
            Op::Cosine { a, b, na, nb } => {
                let (va, vb) = (self.nodes[a.id].value.data(), self.nodes[b.id].value.data());
                let c = node.value.item();
                let g0 = g[0];
                acc(*a, &mut |d| {
                    for ((dx, ai), bi) in d.iter_mut().zip(va).zip(vb) {
                        *dx += g0 * (bi / (na * nb) - c * ai / (na * na));
                    }
                });
                acc(*b, &mut |d| {
                    for ((dx, bi), ai) in d.iter_mut().zip(vb).zip(va) {
                        *dx += g0 * (ai / (na * nb) - c * bi / (nb * nb));
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.id].value.len() as f64;
                acc(*x, &mut |d| d.iter_mut().for_each(|v| *v += g[0] / n));
            }
            Op::GatherBias { table, head, idx } => {
                let heads = self.nodes[table.id].value.dims2().1;
                acc(*table, &mut |d| {
                    for (gi, i) in g.iter().zip(idx) {
                        if let Some(b) = i {
                            d[b * heads + head] += gi;
                        }
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}
