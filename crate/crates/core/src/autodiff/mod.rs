//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass as an append-only
//! list of nodes. Inputs always precede the nodes that consume them, so the
//! backward pass is a single reverse sweep. Nodes that do not depend on any
//! gradient-requiring leaf (including everything upstream of
//! [`Graph::stop_gradient`]) are never visited by the backward sweep.
//!
//! "Rows" are slices along the last axis for every row-wise operator.

pub(crate) mod kernels;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use kernels::{argmax, axis_extents, gemm, permute, std_normal_cdf, std_normal_pdf};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    StopGradient,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `y` broadcast over the leading axes of `x`.
    AddBroadcast(Var, Var),
    /// Subtract `v[r]` from every entry of row `r`.
    SubRowwise(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    MeanAxis(Var, usize),
    Sum(Var),
    /// Argmax index per row is saved.
    RowMax(Var, Vec<usize>),
    RowLogSumExpExclSelf(Var),
    L2NormalizeRows(Var, Vec<f64>),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Gelu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    ClampUpper(Var, f64),
    Where(Vec<bool>, Var, Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only computation record for one forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient accumulators produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: usize,
}

impl Gradients {
    /// Gradient for `v`, or `None` if no gradient reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    /// Number of nodes whose backward rule ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn last_dim(t: &Tensor) -> usize {
    *t.shape().last().expect("tensors have rank >= 1")
}

fn square2(op: &'static str, t: &Tensor) -> Result<usize> {
    let (r, c) = t.dims2().map_err(|_| Error::shape(op, "expected a square matrix"))?;
    if r != c {
        return Err(Error::shape(op, format!("expected square matrix, got {r}x{c}")));
    }
    Ok(r)
}

/// Largest argument passed to `exp` before it is treated as an overflow.
pub const EXP_SAFE_MAX: f64 = 700.0;

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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        self.nodes.push(Node { op, value, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives gradients.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: t, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value: t, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Identity on the forward pass; the result is cut from the backward pass.
    pub fn stop_gradient(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        self.nodes.push(Node { op: Op::StopGradient, value, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        self.push(Op::Add(a, b), v, rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        self.push(Op::Sub(a, b), v, rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        self.push(Op::Mul(a, b), v, rg, "mul")
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("div", a, b, |x, y| x / y)?;
        let rg = self.rg(&[a, b]);
        self.push(Op::Div(a, b), v, rg, "div")
    }

    /// `x + y` where `y`'s shape is a suffix of `x`'s (bias or positional add).
    pub fn add_broadcast(&mut self, x: Var, y: Var) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        let (sx, sy) = (tx.shape(), ty.shape());
        if sy.len() > sx.len() || sx[sx.len() - sy.len()..] != *sy {
            return Err(Error::shape("add_broadcast", format!("{sy:?} is not a suffix of {sx:?}")));
        }
        let n = ty.numel();
        let data = tx.data().iter().enumerate().map(|(i, &a)| a + ty.data()[i % n]).collect();
        let v = Tensor::new(sx.to_vec(), data)?;
        let rg = self.rg(&[x, y]);
        self.push(Op::AddBroadcast(x, y), v, rg, "add_broadcast")
    }

    /// Subtracts `v[r]` from every entry of row `r` of `x`.
    pub fn sub_rowwise(&mut self, x: Var, v: Var) -> Result<Var> {
        let (tx, tv) = (self.value(x), self.value(v));
        let m = last_dim(tx);
        if tv.numel() * m != tx.numel() {
            return Err(Error::shape("sub_rowwise", format!("{:?} vs rows {:?}", tx.shape(), tv.shape())));
        }
        let data = tx.data().iter().enumerate().map(|(i, &a)| a - tv.data()[i / m]).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let rg = self.rg(&[x, v]);
        self.push(Op::SubRowwise(x, v), out, rg, "sub_rowwise")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a * c);
        let rg = self.rg(&[x]);
        self.push(Op::Scale(x, c), v, rg, "scale")
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.value(x).map(|a| a + c);
        let rg = self.rg(&[x]);
        self.push(Op::AddScalar(x), v, rg, "add_scalar")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        if let Some(&big) = self.value(x).data().iter().find(|&&a| a > EXP_SAFE_MAX) {
            return Err(Error::Overflow { op: "exp", arg: big });
        }
        let v = self.value(x).map(f64::exp);
        let rg = self.rg(&[x]);
        self.push(Op::Exp(x), v, rg, "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::ln);
        let rg = self.rg(&[x]);
        self.push(Op::Log(x), v, rg, "log")
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(f64::sqrt);
        let rg = self.rg(&[x]);
        self.push(Op::Sqrt(x), v, rg, "sqrt")
    }

    /// `[m×k] · [k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2().map_err(|_| Error::shape("matmul", "lhs must be rank 2"))?;
        let (k2, n) = tb.dims2().map_err(|_| Error::shape("matmul", "rhs must be rank 2"))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m}x{k}] · [{k2}x{n}]")));
        }
        let v = Tensor::new(vec![m, n], gemm(ta.data(), tb.data(), m, k, n, false, false))?;
        let rg = self.rg(&[a, b]);
        self.push(Op::MatMul(a, b), v, rg, "matmul")
    }

    /// `[b×m×k] · [b×k×n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (&[nb, m, k], &[nb2, k2, n]) = (ta.shape(), tb.shape()) else {
            return Err(Error::shape("batch_matmul", "operands must be rank 3"));
        };
        if nb != nb2 || k != k2 {
            return Err(Error::shape("batch_matmul", format!("{:?} · {:?}", ta.shape(), tb.shape())));
        }
        let mut data = Vec::with_capacity(nb * m * n);
        for i in 0..nb {
            let sa = &ta.data()[i * m * k..(i + 1) * m * k];
            let sb = &tb.data()[i * k * n..(i + 1) * k * n];
            data.extend(gemm(sa, sb, m, k, n, false, false));
        }
        let v = Tensor::new(vec![nb, m, n], data)?;
        let rg = self.rg(&[a, b]);
        self.push(Op::BatchMatMul(a, b), v, rg, "batch_matmul")
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let r = t.rank();
        if r < 2 {
            return Err(Error::shape("transpose", "rank must be >= 2"));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 1, r - 2);
        let (data, shape) = permute(t.data(), t.shape(), &axes);
        let v = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        self.push(Op::Transpose(x), v, rg, "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshaped(shape)?;
        let rg = self.rg(&[x]);
        self.push(Op::Reshape(x), v, rg, "reshape")
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let mut sorted = axes.to_vec();
        sorted.sort_unstable();
        if sorted != (0..t.rank()).collect::<Vec<_>>() {
            return Err(Error::shape("permute", format!("{axes:?} is not a permutation of rank {}", t.rank())));
        }
        let (data, shape) = permute(t.data(), t.shape(), axes);
        let v = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        self.push(Op::Permute(x, axes.to_vec()), v, rg, "permute")
    }

    /// Mean over `axis`; the axis is removed (rank-1 inputs give shape `[1]`).
    pub fn mean_over_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::shape("mean_over_axis", format!("axis {axis} out of range for {:?}", t.shape())));
        }
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                for i in 0..inner {
                    data[o * inner + i] += t.data()[(o * len + a) * inner + i];
                }
            }
        }
        data.iter_mut().for_each(|d| *d /= len as f64);
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        let v = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        self.push(Op::MeanAxis(x, axis), v, rg, "mean_over_axis")
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(x).data().iter().sum());
        let rg = self.rg(&[x]);
        self.push(Op::Sum(x), v, rg, "sum")
    }

    fn row_max_impl(&mut self, x: Var, skip_self: bool) -> Result<Var> {
        let t = self.value(x);
        let m = last_dim(t);
        if skip_self {
            square2("row_max_excluding_self", t)?;
            if m < 2 {
                return Err(Error::shape("row_max_excluding_self", "need at least 2 columns"));
            }
        }
        let rows = t.numel() / m;
        let idx: Vec<usize> =
            (0..rows).map(|r| argmax(t.row(r), skip_self.then_some(r))).collect();
        let data = idx.iter().enumerate().map(|(r, &j)| t.data()[r * m + j]).collect();
        let mut shape = t.shape()[..t.rank() - 1].to_vec();
        if shape.is_empty() {
            shape.push(1);
        }
        let v = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        self.push(Op::RowMax(x, idx), v, rg, "row_max")
    }

    /// Maximum of each row; the gradient goes to the lowest-index maximiser.
    pub fn row_max(&mut self, x: Var) -> Result<Var> {
        self.row_max_impl(x, false)
    }

    /// `out[u] = max_{k≠u} x[u,k]` for a square matrix.
    pub fn row_max_excluding_self(&mut self, x: Var) -> Result<Var> {
        self.row_max_impl(x, true)
    }

    /// `out[u] = log Σ_{k≠u} exp(x[u,k])` for a square matrix.
    ///
    /// No internal shift is applied, so the input is expected to be
    /// max-shifted already; any exponent above [`EXP_SAFE_MAX`] is an error.
    pub fn row_logsumexp_excluding_self(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let n = square2("row_logsumexp_excluding_self", t)?;
        if n < 2 {
            return Err(Error::shape("row_logsumexp_excluding_self", "need at least 2 columns"));
        }
        let mut data = Vec::with_capacity(n);
        for u in 0..n {
            let mut acc = 0.0;
            for (k, &g) in t.row(u).iter().enumerate() {
                if k == u {
                    continue;
                }
                if g > EXP_SAFE_MAX {
                    return Err(Error::Overflow { op: "row_logsumexp_excluding_self", arg: g });
                }
                acc += g.exp();
            }
            data.push(acc.ln());
        }
        let v = Tensor::new(vec![n], data)?;
        let rg = self.rg(&[x]);
        self.push(Op::RowLogSumExpExclSelf(x), v, rg, "row_logsumexp_excluding_self")
    }

    /// Divides every row by its ℓ2 norm. A zero row is an error.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = last_dim(t);
        let rows = t.numel() / m;
        let norms: Vec<f64> =
            (0..rows).map(|r| t.row(r).iter().map(|a| a * a).sum::<f64>().sqrt()).collect();
        if let Some(r) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::Degenerate(format!("row {r} has zero norm")));
        }
        let data = t.data().iter().enumerate().map(|(i, &a)| a / norms[i / m]).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(Op::L2NormalizeRows(x, norms), v, rg, "l2_normalize_rows")
    }

    /// Row-wise layer normalisation with affine `gain` and `bias` of shape `[m]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (t, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let m = last_dim(t);
        if tg.shape() != [m] || tb.shape() != [m] {
            return Err(Error::shape("layer_norm", format!("affine params must be [{m}]")));
        }
        let rows = t.numel() / m;
        let mut xhat = Vec::with_capacity(t.numel());
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|a| (a - mean) * is));
        }
        let data = xhat.iter().enumerate().map(|(i, &h)| h * tg.data()[i % m] + tb.data()[i % m]).collect();
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x, gain, bias]);
        self.push(Op::LayerNorm { x, gain, bias, xhat, inv_std }, v, rg, "layer_norm")
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).map(|a| a * std_normal_cdf(a));
        let rg = self.rg(&[x]);
        self.push(Op::Gelu(x), v, rg, "gelu")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = last_dim(t);
        let mut data = Vec::with_capacity(t.numel());
        for r in 0..t.numel() / m {
            let row = t.row(r);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|a| (a - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            data.extend(e.into_iter().map(|a| a / s));
        }
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(Op::SoftmaxRows(x), v, rg, "softmax_rows")
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let m = last_dim(t);
        let mut data = Vec::with_capacity(t.numel());
        for r in 0..t.numel() / m {
            let row = t.row(r);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|a| (a - mx).exp()).sum::<f64>().ln();
            data.extend(row.iter().map(|a| a - lse));
        }
        let v = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(Op::LogSoftmaxRows(x), v, rg, "log_softmax_rows")
    }

    /// Concatenates along axis 0.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let tail = self.value(*first).shape()[1..].to_vec();
        let mut rows = 0;
        let mut data = Vec::new();
        for &v in xs {
            let t = self.value(v);
            if t.shape()[1..] != *tail {
                return Err(Error::shape("concat_rows", format!("{:?} vs trailing {tail:?}", t.shape())));
            }
            rows += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        let v = Tensor::new(shape, data)?;
        let rg = self.rg(xs);
        self.push(Op::ConcatRows(xs.to_vec()), v, rg, "concat_rows")
    }

    /// Selects slices along axis 0.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let n = t.shape()[0];
        let stride = t.numel() / n;
        if indices.is_empty() {
            return Err(Error::shape("gather_rows", "empty index list"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("index {bad} out of range {n}")));
        }
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&t.data()[i * stride..(i + 1) * stride]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        let v = Tensor::new(shape, data)?;
        let rg = self.rg(&[x]);
        self.push(Op::GatherRows(x, indices.to_vec()), v, rg, "gather_rows")
    }

    /// `min(x, c)` element-wise. The gradient passes where `x <= c`
    /// (boundary included) and is exactly zero where `x > c`.
    pub fn clamp_upper(&mut self, x: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::Invalid("clamp_upper cap must be finite".into()));
        }
        let v = self.value(x).map(|a| a.min(c));
        let rg = self.rg(&[x]);
        self.push(Op::ClampUpper(x, c), v, rg, "clamp_upper")
    }

    /// `mask ? a : b` element-wise.
    pub fn where_mask(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("where_mask", ta, tb)?;
        if mask.len() != ta.numel() {
            return Err(Error::shape("where_mask", "mask length differs from operands"));
        }
        let data = mask
            .iter()
            .zip(ta.data().iter().zip(tb.data()))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let v = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(Op::Where(mask.to_vec(), a, b), v, rg, "where_mask")
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", self.value(loss).shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        let mut visited = 0;
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads, visited });
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            visited += 1;
            self.backward_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Ok(Gradients { grads, visited })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.numel(), self.value(v).numel());
        match &mut grads[v.0] {
            Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn like(&self, v: Var, data: Vec<f64>) -> Tensor {
        Tensor::new(self.value(v).shape().to_vec(), data).expect("gradient shape matches its node")
    }

    fn backward_node(&self, node: &Node, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = dy.data();
        let y = node.value.data();
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dy.clone());
                self.accumulate(grads, *b, dy.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = g.iter().zip(vb).map(|(d, x)| d * x).collect();
                let gb = g.iter().zip(va).map(|(d, x)| d * x).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
                self.accumulate(grads, *b, self.like(*b, gb));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = g.iter().zip(vb).map(|(d, x)| d / x).collect();
                let gb = g.iter().zip(va.iter().zip(vb)).map(|(d, (x, z))| -d * x / (z * z)).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
                self.accumulate(grads, *b, self.like(*b, gb));
            }
            Op::AddBroadcast(x, b) => {
                self.accumulate(grads, *x, dy.clone());
                let n = self.value(*b).numel();
                let mut gb = vec![0.0; n];
                g.iter().enumerate().for_each(|(i, d)| gb[i % n] += d);
                self.accumulate(grads, *b, self.like(*b, gb));
            }
            Op::SubRowwise(x, v) => {
                self.accumulate(grads, *x, dy.clone());
                let m = last_dim(dy);
                let gv = g.chunks(m).map(|c| -c.iter().sum::<f64>()).collect();
                self.accumulate(grads, *v, self.like(*v, gv));
            }
            Op::Scale(x, c) => self.accumulate(grads, *x, dy.map(|d| d * c)),
            Op::AddScalar(x) => self.accumulate(grads, *x, dy.clone()),
            Op::Exp(x) => {
                let gx = g.iter().zip(y).map(|(d, e)| d * e).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Log(x) => {
                let vx = self.value(*x).data();
                let gx = g.iter().zip(vx).map(|(d, a)| d / a).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Sqrt(x) => {
                let gx = g.iter().zip(y).map(|(d, s)| d / (2.0 * s)).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                if self.nodes[a.0].requires_grad {
                    let ga = gemm(g, tb.data(), m, n, k, false, true);
                    self.accumulate(grads, *a, self.like(*a, ga));
                }
                if self.nodes[b.0].requires_grad {
                    let gb = gemm(ta.data(), g, k, m, n, true, false);
                    self.accumulate(grads, *b, self.like(*b, gb));
                }
            }
            Op::BatchMatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (nb, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[2];
                let mut ga = Vec::with_capacity(ta.numel());
                let mut gb = Vec::with_capacity(tb.numel());
                for i in 0..nb {
                    let gi = &g[i * m * n..(i + 1) * m * n];
                    let sa = &ta.data()[i * m * k..(i + 1) * m * k];
                    let sb = &tb.data()[i * k * n..(i + 1) * k * n];
                    ga.extend(gemm(gi, sb, m, n, k, false, true));
                    gb.extend(gemm(sa, gi, k, m, n, true, false));
                }
                self.accumulate(grads, *a, self.like(*a, ga));
                self.accumulate(grads, *b, self.like(*b, gb));
            }
            Op::Transpose(x) => {
                let r = dy.rank();
                let mut axes: Vec<usize> = (0..r).collect();
                axes.swap(r - 1, r - 2);
                let (gx, _) = permute(g, dy.shape(), &axes);
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, self.like(*x, g.to_vec())),
            Op::Permute(x, axes) => {
                let mut inv = vec![0; axes.len()];
                axes.iter().enumerate().for_each(|(i, &a)| inv[a] = i);
                let (gx, _) = permute(g, dy.shape(), &inv);
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::MeanAxis(x, axis) => {
                let tx = self.value(*x);
                let (outer, len, inner) = axis_extents(tx.shape(), *axis);
                let mut gx = vec![0.0; tx.numel()];
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            gx[(o * len + a) * inner + i] = g[o * inner + i] / len as f64;
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Sum(x) => {
                let n = self.value(*x).numel();
                self.accumulate(grads, *x, self.like(*x, vec![g[0]; n]));
            }
            Op::RowMax(x, idx) => {
                let tx = self.value(*x);
                let m = last_dim(tx);
                let mut gx = vec![0.0; tx.numel()];
                idx.iter().enumerate().for_each(|(r, &j)| gx[r * m + j] = g[r]);
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::RowLogSumExpExclSelf(x) => {
                let tx = self.value(*x);
                let n = tx.shape()[0];
                let mut gx = vec![0.0; tx.numel()];
                for u in 0..n {
                    for k in 0..n {
                        if k != u {
                            gx[u * n + k] = g[u] * (tx.data()[u * n + k] - y[u]).exp();
                        }
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::L2NormalizeRows(x, norms) => {
                let m = last_dim(dy);
                let mut gx = Vec::with_capacity(g.len());
                for (r, norm) in norms.iter().enumerate() {
                    let (gr, yr) = (&g[r * m..(r + 1) * m], &y[r * m..(r + 1) * m]);
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    gx.extend(gr.iter().zip(yr).map(|(d, yi)| (d - yi * dot) / norm));
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                let m = last_dim(dy);
                let gamma = self.value(*gain).data();
                let mut gx = Vec::with_capacity(g.len());
                let mut gg = vec![0.0; m];
                let mut gb = vec![0.0; m];
                for (r, is) in inv_std.iter().enumerate() {
                    let gr = &g[r * m..(r + 1) * m];
                    let hr = &xhat[r * m..(r + 1) * m];
                    let dh: Vec<f64> = gr.iter().zip(gamma).map(|(d, w)| d * w).collect();
                    let mean_dh = dh.iter().sum::<f64>() / m as f64;
                    let mean_dhh = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / m as f64;
                    gx.extend(dh.iter().zip(hr).map(|(d, h)| is * (d - mean_dh - h * mean_dhh)));
                    for j in 0..m {
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
                self.accumulate(grads, *gain, self.like(*gain, gg));
                self.accumulate(grads, *bias, self.like(*bias, gb));
            }
            Op::Gelu(x) => {
                let vx = self.value(*x).data();
                let gx = g.iter().zip(vx).map(|(d, &a)| d * (std_normal_cdf(a) + a * std_normal_pdf(a))).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::SoftmaxRows(x) => {
                let m = last_dim(dy);
                let mut gx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(m).zip(y.chunks(m)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    gx.extend(gr.iter().zip(yr).map(|(d, p)| p * (d - dot)));
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::LogSoftmaxRows(x) => {
                let m = last_dim(dy);
                let mut gx = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(m).zip(y.chunks(m)) {
                    let s: f64 = gr.iter().sum();
                    gx.extend(gr.iter().zip(yr).map(|(d, lp)| d - lp.exp() * s));
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::ConcatRows(xs) => {
                let mut offset = 0;
                for &v in xs {
                    let n = self.value(v).numel();
                    self.accumulate(grads, v, self.like(v, g[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::GatherRows(x, indices) => {
                let tx = self.value(*x);
                let stride = tx.numel() / tx.shape()[0];
                let mut gx = vec![0.0; tx.numel()];
                for (slot, &i) in indices.iter().enumerate() {
                    for j in 0..stride {
                        gx[i * stride + j] += g[slot * stride + j];
                    }
                }
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::ClampUpper(x, c) => {
                let vx = self.value(*x).data();
                let gx = g.iter().zip(vx).map(|(d, &a)| if a > *c { 0.0 } else { *d }).collect();
                self.accumulate(grads, *x, self.like(*x, gx));
            }
            Op::Where(mask, a, b) => {
                let ga = g.iter().zip(mask).map(|(d, &m)| if m { *d } else { 0.0 }).collect();
                let gb = g.iter().zip(mask).map(|(d, &m)| if m { 0.0 } else { *d }).collect();
                self.accumulate(grads, *a, self.like(*a, ga));
                self.accumulate(grads, *b, self.like(*b, gb));
            }
        }
    }
}

#[cfg(test)]
mod tests;
