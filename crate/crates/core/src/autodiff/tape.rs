//! Wengert-list reverse-mode differentiation over [`DenseArray`] payloads.
//!
//! Every primitive records its operands on the tape and produces a new
//! [`Var`]. [`Tape::backward`] walks the list in reverse and accumulates
//! exact analytic gradients into every node that requires them.
//!
//! Broadcasting for the elementwise binary primitives (`add`, `sub`, `mul`,
//! `div`) follows trailing-axis alignment: shapes are right-aligned and a
//! dimension broadcasts when it is `1` or missing. All other primitives
//! require exact shapes, documented on each method.

use std::sync::Arc;

use super::array::DenseArray;
use super::params::{ParamId, ParamStore};
use super::AutodiffError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Negative slope used by every leaky-ReLU in the crate.
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    Concat(Vec<usize>),
    LeakyRelu(usize, f64),
    Exp(usize),
    Log(usize),
    Sigmoid(usize),
    Softplus(usize),
    Tanh(usize),
    Square(usize),
    Softmax(usize),
    LogSoftmax(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    MaxAxis(usize, Vec<usize>),
    SumAll(usize),
    MeanAll(usize),
    Reshape(usize),
    SelectRows(usize, Arc<[usize]>),
    GatScores(GatScoresOp),
    Attend(usize, usize),
}

#[derive(Clone, Debug)]
struct GatScoresOp {
    src: usize,
    dst: usize,
    bias: usize,
    att: usize,
    pair_type: Arc<[u8]>,
    heads: usize,
    slope: f64,
}

#[derive(Debug)]
struct Node {
    value: DenseArray,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded differentiation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<DenseArray>>,
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

/// Right-aligned broadcast of two shapes.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` expressed in the rank of `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..shape.len()).rev() {
        let oi = i + rank - shape.len();
        strides[oi] = if shape[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

/// Visits every output element with the matching operand offsets.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let total: usize = out.iter().product();
    if out.is_empty() {
        f(0, 0, 0);
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        let mut d = rank;
        while d > 0 {
            d -= 1;
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Splits `shape` around `axis` into `(outer, len, inner)` extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[inline]
fn leaky(z: f64, slope: f64) -> (f64, f64) {
    if z >= 0.0 {
        (z, 1.0)
    } else {
        (slope * z, slope)
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&DenseArray> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    fn push(&mut self, value: DenseArray, op: Op, requires_grad: bool, name: &'static str) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Constant input; gradients are not tracked.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Free input whose gradient is tracked.
    pub fn variable(&mut self, value: DenseArray) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter; see [`ParamStore::accumulate`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: store.value(id).clone(),
            op: Op::Param(id),
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (ParamId, Option<&DenseArray>)> {
        self.nodes.iter().enumerate().filter_map(move |(i, n)| match n.op {
            Op::Param(id) => Some((id, self.grads.get(i).and_then(|g| g.as_ref()))),
            _ => None,
        })
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(DenseArray, bool), AutodiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let rg = self.rg(&[a.0, b.0]);
        if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Ok((DenseArray::from_parts(va.shape().to_vec(), data), rg));
        }
        let out = broadcast_shape(va.shape(), vb.shape()).ok_or_else(|| mismatch(name, va.shape(), vb.shape()))?;
        let sa = broadcast_strides(va.shape(), &out);
        let sb = broadcast_strides(vb.shape(), &out);
        let mut data = vec![0.0; out.iter().product()];
        let (da, db) = (va.data(), vb.data());
        for_each_broadcast(&out, &sa, &sb, |o, ia, ib| data[o] = f(da[ia], db[ib]));
        Ok((DenseArray::from_parts(out, data), rg))
    }

    /// Elementwise sum with trailing-axis broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(v, Op::Add(a.0, b.0), rg, "add")
    }

    /// Elementwise difference with trailing-axis broadcasting.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a.0, b.0), rg, "sub")
    }

    /// Elementwise product with trailing-axis broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a.0, b.0), rg, "mul")
    }

    /// Elementwise quotient with trailing-axis broadcasting.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (v, rg) = self.binary(a, b, "div", |x, y| x / y)?;
        self.push(v, Op::Div(a.0, b.0), rg, "div")
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, AutodiffError> {
        let v = self.nodes[a.0].value.map(|x| x * factor);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Scale(a.0, factor), rg, "scale")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.scale(a, -1.0)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, shift: f64) -> Result<Var, AutodiffError> {
        let v = self.nodes[a.0].value.map(|x| x + shift);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Offset(a.0), rg, "offset")
    }

    /// `a[..., k] x b[k, n] -> [..., n]`: leading axes of `a` are rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if vb.shape().len() != 2 || va.shape().is_empty() || *va.shape().last().unwrap() != vb.shape()[0] {
            return Err(mismatch("matmul", va.shape(), vb.shape()));
        }
        let (k, n) = (vb.shape()[0], vb.shape()[1]);
        let rows = va.len() / k;
        let mut out = vec![0.0; rows * n];
        let (da, db) = (va.data(), vb.data());
        for r in 0..rows {
            let orow = &mut out[r * n..(r + 1) * n];
            for (i, &x) in da[r * k..(r + 1) * k].iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                for (o, &w) in orow.iter_mut().zip(&db[i * n..(i + 1) * n]) {
                    *o += x * w;
                }
            }
        }
        let mut shape = va.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(&[a.0, b.0]);
        self.push(DenseArray::from_parts(shape, out), Op::MatMul(a.0, b.0), rg, "matmul")
    }

    /// Joins operands along the last axis; leading axes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = self.nodes[parts[0].0].value.shape().to_vec();
        if first.is_empty() {
            return Err(mismatch("concat", &first, &first));
        }
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.nodes[p.0].value.shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(mismatch("concat", &first, s));
            }
            widths.push(*s.last().unwrap());
        }
        let rows: usize = lead.iter().product();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[p.0].value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        self.push(DenseArray::from_parts(shape, out), Op::Concat(ids), rg, "concat")
    }

    /// Leaky rectifier; the derivative at exactly zero is taken as 1.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, AutodiffError> {
        let v = self.nodes[a.0].value.map(|x| leaky(x, slope).0);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::LeakyRelu(a.0, slope), rg, "leaky_relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.nodes[a.0].value.map(f64::exp);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Exp(a.0), rg, "exp")
    }

    /// Natural logarithm; non-positive inputs are rejected as non-finite.
    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.nodes[a.0].value.map(f64::ln);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Log(a.0), rg, "log")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.nodes[a.0].value.map(stable_sigmoid);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Sigmoid(a.0), rg, "sigmoid")
    }

    /// `ln(1 + e^x)` computed without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.nodes[a.0].value.map(stable_softplus);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Softplus(a.0), rg, "softplus")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.nodes[a.0].value.map(f64::tanh);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Tanh(a.0), rg, "tanh")
    }

    pub fn square(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = self.nodes[a.0].value.map(|x| x * x);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Square(a.0), rg, "square")
    }

    fn last_axis(&self, a: Var, name: &'static str) -> Result<(usize, usize), AutodiffError> {
        let s = self.nodes[a.0].value.shape();
        match s.last() {
            Some(&w) => Ok((self.nodes[a.0].value.len() / w, w)),
            None => Err(mismatch(name, s, &[])),
        }
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (rows, w) = self.last_axis(a, "softmax")?;
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let x = &src.data()[r * w..(r + 1) * w];
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let o = &mut out[r * w..(r + 1) * w];
            let mut z = 0.0;
            for (oi, &xi) in o.iter_mut().zip(x) {
                *oi = (xi - m).exp();
                z += *oi;
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        let v = DenseArray::from_parts(src.shape().to_vec(), out);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Softmax(a.0), rg, "softmax")
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let (rows, w) = self.last_axis(a, "log_softmax")?;
        let src = &self.nodes[a.0].value;
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            let x = &src.data()[r * w..(r + 1) * w];
            let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + x.iter().map(|&xi| (xi - m).exp()).sum::<f64>().ln();
            for (oi, &xi) in out[r * w..(r + 1) * w].iter_mut().zip(x) {
                *oi = xi - lse;
            }
        }
        let v = DenseArray::from_parts(src.shape().to_vec(), out);
        let rg = self.rg(&[a.0]);
        self.push(v, Op::LogSoftmax(a.0), rg, "log_softmax")
    }

    fn reduce_axis(&mut self, a: Var, axis: usize, name: &'static str) -> Result<(usize, usize, usize, Vec<usize>), AutodiffError> {
        let s = self.nodes[a.0].value.shape();
        if axis >= s.len() {
            return Err(mismatch(name, s, &[axis]));
        }
        let (o, l, i) = axis_split(s, axis);
        let mut out_shape = s.to_vec();
        out_shape.remove(axis);
        Ok((o, l, i, out_shape))
    }

    fn axis_sum(&self, a: Var, outer: usize, len: usize, inner: usize, scale: f64) -> Vec<f64> {
        let d = self.nodes[a.0].value.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        if scale != 1.0 {
            out.iter_mut().for_each(|x| *x *= scale);
        }
        out
    }

    /// Sum over `axis`, which is removed from the shape.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let (outer, len, inner, shape) = self.reduce_axis(a, axis, "sum_axis")?;
        let out = self.axis_sum(a, outer, len, inner, 1.0);
        let rg = self.rg(&[a.0]);
        self.push(DenseArray::from_parts(shape, out), Op::SumAxis(a.0, axis), rg, "sum_axis")
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let (outer, len, inner, shape) = self.reduce_axis(a, axis, "mean_axis")?;
        let out = self.axis_sum(a, outer, len, inner, 1.0 / len as f64);
        let rg = self.rg(&[a.0]);
        self.push(DenseArray::from_parts(shape, out), Op::MeanAxis(a.0, axis), rg, "mean_axis")
    }

    /// Maximum over `axis`; the gradient flows to the first maximal entry.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var, AutodiffError> {
        let (outer, len, inner, shape) = self.reduce_axis(a, axis, "max_axis")?;
        let d = self.nodes[a.0].value.data();
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut arg = vec![0usize; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    let j = o * inner + i;
                    if d[base + i] > out[j] {
                        out[j] = d[base + i];
                        arg[j] = base + i;
                    }
                }
            }
        }
        let rg = self.rg(&[a.0]);
        self.push(DenseArray::from_parts(shape, out), Op::MaxAxis(a.0, arg), rg, "max_axis")
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s: f64 = self.nodes[a.0].value.data().iter().sum();
        let rg = self.rg(&[a.0]);
        self.push(DenseArray::scalar(s), Op::SumAll(a.0), rg, "sum")
    }

    /// Mean of all elements as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let v = &self.nodes[a.0].value;
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(&[a.0]);
        self.push(DenseArray::scalar(s), Op::MeanAll(a.0), rg, "mean")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let src = &self.nodes[a.0].value;
        if shape.iter().product::<usize>() != src.len() {
            return Err(mismatch("reshape", src.shape(), shape));
        }
        let v = DenseArray::from_parts(shape.to_vec(), src.data().to_vec());
        let rg = self.rg(&[a.0]);
        self.push(v, Op::Reshape(a.0), rg, "reshape")
    }

    /// Gathers rows (first-axis slices); indices may repeat.
    pub fn select_rows(&mut self, a: Var, rows: Arc<[usize]>) -> Result<Var, AutodiffError> {
        let src = &self.nodes[a.0].value;
        let s = src.shape();
        if s.is_empty() || rows.iter().any(|&r| r >= s[0]) || rows.is_empty() {
            return Err(mismatch("select_rows", s, &rows));
        }
        let w = src.len() / s[0];
        let mut out = Vec::with_capacity(rows.len() * w);
        for &r in rows.iter() {
            out.extend_from_slice(&src.data()[r * w..(r + 1) * w]);
        }
        let mut shape = s.to_vec();
        shape[0] = rows.len();
        let rg = self.rg(&[a.0]);
        self.push(DenseArray::from_parts(shape, out), Op::SelectRows(a.0, rows), rg, "select_rows")
    }

    /// Pairwise attention logits of a GATv2 layer.
    ///
    /// `src` and `dst` are `[..., n, heads*k]` projections of the receiving
    /// and sending nodes (leading axes are independent graphs), `bias` is
    /// `[p, heads*k]` with one row per pair type, `pair_type[u*n + v]` selects
    /// the bias row for pair `(u, v)` and `att` is `[heads*k]`. Returns
    /// `[..., n, heads, n]` with
    /// `out[u,h,v] = sum_k att[h,k] * leaky(src[u,h,k] + dst[v,h,k] + bias[t(u,v),h,k])`.
    pub fn gat_scores(
        &mut self,
        src: Var,
        dst: Var,
        bias: Var,
        att: Var,
        pair_type: Arc<[u8]>,
        heads: usize,
    ) -> Result<Var, AutodiffError> {
        let (vs, vd, vb, va) = (
            &self.nodes[src.0].value,
            &self.nodes[dst.0].value,
            &self.nodes[bias.0].value,
            &self.nodes[att.0].value,
        );
        let rank = vs.shape().len();
        if rank < 2 || vs.shape() != vd.shape() {
            return Err(mismatch("gat_scores", vs.shape(), vd.shape()));
        }
        let (n, hk) = (vs.shape()[rank - 2], vs.shape()[rank - 1]);
        let batch = vs.len() / (n * hk);
        if vb.shape().len() != 2 || vb.shape()[1] != hk {
            return Err(mismatch("gat_scores", vs.shape(), vb.shape()));
        }
        if va.shape() != [hk] || heads == 0 || hk % heads != 0 {
            return Err(mismatch("gat_scores", vs.shape(), va.shape()));
        }
        let p = vb.shape()[0];
        if pair_type.len() != n * n || pair_type.iter().any(|&t| t as usize >= p) {
            return Err(mismatch("gat_scores", &[n, n], &[pair_type.len()]));
        }
        let k = hk / heads;
        let (db, da) = (vb.data(), va.data());
        let mut out = vec![0.0; batch * n * heads * n];
        // Receiver projection plus pair bias, one row per pair type.
        let mut sb = vec![0.0; p * hk];
        for b in 0..batch {
            let ds = &vs.data()[b * n * hk..(b + 1) * n * hk];
            let dd = &vd.data()[b * n * hk..(b + 1) * n * hk];
            let ob = &mut out[b * n * heads * n..(b + 1) * n * heads * n];
            for u in 0..n {
                let su = &ds[u * hk..(u + 1) * hk];
                for (t, row) in sb.chunks_exact_mut(hk).enumerate() {
                    for ((r, &x), &y) in row.iter_mut().zip(su).zip(&db[t * hk..(t + 1) * hk]) {
                        *r = x + y;
                    }
                }
                let ou = &mut ob[u * heads * n..(u + 1) * heads * n];
                for (v, dv) in dd.chunks_exact(hk).enumerate() {
                    let t = pair_type[u * n + v] as usize;
                    let base = &sb[t * hk..(t + 1) * hk];
                    for (h, ((bh, dh), ah)) in base.chunks_exact(k).zip(dv.chunks_exact(k)).zip(da.chunks_exact(k)).enumerate() {
                        let mut acc = 0.0;
                        for ((&x0, &x1), &a) in bh.iter().zip(dh).zip(ah) {
                            let x = x0 + x1;
                            acc += a * (x.max(0.0) + LEAKY_SLOPE * x.min(0.0));
                        }
                        ou[h * n + v] = acc;
                    }
                }
            }
        }
        let mut shape = vs.shape()[..rank - 1].to_vec();
        shape.extend([heads, n]);
        let rg = self.rg(&[src.0, dst.0, bias.0, att.0]);
        let op = Op::GatScores(GatScoresOp {
            src: src.0,
            dst: dst.0,
            bias: bias.0,
            att: att.0,
            pair_type,
            heads,
            slope: LEAKY_SLOPE,
        });
        self.push(DenseArray::from_parts(shape, out), op, rg, "gat_scores")
    }

    /// Attention-weighted aggregation:
    /// `weights[..., n, h, m] . values[..., m, h, o] -> [..., n, h, o]`,
    /// with matching leading axes.
    pub fn attend(&mut self, weights: Var, values: Var) -> Result<Var, AutodiffError> {
        let (vw, vv) = (&self.nodes[weights.0].value, &self.nodes[values.0].value);
        let (ws, vs) = (vw.shape(), vv.shape());
        let r = ws.len();
        if r < 3 || vs.len() != r || ws[..r - 3] != vs[..r - 3] || ws[r - 2] != vs[r - 2] || ws[r - 1] != vs[r - 3] {
            return Err(mismatch("attend", ws, vs));
        }
        let (n, h, m, o) = (ws[r - 3], ws[r - 2], ws[r - 1], vs[r - 1]);
        let batch = vw.len() / (n * h * m);
        let mut out = vec![0.0; batch * n * h * o];
        for b in 0..batch {
            let dw = &vw.data()[b * n * h * m..(b + 1) * n * h * m];
            let dv = &vv.data()[b * m * h * o..(b + 1) * m * h * o];
            let ob = &mut out[b * n * h * o..(b + 1) * n * h * o];
            for u in 0..n {
                for hh in 0..h {
                    let orow = &mut ob[(u * h + hh) * o..(u * h + hh + 1) * o];
                    let wrow = &dw[(u * h + hh) * m..(u * h + hh + 1) * m];
                    for (v, &w) in wrow.iter().enumerate() {
                        let vrow = &dv[(v * h + hh) * o..(v * h + hh + 1) * o];
                        for (oo, &x) in orow.iter_mut().zip(vrow) {
                            *oo += w * x;
                        }
                    }
                }
            }
        }
        let mut shape = ws[..r - 1].to_vec();
        shape.push(o);
        let rg = self.rg(&[weights.0, values.0]);
        self.push(DenseArray::from_parts(shape, out), Op::Attend(weights.0, values.0), rg, "attend")
    }

    /// Reverse pass from a scalar `loss`. Gradients add onto whatever
    /// earlier passes left behind.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(AutodiffError::NotScalar {
                shape: lv.shape().to_vec(),
            });
        }
        let mut g: Vec<Option<DenseArray>> = vec![None; loss.0 + 1];
        g[loss.0] = Some(DenseArray::filled(lv.shape(), 1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(go) = g[i].take() else { continue };
            self.propagate(i, &go, &mut g);
            if self.grads.len() < self.nodes.len() {
                self.grads.resize(self.nodes.len(), None);
            }
            match &mut self.grads[i] {
                Some(acc) => acc.add_assign(&go),
                slot @ None => *slot = Some(go),
            }
        }
        Ok(())
    }

    fn acc(&self, g: &mut [Option<DenseArray>], i: usize, contrib: DenseArray) {
        if !self.nodes[i].requires_grad {
            return;
        }
        match &mut g[i] {
            Some(a) => a.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn acc_with(&self, g: &mut [Option<DenseArray>], i: usize, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[i].requires_grad {
            return;
        }
        let slot = g[i].get_or_insert_with(|| DenseArray::zeros(self.nodes[i].value.shape()));
        f(slot.data_mut());
    }

    fn elementwise(&self, g: &mut [Option<DenseArray>], a: usize, go: &DenseArray, f: impl Fn(usize, f64) -> f64) {
        if !self.nodes[a].requires_grad {
            return;
        }
        let data = go.data().iter().enumerate().map(|(j, &x)| f(j, x)).collect();
        self.acc(g, a, DenseArray::from_parts(self.nodes[a].value.shape().to_vec(), data));
    }

    fn broadcast_backward(&self, g: &mut [Option<DenseArray>], a: usize, b: usize, go: &DenseArray, da: impl Fn(f64, f64, f64) -> f64, db: impl Fn(f64, f64, f64) -> f64) {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        let out = go.shape();
        let sa = broadcast_strides(va.shape(), out);
        let sb = broadcast_strides(vb.shape(), out);
        let (xa, xb, gd) = (va.data(), vb.data(), go.data());
        if self.nodes[a].requires_grad {
            let mut ga = vec![0.0; va.len()];
            for_each_broadcast(out, &sa, &sb, |o, ia, ib| ga[ia] += da(gd[o], xa[ia], xb[ib]));
            self.acc(g, a, DenseArray::from_parts(va.shape().to_vec(), ga));
        }
        if self.nodes[b].requires_grad {
            let mut gb = vec![0.0; vb.len()];
            for_each_broadcast(out, &sa, &sb, |o, ia, ib| gb[ib] += db(gd[o], xa[ia], xb[ib]));
            self.acc(g, b, DenseArray::from_parts(vb.shape().to_vec(), gb));
        }
    }

    fn propagate(&self, i: usize, go: &DenseArray, g: &mut [Option<DenseArray>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                if self.nodes[a].value.shape() == go.shape() && self.nodes[b].value.shape() == go.shape() {
                    self.acc(g, a, go.clone());
                    self.acc(g, b, go.clone());
                } else {
                    self.broadcast_backward(g, a, b, go, |d, _, _| d, |d, _, _| d);
                }
            }
            Op::Sub(a, b) => self.broadcast_backward(g, *a, *b, go, |d, _, _| d, |d, _, _| -d),
            Op::Mul(a, b) => self.broadcast_backward(g, *a, *b, go, |d, _, y| d * y, |d, x, _| d * x),
            Op::Div(a, b) => self.broadcast_backward(g, *a, *b, go, |d, _, y| d / y, |d, x, y| -d * x / (y * y)),
            Op::Scale(a, f) => self.elementwise(g, *a, go, |_, d| d * f),
            Op::Offset(a) => self.acc(g, *a, go.clone()),
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                let (k, n) = (vb.shape()[0], vb.shape()[1]);
                let rows = va.len() / k;
                let (xa, xb, gd) = (va.data(), vb.data(), go.data());
                self.acc_with(g, a, |ga| {
                    for r in 0..rows {
                        let grow = &gd[r * n..(r + 1) * n];
                        for (i, gai) in ga[r * k..(r + 1) * k].iter_mut().enumerate() {
                            *gai += grow.iter().zip(&xb[i * n..(i + 1) * n]).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                self.acc_with(g, b, |gb| {
                    for r in 0..rows {
                        let grow = &gd[r * n..(r + 1) * n];
                        for i in 0..k {
                            let x = xa[r * k + i];
                            if x == 0.0 {
                                continue;
                            }
                            for (gbj, &d) in gb[i * n..(i + 1) * n].iter_mut().zip(grow) {
                                *gbj += x * d;
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let total = *out.shape().last().unwrap();
                let rows = out.len() / total;
                let mut off = 0;
                for &p in parts {
                    let w = *self.nodes[p].value.shape().last().unwrap();
                    let o = off;
                    self.acc_with(g, p, |gp| {
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += go.data()[r * total + o + j];
                            }
                        }
                    });
                    off += w;
                }
            }
            Op::LeakyRelu(a, s) => {
                let x = self.nodes[*a].value.data();
                self.elementwise(g, *a, go, |j, d| d * leaky(x[j], *s).1)
            }
            Op::Exp(a) => self.elementwise(g, *a, go, |j, d| d * out.data()[j]),
            Op::Log(a) => {
                let x = self.nodes[*a].value.data();
                self.elementwise(g, *a, go, |j, d| d / x[j])
            }
            Op::Sigmoid(a) => self.elementwise(g, *a, go, |j, d| {
                let y = out.data()[j];
                d * y * (1.0 - y)
            }),
            Op::Softplus(a) => {
                let x = self.nodes[*a].value.data();
                self.elementwise(g, *a, go, |j, d| d * stable_sigmoid(x[j]))
            }
            Op::Tanh(a) => self.elementwise(g, *a, go, |j, d| {
                let y = out.data()[j];
                d * (1.0 - y * y)
            }),
            Op::Square(a) => {
                let x = self.nodes[*a].value.data();
                self.elementwise(g, *a, go, |j, d| 2.0 * d * x[j])
            }
            Op::Softmax(a) => {
                let w = *out.shape().last().unwrap();
                let y = out.data();
                let gd = go.data();
                self.acc_with(g, *a, |ga| {
                    for r in 0..y.len() / w {
                        let s = r * w..(r + 1) * w;
                        let dot: f64 = gd[s.clone()].iter().zip(&y[s.clone()]).map(|(a, b)| a * b).sum();
                        for j in s {
                            ga[j] += y[j] * (gd[j] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let w = *out.shape().last().unwrap();
                let y = out.data();
                let gd = go.data();
                self.acc_with(g, *a, |ga| {
                    for r in 0..y.len() / w {
                        let s = r * w..(r + 1) * w;
                        let total: f64 = gd[s.clone()].iter().sum();
                        for j in s {
                            ga[j] += gd[j] - y[j].exp() * total;
                        }
                    }
                });
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let (outer, len, inner) = axis_split(self.nodes[*a].value.shape(), *axis);
                let scale = if matches!(self.nodes[i].op, Op::MeanAxis(..)) { 1.0 / len as f64 } else { 1.0 };
                let gd = go.data();
                self.acc_with(g, *a, |ga| {
                    for o in 0..outer {
                        for l in 0..len {
                            let base = (o * len + l) * inner;
                            for j in 0..inner {
                                ga[base + j] += gd[o * inner + j] * scale;
                            }
                        }
                    }
                });
            }
            Op::MaxAxis(a, arg) => {
                let gd = go.data();
                self.acc_with(g, *a, |ga| {
                    for (j, &src) in arg.iter().enumerate() {
                        ga[src] += gd[j];
                    }
                });
            }
            Op::SumAll(a) => {
                let d = go.data()[0];
                self.acc(g, *a, DenseArray::filled(self.nodes[*a].value.shape(), d));
            }
            Op::MeanAll(a) => {
                let n = self.nodes[*a].value.len() as f64;
                let d = go.data()[0] / n;
                self.acc(g, *a, DenseArray::filled(self.nodes[*a].value.shape(), d));
            }
            Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                self.acc(g, *a, DenseArray::from_parts(shape, go.data().to_vec()));
            }
            Op::SelectRows(a, rows) => {
                let w = go.len() / rows.len();
                let gd = go.data();
                self.acc_with(g, *a, |ga| {
                    for (j, &r) in rows.iter().enumerate() {
                        for c in 0..w {
                            ga[r * w + c] += gd[j * w + c];
                        }
                    }
                });
            }
            Op::GatScores(op) => self.gat_scores_backward(op, go, g),
            Op::Attend(w, v) => {
                let (vw, vv) = (&self.nodes[*w].value, &self.nodes[*v].value);
                let r = vw.shape().len();
                let (n, h, m) = (vw.shape()[r - 3], vw.shape()[r - 2], vw.shape()[r - 1]);
                let o = vv.shape()[r - 1];
                let batch = vw.len() / (n * h * m);
                let (dw_all, dv_all, gd_all) = (vw.data(), vv.data(), go.data());
                self.acc_with(g, *w, |gw_all| {
                    for b in 0..batch {
                        let dv = &dv_all[b * m * h * o..(b + 1) * m * h * o];
                        let gd = &gd_all[b * n * h * o..(b + 1) * n * h * o];
                        let gw = &mut gw_all[b * n * h * m..(b + 1) * n * h * m];
                        for u in 0..n {
                            for hh in 0..h {
                                let grow = &gd[(u * h + hh) * o..(u * h + hh + 1) * o];
                                for vi in 0..m {
                                    let vrow = &dv[(vi * h + hh) * o..(vi * h + hh + 1) * o];
                                    gw[(u * h + hh) * m + vi] += grow.iter().zip(vrow).map(|(a, b)| a * b).sum::<f64>();
                                }
                            }
                        }
                    }
                });
                self.acc_with(g, *v, |gv_all| {
                    for b in 0..batch {
                        let dw = &dw_all[b * n * h * m..(b + 1) * n * h * m];
                        let gd = &gd_all[b * n * h * o..(b + 1) * n * h * o];
                        let gv = &mut gv_all[b * m * h * o..(b + 1) * m * h * o];
                        for u in 0..n {
                            for hh in 0..h {
                                let grow = &gd[(u * h + hh) * o..(u * h + hh + 1) * o];
                                for vi in 0..m {
                                    let wt = dw[(u * h + hh) * m + vi];
                                    for (x, &d) in gv[(vi * h + hh) * o..(vi * h + hh + 1) * o].iter_mut().zip(grow) {
                                        *x += wt * d;
                                    }
                                }
                            }
                        }
                    }
                });
            }
        }
    }

    fn gat_scores_backward(&self, op: &GatScoresOp, go: &DenseArray, g: &mut [Option<DenseArray>]) {
        let (vs, vd, vb, va) = (
            &self.nodes[op.src].value,
            &self.nodes[op.dst].value,
            &self.nodes[op.bias].value,
            &self.nodes[op.att].value,
        );
        let rank = vs.shape().len();
        let (n, hk) = (vs.shape()[rank - 2], vs.shape()[rank - 1]);
        let batch = vs.len() / (n * hk);
        let p = vb.shape()[0];
        let heads = op.heads;
        let k = hk / heads;
        let (db, da) = (vb.data(), va.data());
        let mut gs = vec![0.0; vs.len()];
        let mut gdst = vec![0.0; vd.len()];
        let mut gb = vec![0.0; vb.len()];
        let mut ga = vec![0.0; hk];
        let mut sb = vec![0.0; p * hk];
        // Per-type sums of the pair gradients of the current receiver.
        let mut acc_t = vec![0.0; p * hk];
        for b in 0..batch {
            let off = b * n * hk;
            let ds = &vs.data()[off..off + n * hk];
            let dd = &vd.data()[off..off + n * hk];
            let gd = &go.data()[b * n * heads * n..(b + 1) * n * heads * n];
            let gdst_b = &mut gdst[off..off + n * hk];
            for u in 0..n {
                let su = &ds[u * hk..(u + 1) * hk];
                for (t, row) in sb.chunks_exact_mut(hk).enumerate() {
                    for ((r, &x), &y) in row.iter_mut().zip(su).zip(&db[t * hk..(t + 1) * hk]) {
                        *r = x + y;
                    }
                }
                acc_t.iter_mut().for_each(|x| *x = 0.0);
                let gu = &gd[u * heads * n..(u + 1) * heads * n];
                for v in 0..n {
                    let t = op.pair_type[u * n + v] as usize;
                    let base = &sb[t * hk..(t + 1) * hk];
                    let dv = &dd[v * hk..(v + 1) * hk];
                    let gv = &mut gdst_b[v * hk..(v + 1) * hk];
                    let at = &mut acc_t[t * hk..(t + 1) * hk];
                    for h in 0..heads {
                        let c = gu[h * n + v];
                        if c == 0.0 {
                            continue;
                        }
                        for j in h * k..(h + 1) * k {
                            let x = base[j] + dv[j];
                            let (act, slope) = if x >= 0.0 { (x, 1.0) } else { (op.slope * x, op.slope) };
                            ga[j] += c * act;
                            let back = c * da[j] * slope;
                            gv[j] += back;
                            at[j] += back;
                        }
                    }
                }
                let gsu = &mut gs[off + u * hk..off + (u + 1) * hk];
                for (t, at) in acc_t.chunks_exact(hk).enumerate() {
                    for ((s, bt), &x) in gsu.iter_mut().zip(&mut gb[t * hk..(t + 1) * hk]).zip(at) {
                        *s += x;
                        *bt += x;
                    }
                }
            }
        }
        self.acc(g, op.src, DenseArray::from_parts(vs.shape().to_vec(), gs));
        self.acc(g, op.dst, DenseArray::from_parts(vd.shape().to_vec(), gdst));
        self.acc(g, op.bias, DenseArray::from_parts(vb.shape().to_vec(), gb));
        self.acc(g, op.att, DenseArray::from_parts(va.shape().to_vec(), ga));
    }
}

