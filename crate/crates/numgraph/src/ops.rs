//! Primitive operations: forward constructors on [`Graph`] and their
//! backward rules.

use crate::error::{invalid, shape_err, Result};
use crate::graph::{Graph, Node, Op, Var};
use crate::tensor::{axis_split, numel, Tensor};

/// Epsilon used by [`Graph::layer_norm`] when callers have no preference.
pub const LAYER_NORM_EPS: f64 = 1e-5;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Maps every flat index of a broadcast output back to its source element.
enum Bcast {
    Same,
    Repeat(usize),
    Generic(Vec<usize>),
}

impl Bcast {
    fn plan(input: &[usize], out: &[usize]) -> Self {
        if input == out {
            return Bcast::Same;
        }
        let lead = input.iter().take_while(|&&d| d == 1).count();
        let core = &input[lead..];
        if out.ends_with(core) {
            return Bcast::Repeat(numel(core));
        }
        let r = out.len();
        let pad = r - input.len();
        let mut strides = vec![0usize; r];
        let mut s = 1;
        for i in (0..input.len()).rev() {
            strides[pad + i] = if input[i] == 1 { 0 } else { s };
            s *= input[i];
        }
        Bcast::Generic(strided_map(out, &strides))
    }

    #[inline]
    fn at(&self, o: usize) -> usize {
        match self {
            Bcast::Same => o,
            Bcast::Repeat(n) => o % n,
            Bcast::Generic(m) => m[o],
        }
    }
}

/// For each flat index of `shape`, the offset `sum(idx[d] * strides[d])`.
fn strided_map(shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let n = numel(shape);
    let r = shape.len();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..n {
        map.push(off);
        for d in (0..r).rev() {
            idx[d] += 1;
            off += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            off -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
    map
}

fn permute_map(in_shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let r = in_shape.len();
    let mut in_strides = vec![1usize; r];
    for i in (0..r.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    strided_map(&out_shape, &strides)
}

/// C[m,n] (+)= op(A)[m,k] * op(B)[k,n]. `a_t` means A is stored as [k,m],
/// `b_t` means B is stored as [n,k].
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and the strides describe
    // dense row-major layouts of exactly those extents.
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

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(invalid(op, format!("axis {axis} out of range for shape {shape:?}")));
    }
    Ok(())
}

impl Graph {
    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| f(a)).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        let ng = self.needs(x);
        self.push(out, op, ng, name)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let out_shape = broadcast_shape(av.shape(), bv.shape()).ok_or_else(|| {
            shape_err(name, format!("cannot broadcast {:?} with {:?}", av.shape(), bv.shape()))
        })?;
        let pa = Bcast::plan(av.shape(), &out_shape);
        let pb = Bcast::plan(bv.shape(), &out_shape);
        let (ad, bd) = (av.data(), bv.data());
        let data = (0..numel(&out_shape))
            .map(|o| f(ad[pa.at(o)], bd[pb.at(o)]))
            .collect();
        let out = Tensor::new(out_shape, data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, op, ng, name)
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::AddScalar(x), "add_scalar", |a| a + c)
    }

    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, Op::MulScalar(x, c), "mul_scalar", |a| a * c)
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.mul_scalar(x, -1.0)
    }

    /// `a @ b`. Either `b` is a 2-D matrix shared across all leading axes of
    /// `a`, or both have identical leading (batch) axes.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (as_, bs) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if as_.len() < 2 || bs.len() < 2 {
            return Err(shape_err("matmul", format!("{as_:?} @ {bs:?}")));
        }
        let (m, k) = (as_[as_.len() - 2], as_[as_.len() - 1]);
        let (k2, n) = (bs[bs.len() - 2], bs[bs.len() - 1]);
        if k != k2 {
            return Err(shape_err("matmul", format!("{as_:?} @ {bs:?}")));
        }
        let ng = self.needs(a) || self.needs(b);
        if bs.len() == 2 {
            let rows = numel(&as_) / k;
            let mut out = vec![0.0; rows * n];
            gemm(rows, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
            let mut shape = as_[..as_.len() - 1].to_vec();
            shape.push(n);
            let t = Tensor::new(shape, out)?;
            return self.push(t, Op::Matmul(a, b), ng, "matmul");
        }
        if as_[..as_.len() - 2] != bs[..bs.len() - 2] {
            return Err(shape_err("matmul", format!("batch axes differ: {as_:?} @ {bs:?}")));
        }
        let batch = numel(&as_[..as_.len() - 2]);
        let mut out = vec![0.0; batch * m * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for p in 0..batch {
            gemm(
                m,
                k,
                n,
                &ad[p * m * k..(p + 1) * m * k],
                false,
                &bd[p * k * n..(p + 1) * k * n],
                false,
                &mut out[p * m * n..(p + 1) * m * n],
                0.0,
            );
        }
        let mut shape = as_[..as_.len() - 1].to_vec();
        shape.push(n);
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::BatchMatmul(a, b), ng, "matmul")
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(invalid("permute", format!("{perm:?} is not a permutation of rank {}", shape.len())));
        }
        let map = permute_map(&shape, perm);
        let src = self.value(x).data();
        let data = map.iter().map(|&i| src[i]).collect();
        let out_shape = perm.iter().map(|&p| shape[p]).collect();
        let t = Tensor::new(out_shape, data)?;
        let ng = self.needs(x);
        self.push(t, Op::Permute(x, perm.to_vec()), ng, "permute")
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).len();
        if r < 2 {
            return Err(invalid("transpose", "rank < 2"));
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(x, &perm)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let ng = self.needs(x);
        self.push(t, Op::Reshape(x), ng, "reshape")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = xs.first().ok_or_else(|| invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(d, (a, b))| d != axis && a != b) {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {axis}", s, base)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &x in xs {
                let v = self.value(x);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let t = Tensor::new(shape, data)?;
        let ng = xs.iter().any(|&x| self.needs(x));
        self.push(t, Op::Concat(xs.to_vec(), axis), ng, "concat")
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("slice", &shape, axis)?;
        if start + len > shape[axis] {
            return Err(shape_err("slice", format!("[{start}, {}) exceeds extent {}", start + len, shape[axis])));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let t = Tensor::new(out_shape, data)?;
        let ng = self.needs(x);
        self.push(t, Op::Slice { x, axis, start }, ng, "slice")
    }

    /// Gathers entries of `axis` in the order given by `indices`.
    pub fn index_select(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("index_select", &shape, axis)?;
        if let Some(bad) = indices.iter().find(|&&i| i >= shape[axis]) {
            return Err(shape_err("index_select", format!("index {bad} out of range {}", shape[axis])));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * n + i) * inner;
                data.extend_from_slice(&src[base..base + inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = indices.len();
        let t = Tensor::new(out_shape, data)?;
        let ng = self.needs(x);
        self.push(
            t,
            Op::IndexSelect {
                x,
                axis,
                indices: indices.to_vec(),
            },
            ng,
            "index_select",
        )
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().ok_or_else(|| invalid("softmax", "rank 0"))?;
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(d.max(1)) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for e in row.iter_mut() {
                *e = (*e - m).exp();
                s += *e;
            }
            for e in row.iter_mut() {
                *e /= s;
            }
        }
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let ng = self.needs(x);
        self.push(t, Op::Softmax(x), ng, "softmax")
    }

    /// Normalizes the last axis to zero mean and unit variance, then applies
    /// `gain` and `bias` (both shaped like the last axis).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(invalid("layer_norm", format!("epsilon must be positive, got {eps}")));
        }
        let v = self.value(x);
        let d = *v.shape().last().ok_or_else(|| invalid("layer_norm", "rank 0"))?;
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err(
                "layer_norm",
                format!("gain {:?} / bias {:?} vs last axis {d}", self.shape(gain), self.shape(bias)),
            ));
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = v.numel() / d.max(1);
        let mut xhat = vec![0.0; v.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; v.numel()];
        for r in 0..rows {
            let row = &v.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(v.shape().to_vec(), out)?;
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
            "layer_norm",
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Gelu(x), "gelu", gelu)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), "relu", |a| a.max(0.0))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), "exp", f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log(x), "log", f64::ln)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), ng, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        if v.numel() == 0 {
            return Err(invalid("mean", "empty input"));
        }
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), ng, "mean")
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, name: &'static str, mean: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis(name, &shape, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        if mean && n == 0 {
            return Err(invalid(name, "empty axis"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..n {
                let base = (o * n + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|e| *e /= n as f64);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let t = Tensor::new(out_shape, out)?;
        let op = if mean { Op::MeanAxis(x, axis) } else { Op::SumAxis(x, axis) };
        let ng = self.needs(x);
        self.push(t, op, ng, name)
    }

    /// Sums out `axis`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, "sum_axis", false)
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, "mean_axis", true)
    }

    /// Max-pools out `axis`. Ties resolve to the lowest index, which is also
    /// the only entry that receives gradient.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("max_axis", &shape, axis)?;
        let (outer, n, inner) = axis_split(&shape, axis);
        if n == 0 {
            return Err(invalid("max_axis", "empty axis"));
        }
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * n * inner + i;
                for a in 1..n {
                    let j = (o * n + a) * inner + i;
                    if src[j] > src[best] {
                        best = j;
                    }
                }
                out[o * inner + i] = src[best];
                argmax[o * inner + i] = best;
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        let t = Tensor::new(out_shape, out)?;
        let ng = self.needs(x);
        self.push(t, Op::MaxAxis { x, argmax }, ng, "max_axis")
    }

    /// Scales every vector along the last axis to unit Euclidean length.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let d = *v.shape().last().ok_or_else(|| invalid("l2_normalize", "rank 0"))?;
        let mut data = v.data().to_vec();
        let mut norms = Vec::with_capacity(data.len() / d.max(1));
        for row in data.chunks_mut(d.max(1)) {
            let n = row.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(invalid("l2_normalize", "zero-norm vector"));
            }
            row.iter_mut().for_each(|e| *e /= n);
            norms.push(n);
        }
        let t = Tensor::new(v.shape().to_vec(), data)?;
        let ng = self.needs(x);
        self.push(t, Op::L2Normalize { x, norms }, ng, "l2_normalize")
    }
}

fn acc(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let slot = &mut grads[v.0];
    let t = slot.get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape()));
    f(t.data_mut());
}

fn bcast_acc(nodes: &[Node], grads: &mut [Option<Tensor>], v: Var, out_shape: &[usize], f: impl Fn(usize) -> f64) {
    if !nodes[v.0].needs_grad {
        return;
    }
    let plan = Bcast::plan(nodes[v.0].value.shape(), out_shape);
    acc(nodes, grads, v, |gv| {
        for o in 0..numel(out_shape) {
            gv[plan.at(o)] += f(o);
        }
    });
}

pub(crate) fn backward_node(nodes: &[Node], grads: &mut [Option<Tensor>], i: usize, g: &Tensor) {
    let node = &nodes[i];
    let gd = g.data();
    let out = node.value.data();
    let out_shape = node.value.shape();
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            bcast_acc(nodes, grads, *a, out_shape, |o| gd[o]);
            bcast_acc(nodes, grads, *b, out_shape, |o| gd[o]);
        }
        Op::Sub(a, b) => {
            bcast_acc(nodes, grads, *a, out_shape, |o| gd[o]);
            bcast_acc(nodes, grads, *b, out_shape, |o| -gd[o]);
        }
        Op::Mul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let pa = Bcast::plan(av.shape(), out_shape);
            let pb = Bcast::plan(bv.shape(), out_shape);
            let (ad, bd) = (av.data(), bv.data());
            bcast_acc(nodes, grads, *a, out_shape, |o| gd[o] * bd[pb.at(o)]);
            bcast_acc(nodes, grads, *b, out_shape, |o| gd[o] * ad[pa.at(o)]);
        }
        Op::AddScalar(x) => acc(nodes, grads, *x, |gx| {
            gx.iter_mut().zip(gd).for_each(|(e, g)| *e += g);
        }),
        Op::MulScalar(x, c) => acc(nodes, grads, *x, |gx| {
            gx.iter_mut().zip(gd).for_each(|(e, g)| *e += c * g);
        }),
        Op::Matmul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let k = bv.shape()[0];
            let n = bv.shape()[1];
            let rows = av.numel() / k;
            acc(nodes, grads, *a, |ga| gemm(rows, n, k, gd, false, bv.data(), true, ga, 1.0));
            acc(nodes, grads, *b, |gb| gemm(k, rows, n, av.data(), true, gd, false, gb, 1.0));
        }
        Op::BatchMatmul(a, b) => {
            let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
            let r = av.rank();
            let (m, k) = (av.shape()[r - 2], av.shape()[r - 1]);
            let n = bv.shape()[r - 1];
            let batch = av.numel() / (m * k);
            acc(nodes, grads, *a, |ga| {
                for p in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        &gd[p * m * n..(p + 1) * m * n],
                        false,
                        &bv.data()[p * k * n..(p + 1) * k * n],
                        true,
                        &mut ga[p * m * k..(p + 1) * m * k],
                        1.0,
                    );
                }
            });
            acc(nodes, grads, *b, |gb| {
                for p in 0..batch {
                    gemm(
                        k,
                        m,
                        n,
                        &av.data()[p * m * k..(p + 1) * m * k],
                        true,
                        &gd[p * m * n..(p + 1) * m * n],
                        false,
                        &mut gb[p * k * n..(p + 1) * k * n],
                        1.0,
                    );
                }
            });
        }
        Op::Permute(x, perm) => {
            let map = permute_map(nodes[x.0].value.shape(), perm);
            acc(nodes, grads, *x, |gx| {
                for (o, &src) in map.iter().enumerate() {
                    gx[src] += gd[o];
                }
            });
        }
        Op::Reshape(x) => acc(nodes, grads, *x, |gx| {
            gx.iter_mut().zip(gd).for_each(|(e, g)| *e += g);
        }),
        Op::Concat(xs, axis) => {
            let (outer, total, inner) = axis_split(out_shape, *axis);
            let mut offset = 0;
            for &x in xs {
                let len = nodes[x.0].value.shape()[*axis];
                acc(nodes, grads, x, |gx| {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * len * inner;
                        for j in 0..len * inner {
                            gx[dst + j] += gd[src + j];
                        }
                    }
                });
                offset += len;
            }
        }
        Op::Slice { x, axis, start } => {
            let (outer, n, inner) = axis_split(nodes[x.0].value.shape(), *axis);
            let len = out_shape[*axis];
            acc(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    for j in 0..len * inner {
                        gx[dst + j] += gd[src + j];
                    }
                }
            });
        }
        Op::IndexSelect { x, axis, indices } => {
            let (outer, n, inner) = axis_split(nodes[x.0].value.shape(), *axis);
            let len = indices.len();
            acc(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    for (p, &idx) in indices.iter().enumerate() {
                        let dst = (o * n + idx) * inner;
                        let src = (o * len + p) * inner;
                        for j in 0..inner {
                            gx[dst + j] += gd[src + j];
                        }
                    }
                }
            });
        }
        Op::Softmax(x) => {
            let d = *out_shape.last().unwrap();
            acc(nodes, grads, *x, |gx| {
                for r in 0..out.len() / d.max(1) {
                    let y = &out[r * d..(r + 1) * d];
                    let gr = &gd[r * d..(r + 1) * d];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] += y[j] * (gr[j] - dot);
                    }
                }
            });
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let d = *out_shape.last().unwrap();
            let rows = inv_std.len();
            let gv = nodes[gain.0].value.data();
            acc(nodes, grads, *gain, |gg| {
                for r in 0..rows {
                    for j in 0..d {
                        gg[j] += gd[r * d + j] * xhat[r * d + j];
                    }
                }
            });
            acc(nodes, grads, *bias, |gb| {
                for r in 0..rows {
                    for j in 0..d {
                        gb[j] += gd[r * d + j];
                    }
                }
            });
            acc(nodes, grads, *x, |gx| {
                let nd = d as f64;
                for r in 0..rows {
                    let mut s1 = 0.0;
                    let mut s2 = 0.0;
                    for j in 0..d {
                        let dh = gd[r * d + j] * gv[j];
                        s1 += dh;
                        s2 += dh * xhat[r * d + j];
                    }
                    for j in 0..d {
                        let dh = gd[r * d + j] * gv[j];
                        gx[r * d + j] += inv_std[r] * (dh - s1 / nd - xhat[r * d + j] * s2 / nd);
                    }
                }
            });
        }
        Op::Gelu(x) => {
            let xv = nodes[x.0].value.data();
            acc(nodes, grads, *x, |gx| {
                for j in 0..gx.len() {
                    gx[j] += gd[j] * gelu_grad(xv[j]);
                }
            });
        }
        Op::Relu(x) => {
            let xv = nodes[x.0].value.data();
            acc(nodes, grads, *x, |gx| {
                for j in 0..gx.len() {
                    if xv[j] > 0.0 {
                        gx[j] += gd[j];
                    }
                }
            });
        }
        Op::Exp(x) => acc(nodes, grads, *x, |gx| {
            for j in 0..gx.len() {
                gx[j] += gd[j] * out[j];
            }
        }),
        Op::Log(x) => {
            let xv = nodes[x.0].value.data();
            acc(nodes, grads, *x, |gx| {
                for j in 0..gx.len() {
                    gx[j] += gd[j] / xv[j];
                }
            });
        }
        Op::SumAll(x) => acc(nodes, grads, *x, |gx| {
            gx.iter_mut().for_each(|e| *e += gd[0]);
        }),
        Op::MeanAll(x) => acc(nodes, grads, *x, |gx| {
            let s = gd[0] / gx.len() as f64;
            gx.iter_mut().for_each(|e| *e += s);
        }),
        Op::SumAxis(x, axis) | Op::MeanAxis(x, axis) => {
            let (outer, n, inner) = axis_split(nodes[x.0].value.shape(), *axis);
            let scale = if matches!(node.op, Op::MeanAxis(..)) { 1.0 / n as f64 } else { 1.0 };
            acc(nodes, grads, *x, |gx| {
                for o in 0..outer {
                    for a in 0..n {
                        let base = (o * n + a) * inner;
                        for j in 0..inner {
                            gx[base + j] += scale * gd[o * inner + j];
                        }
                    }
                }
            });
        }
        Op::MaxAxis { x, argmax } => acc(nodes, grads, *x, |gx| {
            for (o, &src) in argmax.iter().enumerate() {
                gx[src] += gd[o];
            }
        }),
        Op::L2Normalize { x, norms } => {
            let d = *out_shape.last().unwrap();
            acc(nodes, grads, *x, |gx| {
                for (r, &n) in norms.iter().enumerate() {
                    let y = &out[r * d..(r + 1) * d];
                    let gr = &gd[r * d..(r + 1) * d];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] += (gr[j] - y[j] * dot) / n;
                    }
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::GraphError;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_entries_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[4], 3.0));
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.25; 4]);
    }

    #[test]
    fn max_pool_over_rows() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[1.0, 5.0, 3.0, 2.0]));
        let y = g.max_axis(x, 0).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 5.0]);
    }

    #[test]
    fn max_pool_routes_gradient_to_lowest_argmax() {
        let mut g = Graph::new();
        let x = g.variable(t(&[3, 2], &[4.0, 1.0, 4.0, 7.0, 2.0, 7.0]));
        let y = g.max_axis(x, 0).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut g = Graph::new();
        let i = g.constant(Tensor::eye(2));
        let a = g.constant(t(&[2, 2], &[1.5, -2.0, 0.25, 9.0]));
        let y = g.matmul(i, a).unwrap();
        assert_eq!(g.value(y).data(), g.value(a).data());
    }

    #[test]
    fn broadcast_add_suffix_and_generic() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
        let row = g.constant(t(&[3], &[10.0, 20.0, 30.0]));
        let col = g.constant(t(&[2, 1], &[100.0, 200.0]));
        let y = g.add(a, row).unwrap();
        assert_eq!(g.value(y).data(), &[10.0, 21.0, 32.0, 13.0, 24.0, 35.0]);
        let z = g.add(a, col).unwrap();
        assert_eq!(g.value(z).data(), &[100.0, 101.0, 102.0, 203.0, 204.0, 205.0]);
        let bad = g.constant(Tensor::zeros(&[4]));
        assert!(matches!(g.add(a, bad), Err(GraphError::Shape { .. })));
    }

    #[test]
    fn log_of_zero_is_reported() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2]));
        assert!(matches!(g.log(x), Err(GraphError::NonFinite { .. })));
    }

    #[test]
    fn l2_normalize_rejects_zero_and_gives_unit_norm() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 2], &[3.0, 4.0, 0.0, 0.0]));
        assert!(g.l2_normalize(x).is_err());
        let x = g.constant(t(&[1, 3], &[1e-3, 2e5, -7.0]));
        let y = g.l2_normalize(x).unwrap();
        let n: f64 = g.value(y).data().iter().map(|a| a * a).sum();
        assert!((n.sqrt() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn layer_norm_requires_positive_eps() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 3]));
        let gain = g.constant(Tensor::full(&[3], 1.0));
        let bias = g.constant(Tensor::zeros(&[3]));
        assert!(g.layer_norm(x, gain, bias, 0.0).is_err());
        assert!(g.layer_norm(x, gain, bias, LAYER_NORM_EPS).is_ok());
    }

    #[test]
    fn permute_moves_axes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[2, 3, 4], |i| i as f64));
        let y = g.permute(x, &[2, 0, 1]).unwrap();
        assert_eq!(g.shape(y), &[4, 2, 3]);
        assert_eq!(g.value(y).get(&[3, 1, 2]), g.value(x).get(&[1, 2, 3]));
        assert!(g.permute(x, &[0, 0, 1]).is_err());
    }

    #[test]
    fn concat_and_slice_invert() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn(&[2, 2], |i| i as f64));
        let b = g.constant(Tensor::from_fn(&[2, 3], |i| 10.0 + i as f64));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 5]);
        let back = g.slice(c, 1, 2, 3).unwrap();
        assert_eq!(g.value(back), g.value(b));
    }
}
