use std::cell::RefCell;
use std::rc::Rc;

use super::kernels::{self, gemm};
use super::Tensor;
use crate::error::{Error, Result};

const LAYERNORM_EPS: f32 = 1e-6;

/// Recording of primitive applications for one forward/backward episode.
///
/// Nodes are appended in creation order, so every operand precedes the node
/// that consumes it. A tape is single-threaded; run independent episodes on
/// independent tapes.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f32),
    Softmax(usize),
    LogSoftmax(usize),
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f32>, rstd: Vec<f32> },
    Gelu(usize),
    PositivePart(usize),
    MeanAll(usize),
    SumAll(usize),
    MaxAll(usize, usize),
    Log(usize),
    Exp(usize),
    Reciprocal(usize),
    Transpose(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Slice { src: usize, axis: usize, start: usize },
    Reshape(usize),
    Patchify { src: usize, image_size: usize, patch: usize },
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradient buffers produced by one call to [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no path from the root reached it.
    pub fn get(&self, v: Var<'_>) -> Option<Tensor> {
        let g = self.grads.get(v.id)?.as_ref()?;
        Some(Tensor { shape: self.shapes[v.id].clone(), data: g.clone() })
    }

    /// Gradient for `v`, zero-filled when unreached.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v).unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
    }

    pub fn has(&self, v: Var<'_>) -> bool {
        matches!(self.grads.get(v.id), Some(Some(_)))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Leaf tensor; tracked by [`Tape::backward`] when `requires_grad`.
    pub fn tensor(&self, shape: &[usize], data: Vec<f32>, requires_grad: bool) -> Result<Var<'_>> {
        Ok(self.push(Tensor::new(shape, data)?, Op::Leaf, requires_grad))
    }

    /// Differentiable leaf.
    pub fn var(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts.first().ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let base = first.shape();
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::dim(format!("concat shape mismatch {base:?} vs {s:?}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        for o in 0..outer {
            for v in &values {
                let chunk = v.shape[axis] * inner;
                data.extend_from_slice(&v.data[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = parts.iter().any(|p| self.needs_grad(p.id));
        Ok(self.push(
            Tensor { shape: out_shape, data },
            Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis },
            rg,
        ))
    }

    /// Gradients of the scalar `root` with respect to every tracked node.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        self.backward_until(root, 0)
    }

    /// Like [`Tape::backward`] but skips every node recorded before the
    /// earliest of `wrt`; gradients of those earlier nodes are left empty.
    pub fn backward_for(&self, root: Var<'_>, wrt: &[Var<'_>]) -> Result<Gradients> {
        let floor = wrt.iter().map(|v| v.id).min().unwrap_or(0);
        self.backward_until(root, floor)
    }

    fn backward_until(&self, root: Var<'_>, floor: usize) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape.clone()).collect();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        if nodes[root.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.id].value.shape
            )));
        }
        if nodes[root.id].requires_grad {
            grads[root.id] = Some(vec![1.0]);
        }
        for i in (floor..=root.id).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            let node = &nodes[i];
            let rg = |id: usize| id >= floor && nodes[id].requires_grad;
            let out = &node.value;
            match &node.op {
                Op::Leaf => {}
                &Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a].value, &nodes[b].value);
                    let (m, k) = (av.shape[av.shape.len() - 2], av.shape[av.shape.len() - 1]);
                    let n = bv.shape[bv.shape.len() - 1];
                    let a_batch = av.numel() / (m * k);
                    let shared_b = bv.shape.len() == 2;
                    if shared_b {
                        let rows = a_batch * m;
                        if rg(a) {
                            let da = acc(lower, a, av.numel());
                            gemm(rows, n, k, g, n as isize, 1, &bv.data, 1, n as isize, da, 1.0);
                        }
                        if rg(b) {
                            let db = acc(lower, b, bv.numel());
                            gemm(k, rows, n, &av.data, 1, k as isize, g, n as isize, 1, db, 1.0);
                        }
                    } else {
                        for bi in 0..a_batch {
                            let gs = &g[bi * m * n..(bi + 1) * m * n];
                            let as_ = &av.data[bi * m * k..(bi + 1) * m * k];
                            let bs = &bv.data[bi * k * n..(bi + 1) * k * n];
                            if rg(a) {
                                let da = acc(lower, a, av.numel());
                                let da = &mut da[bi * m * k..(bi + 1) * m * k];
                                gemm(m, n, k, gs, n as isize, 1, bs, 1, n as isize, da, 1.0);
                            }
                            if rg(b) {
                                let db = acc(lower, b, bv.numel());
                                let db = &mut db[bi * k * n..(bi + 1) * k * n];
                                gemm(k, m, n, as_, 1, k as isize, gs, n as isize, 1, db, 1.0);
                            }
                        }
                    }
                }
                &Op::Add(a, b) => {
                    if rg(a) {
                        add_into(acc(lower, a, g.len()), g);
                    }
                    if rg(b) {
                        let bn = nodes[b].value.numel();
                        let db = acc(lower, b, bn);
                        for chunk in g.chunks_exact(bn) {
                            add_into(db, chunk);
                        }
                    }
                }
                &Op::Hadamard(a, b) => {
                    let (av, bv) = (&nodes[a].value, &nodes[b].value);
                    let bn = bv.numel();
                    if rg(a) {
                        let da = acc(lower, a, av.numel());
                        for (i, (d, &gi)) in da.iter_mut().zip(g.iter()).enumerate() {
                            *d += gi * bv.data[i % bn];
                        }
                    }
                    if rg(b) {
                        let db = acc(lower, b, bn);
                        for (i, (&gi, &ai)) in g.iter().zip(&av.data).enumerate() {
                            db[i % bn] += gi * ai;
                        }
                    }
                }
                &Op::Scale(a, s) => {
                    if rg(a) {
                        for (d, &gi) in acc(lower, a, g.len()).iter_mut().zip(g.iter()) {
                            *d += gi * s;
                        }
                    }
                }
                &Op::Softmax(a) => {
                    if rg(a) {
                        let cols = *out.shape.last().unwrap();
                        let da = acc(lower, a, g.len());
                        for ((y, gy), d) in out
                            .data
                            .chunks_exact(cols)
                            .zip(g.chunks_exact(cols))
                            .zip(da.chunks_exact_mut(cols))
                        {
                            let dot: f32 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                            for j in 0..cols {
                                d[j] += y[j] * (gy[j] - dot);
                            }
                        }
                    }
                }
                &Op::LogSoftmax(a) => {
                    if rg(a) {
                        let cols = *out.shape.last().unwrap();
                        let da = acc(lower, a, g.len());
                        for ((y, gy), d) in out
                            .data
                            .chunks_exact(cols)
                            .zip(g.chunks_exact(cols))
                            .zip(da.chunks_exact_mut(cols))
                        {
                            let total: f32 = gy.iter().sum();
                            for j in 0..cols {
                                d[j] += gy[j] - y[j].exp() * total;
                            }
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                    let cols = *out.shape.last().unwrap();
                    let gam = &nodes[*gamma].value.data;
                    if rg(*gamma) {
                        let dg = acc(lower, *gamma, cols);
                        for (gy, xh) in g.chunks_exact(cols).zip(xhat.chunks_exact(cols)) {
                            for j in 0..cols {
                                dg[j] += gy[j] * xh[j];
                            }
                        }
                    }
                    if rg(*beta) {
                        let db = acc(lower, *beta, cols);
                        for gy in g.chunks_exact(cols) {
                            add_into(db, gy);
                        }
                    }
                    if rg(*x) {
                        let dx = acc(lower, *x, g.len());
                        let inv_n = 1.0 / cols as f32;
                        let mut dxhat = vec![0.0f32; cols];
                        for (r, ((gy, xh), d)) in g
                            .chunks_exact(cols)
                            .zip(xhat.chunks_exact(cols))
                            .zip(dx.chunks_exact_mut(cols))
                            .enumerate()
                        {
                            let mut mean_d = 0.0f32;
                            let mut mean_dx = 0.0f32;
                            for j in 0..cols {
                                dxhat[j] = gy[j] * gam[j];
                                mean_d += dxhat[j];
                                mean_dx += dxhat[j] * xh[j];
                            }
                            mean_d *= inv_n;
                            mean_dx *= inv_n;
                            for j in 0..cols {
                                d[j] += rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
                            }
                        }
                    }
                }
                &Op::Gelu(a) => {
                    if rg(a) {
                        let av = &nodes[a].value.data;
                        let da = acc(lower, a, g.len());
                        for ((d, &gi), &x) in da.iter_mut().zip(g.iter()).zip(av) {
                            *d += gi * kernels::gelu_grad(x);
                        }
                    }
                }
                &Op::PositivePart(a) => {
                    if rg(a) {
                        let av = &nodes[a].value.data;
                        let da = acc(lower, a, g.len());
                        for ((d, &gi), &x) in da.iter_mut().zip(g.iter()).zip(av) {
                            if x > 0.0 {
                                *d += gi;
                            }
                        }
                    }
                }
                &Op::MeanAll(a) => {
                    if rg(a) {
                        let n = nodes[a].value.numel();
                        let v = g[0] / n as f32;
                        for d in acc(lower, a, n) {
                            *d += v;
                        }
                    }
                }
                &Op::SumAll(a) => {
                    if rg(a) {
                        let n = nodes[a].value.numel();
                        for d in acc(lower, a, n) {
                            *d += g[0];
                        }
                    }
                }
                &Op::MaxAll(a, arg) => {
                    if rg(a) {
                        let n = nodes[a].value.numel();
                        acc(lower, a, n)[arg] += g[0];
                    }
                }
                &Op::Log(a) => {
                    if rg(a) {
                        let av = &nodes[a].value.data;
                        let da = acc(lower, a, g.len());
                        for ((d, &gi), &x) in da.iter_mut().zip(g.iter()).zip(av) {
                            *d += gi / x;
                        }
                    }
                }
                &Op::Exp(a) => {
                    if rg(a) {
                        let da = acc(lower, a, g.len());
                        for ((d, &gi), &y) in da.iter_mut().zip(g.iter()).zip(&out.data) {
                            *d += gi * y;
                        }
                    }
                }
                &Op::Reciprocal(a) => {
                    if rg(a) {
                        let da = acc(lower, a, g.len());
                        for ((d, &gi), &y) in da.iter_mut().zip(g.iter()).zip(&out.data) {
                            *d -= gi * y * y;
                        }
                    }
                }
                &Op::Transpose(a) => {
                    if rg(a) {
                        let s = &out.shape;
                        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                        let da = acc(lower, a, g.len());
                        for (gb, db) in g.chunks_exact(r * c).zip(da.chunks_exact_mut(r * c)) {
                            // out is (r x c); the source is (c x r).
                            for i in 0..r {
                                for j in 0..c {
                                    db[j * r + i] += gb[i * c + j];
                                }
                            }
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let outer: usize = out.shape[..*axis].iter().product();
                    let inner: usize = out.shape[*axis + 1..].iter().product();
                    let total = out.shape[*axis] * inner;
                    let mut offset = 0;
                    for &p in parts {
                        let chunk = nodes[p].value.shape[*axis] * inner;
                        if rg(p) {
                            let dp = acc(lower, p, nodes[p].value.numel());
                            for o in 0..outer {
                                let src = &g[o * total + offset..o * total + offset + chunk];
                                add_into(&mut dp[o * chunk..(o + 1) * chunk], src);
                            }
                        }
                        offset += chunk;
                    }
                }
                &Op::Slice { src, axis, start } => {
                    if rg(src) {
                        let s = &nodes[src].value.shape;
                        let outer: usize = s[..axis].iter().product();
                        let inner: usize = s[axis + 1..].iter().product();
                        let len = out.shape[axis];
                        let ds = acc(lower, src, nodes[src].value.numel());
                        for o in 0..outer {
                            let dst = o * s[axis] * inner + start * inner;
                            add_into(
                                &mut ds[dst..dst + len * inner],
                                &g[o * len * inner..(o + 1) * len * inner],
                            );
                        }
                    }
                }
                &Op::Reshape(a) => {
                    if rg(a) {
                        add_into(acc(lower, a, g.len()), g);
                    }
                }
                &Op::Patchify { src, image_size, patch } => {
                    if rg(src) {
                        let idx = kernels::patch_gather_index(image_size, patch);
                        let ds = acc(lower, src, g.len());
                        for (&gi, &si) in g.iter().zip(&idx) {
                            ds[si] += gi;
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn acc(grads: &mut [Option<Vec<f32>>], id: usize, len: usize) -> &mut Vec<f32> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
    let bn: usize = b.iter().product();
    bn == 1 || (b.len() <= a.len() && a[a.len() - b.len()..] == *b)
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.needs_grad(self.id)
    }

    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn map_values(&self, f: impl Fn(f32) -> f32) -> Tensor {
        self.value().map(f)
    }

    /// Same values with no link to the tape history.
    pub fn detach(&self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }

    /// Matrix product over the last two axes. Supports 2D @ 2D, batched
    /// 3D @ 3D with equal batch, and ND @ 2D with the right operand shared.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (&a.shape, &b.shape);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim(format!("matmul needs matrices, got {sa:?} @ {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let shared_b = sb.len() == 2;
        if k != k2 || (!shared_b && sa[..sa.len() - 2] != sb[..sb.len() - 2]) {
            return Err(Error::dim(format!("matmul shape mismatch {sa:?} @ {sb:?}")));
        }
        let batch = a.numel() / (m * k).max(1);
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.extend([m, n]);
        let mut data = vec![0.0; batch * m * n];
        if shared_b {
            gemm(batch * m, k, n, &a.data, k as isize, 1, &b.data, n as isize, 1, &mut data, 0.0);
        } else {
            for bi in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    &a.data[bi * m * k..],
                    k as isize,
                    1,
                    &b.data[bi * k * n..],
                    n as isize,
                    1,
                    &mut data[bi * m * n..(bi + 1) * m * n],
                    0.0,
                );
            }
        }
        Ok(self.binary(other, Tensor { shape, data }, Op::MatMul(self.id, other.id)))
    }

    /// Elementwise sum. `other` may be a scalar or match a suffix of this
    /// shape, in which case it is repeated over the leading axes.
    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if !broadcast_ok(&a.shape, &b.shape) {
            return Err(Error::dim(format!("add shape mismatch {:?} + {:?}", a.shape, b.shape)));
        }
        let bn = b.numel();
        let data = a.data.iter().enumerate().map(|(i, &x)| x + b.data[i % bn]).collect();
        Ok(self.binary(other, Tensor { shape: a.shape.clone(), data }, Op::Add(self.id, other.id)))
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.add(other.scale(-1.0))
    }

    /// Elementwise product, broadcasting like [`Var::add`].
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if !broadcast_ok(&a.shape, &b.shape) {
            return Err(Error::dim(format!(
                "hadamard shape mismatch {:?} * {:?}",
                a.shape, b.shape
            )));
        }
        let bn = b.numel();
        let data = a.data.iter().enumerate().map(|(i, &x)| x * b.data[i % bn]).collect();
        Ok(self.binary(
            other,
            Tensor { shape: a.shape.clone(), data },
            Op::Hadamard(self.id, other.id),
        ))
    }

    pub fn scale(&self, s: f32) -> Var<'t> {
        self.unary(self.map_values(|x| x * s), Op::Scale(self.id, s))
    }

    pub fn softmax(&self) -> Result<Var<'t>> {
        let a = self.value();
        let cols = last_dim(&a.shape, "softmax")?;
        let data = kernels::softmax_rows(&a.data, cols);
        Ok(self.unary(Tensor { shape: a.shape.clone(), data }, Op::Softmax(self.id)))
    }

    pub fn log_softmax(&self) -> Result<Var<'t>> {
        let a = self.value();
        let cols = last_dim(&a.shape, "log_softmax")?;
        let data = kernels::log_softmax_rows(&a.data, cols);
        Ok(self.unary(Tensor { shape: a.shape.clone(), data }, Op::LogSoftmax(self.id)))
    }

    /// Normalizes over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&self, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
        let x = self.value();
        let cols = last_dim(&x.shape, "layer_norm")?;
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape != [cols] || bv.shape != [cols] {
            return Err(Error::dim(format!(
                "layer_norm affine shapes {:?}/{:?} do not match width {cols}",
                gv.shape, bv.shape
            )));
        }
        let rows = x.numel() / cols;
        let mut xhat = vec![0.0; x.numel()];
        let mut rstd = vec![0.0; rows];
        let mut data = vec![0.0; x.numel()];
        for r in 0..rows {
            let row = &x.data[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f32>() / cols as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / cols as f32;
            let rs = 1.0 / (var + LAYERNORM_EPS).sqrt();
            rstd[r] = rs;
            for j in 0..cols {
                let h = (row[j] - mean) * rs;
                xhat[r * cols + j] = h;
                data[r * cols + j] = h * gv.data[j] + bv.data[j];
            }
        }
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.tape.push(
            Tensor { shape: x.shape.clone(), data },
            Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, rstd },
            rg,
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Var<'t> {
        self.unary(self.map_values(kernels::gelu), Op::Gelu(self.id))
    }

    /// Elementwise `max(x, 0)`.
    pub fn positive_part(&self) -> Var<'t> {
        self.unary(self.map_values(|x| x.max(0.0)), Op::PositivePart(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let a = self.value();
        let n = a.numel().max(1);
        let m = a.data.iter().sum::<f32>() / n as f32;
        self.unary(Tensor::scalar(m), Op::MeanAll(self.id))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data.iter().sum::<f32>();
        self.unary(Tensor::scalar(s), Op::SumAll(self.id))
    }

    /// Maximum element; the gradient goes to the first maximal position.
    pub fn max(&self) -> Result<Var<'t>> {
        let a = self.value();
        let (arg, &m) = a
            .data
            .iter()
            .enumerate()
            .reduce(|best, cur| if cur.1 > best.1 { cur } else { best })
            .ok_or_else(|| Error::dim("max of empty tensor"))?;
        Ok(self.unary(Tensor::scalar(m), Op::MaxAll(self.id, arg)))
    }

    pub fn ln(&self) -> Var<'t> {
        self.unary(self.map_values(f32::ln), Op::Log(self.id))
    }

    pub fn exp(&self) -> Var<'t> {
        self.unary(self.map_values(f32::exp), Op::Exp(self.id))
    }

    pub fn recip(&self) -> Var<'t> {
        self.unary(self.map_values(|x| 1.0 / x), Op::Reciprocal(self.id))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let a = self.value();
        let s = &a.shape;
        if s.len() < 2 {
            return Err(Error::dim(format!("transpose needs >= 2 axes, got {s:?}")));
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let mut shape = s.clone();
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let mut data = vec![0.0; a.numel()];
        if r * c > 0 {
            for (src, dst) in a.data.chunks_exact(r * c).zip(data.chunks_exact_mut(r * c)) {
                for i in 0..r {
                    for j in 0..c {
                        dst[j * r + i] = src[i * c + j];
                    }
                }
            }
        }
        Ok(self.unary(Tensor { shape, data }, Op::Transpose(self.id)))
    }

    /// `len` consecutive entries along `axis`, starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let a = self.value();
        let s = &a.shape;
        if axis >= s.len() || start + len > s[axis] {
            return Err(Error::dim(format!(
                "slice [{start}, {}) on axis {axis} out of range for {s:?}",
                start + len
            )));
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * s[axis] * inner + start * inner;
            data.extend_from_slice(&a.data[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        Ok(self.unary(Tensor { shape, data }, Op::Slice { src: self.id, axis, start }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let a = self.value();
        let t = Tensor::new(shape, a.data.clone())?;
        Ok(self.unary(t, Op::Reshape(self.id)))
    }

    /// Splits an `S x S x 3` image into row-major patches, each flattened
    /// as (row, column, channel).
    pub fn patchify(&self, patch: usize) -> Result<Var<'t>> {
        let a = self.value();
        let s = &a.shape;
        if s.len() != 3 || s[2] != 3 || s[0] != s[1] || patch == 0 || !s[0].is_multiple_of(patch) {
            return Err(Error::dim(format!("cannot patchify image {s:?} with patch {patch}")));
        }
        let size = s[0];
        let idx = kernels::patch_gather_index(size, patch);
        let data = idx.iter().map(|&i| a.data[i]).collect();
        let grid = size / patch;
        let t = Tensor { shape: vec![grid * grid, 3 * patch * patch], data };
        Ok(self.unary(t, Op::Patchify { src: self.id, image_size: size, patch }))
    }
}

fn last_dim(shape: &[usize], what: &str) -> Result<usize> {
    match shape.last() {
        Some(&c) if c > 0 => Ok(c),
        _ => Err(Error::dim(format!("{what} over empty last axis of {shape:?}"))),
    }
}
