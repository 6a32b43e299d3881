//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass as a node in
//! creation order, which is already a topological order: backward walks the
//! nodes from the loss down to index 0 and visits each at most once. Tapes are
//! cheap and are rebuilt for every forward pass.
//!
//! ```
//! use dvnc::numerics::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.variable(Tensor::vector(vec![1.0, -2.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.gradients(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0]);
//! ```

use std::collections::HashMap;

use super::param::{ParamId, ParamStore};
use super::tensor::{
    broadcast_zip, gemm, numel, permute_data, split_axis, sum_to_shape,
    transpose_block, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MatMul(Var, Var),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Sum(Var),
    SumAxis(Var, usize),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Softmax(Var),
    SqDist(Var, Var),
    Mse(Var, Var),
    CrossEntropy(Var, Vec<usize>, Tensor),
    StopGradient,
    StraightThrough(Var),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    Select(Vec<bool>, Var, Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    param_order: Vec<(ParamId, Var)>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when no path reaches it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn fmt_shapes(shapes: &[&[usize]]) -> String {
    shapes
        .iter()
        .map(|s| format!("{s:?}"))
        .collect::<Vec<_>>()
        .join(" x ")
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Batched matmul kernel. `a` is `[batch, n, k]`, `b` is `[batch, k, p]` or a
/// shared `[k, p]`.
fn bmm(a: &[f64], b: &[f64], batch: usize, n: usize, k: usize, p: usize, b_shared: bool) -> Vec<f64> {
    let mut out = vec![0.0; batch * n * p];
    for t in 0..batch {
        let bs = if b_shared { 0 } else { t * k * p };
        gemm(
            &a[t * n * k..(t + 1) * n * k],
            &b[bs..bs + k * p],
            &mut out[t * n * p..(t + 1) * n * p],
            n,
            k,
            p,
        );
    }
    out
}

/// `(batch, n, k, p, b_shared)` for a supported matmul pairing.
fn matmul_dims(a: &[usize], b: &[usize]) -> Option<(usize, usize, usize, usize, bool)> {
    match (a, b) {
        (&[n, k], &[k2, p]) if k == k2 => Some((1, n, k, p, true)),
        (&[bt, n, k], &[bt2, k2, p]) if k == k2 && bt == bt2 => Some((bt, n, k, p, false)),
        (&[bt, n, k], &[k2, p]) if k == k2 => Some((bt, n, k, p, true)),
        _ => None,
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Leaf that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that accumulates gradient (not tied to a parameter).
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf for a stored parameter. Repeated calls within one tape return
    /// the same [`Var`], so every use site shares a single node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Leaf, true);
        self.params.insert(id, v);
        self.param_order.push((id, v));
        v
    }

    /// The node bound to `id` on this tape, if it was used.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(&id).copied()
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let value = broadcast_zip(op, self.value(a), self.value(b), f)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, mk(a, b), ng))
    }

    /// Elementwise `a + b` with broadcasting.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `a * scale + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(a).map(|x| x * scale + shift);
        let ng = self.ng(a);
        self.push(value, Op::Affine(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    /// Matrix product: `[n,k]·[k,p]`, batched `[b,n,k]·[b,k,p]`, or `[b,n,k]·[k,p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (batch, n, k, p, shared) = matmul_dims(sa, sb)
            .ok_or_else(|| Error::shape("matmul", fmt_shapes(&[sa, sb])))?;
        let out_shape = if sa.len() == 2 { vec![n, p] } else { vec![batch, n, p] };
        let data = bmm(
            self.value(a).data(),
            self.value(b).data(),
            batch,
            n,
            k,
            p,
            shared,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::MatMul(a, b), ng))
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let rank = self.shape(a).len();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::shape(
                "permute",
                format!("{:?} by {perm:?}", self.shape(a)),
            ));
        }
        let value = permute_data(self.value(a), perm);
        let ng = self.ng(a);
        Ok(self.push(value, Op::Permute(a, perm.to_vec()), ng))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let rank = self.shape(a).len();
        if rank < 2 {
            return Err(Error::shape("transpose", format!("{:?}", self.shape(a))));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(a, &perm)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape.to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(value, Op::Reshape(a), ng))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let ok = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (x, y))| i == axis || x == y);
            if !ok {
                let shapes: Vec<&[usize]> = parts.iter().map(|&v| self.shape(v)).collect();
                return Err(Error::shape("concat", fmt_shapes(&shapes)));
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let w = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * w..(o + 1) * w]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Concat(parts.to_vec(), axis),
            ng,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape(
                "split",
                format!("{shape:?} axis {axis} range {start}..{}", start + len),
            ));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * n * inner + start * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::Narrow(a, axis, start),
            ng,
        ))
    }

    /// Splits along `axis` into pieces of the given sizes.
    pub fn split(&mut self, a: Var, axis: usize, sizes: &[usize]) -> Result<Vec<Var>> {
        let extent = self.shape(a).get(axis).copied().unwrap_or(0);
        if sizes.iter().sum::<usize>() != extent {
            return Err(Error::shape(
                "split",
                format!("{:?} axis {axis} into {sizes:?}", self.shape(a)),
            ));
        }
        let mut start = 0;
        sizes
            .iter()
            .map(|&len| {
                let v = self.narrow(a, axis, start, len);
                start += len;
                v
            })
            .collect()
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum", format!("axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(a).data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, s) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = 1;
        let ng = self.ng(a);
        Ok(self.push(Tensor::from_parts(out_shape, data), Op::SumAxis(a, axis), ng))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = self.shape(a).get(axis).copied().unwrap_or(1).max(1) as f64;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / n))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, mk: fn(Var) -> Op) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(a);
        self.push(value, mk(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            },
            Op::Sigmoid,
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let w = *t
            .shape()
            .last()
            .ok_or_else(|| Error::shape("softmax", "rank-0 input"))?;
        let mut data = t.data().to_vec();
        if w > 0 {
            for row in data.chunks_mut(w) {
                softmax_in_place(row);
            }
        }
        let value = Tensor::from_parts(t.shape().to_vec(), data);
        let ng = self.ng(a);
        Ok(self.push(value, Op::Softmax(a), ng))
    }

    /// Pairwise squared Euclidean distances between the rows of `a` `[n,d]`
    /// and `b` `[k,d]`, giving `[n,k]`.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (n, k, d) = match (sa, sb) {
            (&[n, d], &[k, d2]) if d == d2 => (n, k, d),
            _ => return Err(Error::shape("squared-distance", fmt_shapes(&[sa, sb]))),
        };
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * k);
        for i in 0..n {
            let ai = &av[i * d..(i + 1) * d];
            for j in 0..k {
                data.push(sq_dist(ai, &bv[j * d..(j + 1) * d]));
            }
        }
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(
            Tensor::from_parts(vec![n, k], data),
            Op::SqDist(a, b),
            ng,
        ))
    }

    /// Mean squared error over all elements of two equal-shape tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("mse", fmt_shapes(&[sa, sb])));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let n = av.len().max(1) as f64;
        let s: f64 = av.iter().zip(bv).map(|(x, y)| (x - y) * (x - y)).sum();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b), ng))
    }

    /// Mean cross-entropy of `logits` `[n,c]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let s = self.shape(logits);
        let (n, c) = match s {
            &[n, c] if n == targets.len() && targets.iter().all(|&t| t < c) => (n, c),
            _ => {
                return Err(Error::shape(
                    "cross-entropy",
                    format!("logits {s:?} with {} targets", targets.len()),
                ))
            }
        };
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (i, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[targets[i]];
            softmax_in_place(row);
        }
        let probs = Tensor::from_parts(vec![n, c], probs);
        let ng = self.ng(logits);
        Ok(self.push(
            Tensor::scalar(loss / n.max(1) as f64),
            Op::CrossEntropy(logits, targets.to_vec(), probs),
            ng,
        ))
    }

    /// Identity forward; no gradient flows back into `a`.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.push(value, Op::StopGradient, false)
    }

    /// Forward value of `target`, gradient copied onto `input` unchanged.
    /// `target` itself receives nothing through this node.
    pub fn straight_through(&mut self, input: Var, target: Var) -> Result<Var> {
        let (si, st) = (self.shape(input), self.shape(target));
        if si != st {
            return Err(Error::shape("straight-through", fmt_shapes(&[si, st])));
        }
        let value = self.value(target).clone();
        let ng = self.ng(input);
        Ok(self.push(value, Op::StraightThrough(input), ng))
    }

    /// Rows of `a` (along axis 0) selected by `idx`, repeats allowed.
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let rows = t.rows();
        if t.rank() == 0 || idx.iter().any(|&i| i >= rows) {
            return Err(Error::shape(
                "gather",
                format!("{:?} by indices < {}", t.shape(), idx.iter().max().map_or(0, |m| m + 1)),
            ));
        }
        let w = t.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::GatherRows(a, idx.to_vec()),
            ng,
        ))
    }

    /// Sums row `r` of `a` into output row `idx[r]`; output has `rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 || t.rows() != idx.len() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::shape(
                "scatter",
                format!("{:?} into {rows} rows with {} indices", t.shape(), idx.len()),
            ));
        }
        let w = t.row_len();
        let mut data = vec![0.0; rows * w];
        for (r, &o) in idx.iter().enumerate() {
            for (d, s) in data[o * w..(o + 1) * w].iter_mut().zip(t.row(r)) {
                *d += s;
            }
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows;
        let ng = self.ng(a);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::ScatterRows(a, idx.to_vec()),
            ng,
        ))
    }

    /// Elementwise `if mask { a } else { b }`; exact, no arithmetic on values.
    pub fn select(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb || mask.len() != numel(sa) {
            return Err(Error::shape(
                "select",
                format!("{} with mask of {}", fmt_shapes(&[sa, sb]), mask.len()),
            ));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let data = mask
            .iter()
            .zip(av.iter().zip(bv))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let value = Tensor::from_parts(sa.to_vec(), data);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Select(mask.to_vec(), a, b), ng))
    }

    /// Backward pass from a scalar `loss`.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = std::iter::repeat_with(|| None)
            .take(self.nodes.len())
            .collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs backward and accumulates gradients into every parameter bound to
    /// this tape. Parameters used in the forward pass but not reached by the
    /// loss receive zeros.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for &(id, v) in &self.param_order {
            let g = grads
                .get(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(self.shape(v).to_vec()));
            store.accumulate_grad(id, &g);
        }
        Ok(grads)
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let send = |v: Var, t: Tensor, grads: &mut [Option<Tensor>]| {
            if self.ng(v) {
                accumulate(grads, v, t);
            }
        };
        match &node.op {
            Op::Leaf | Op::StopGradient => {}
            Op::Add(a, b) => {
                send(*a, sum_to_shape(g, val(*a).shape()), grads);
                send(*b, sum_to_shape(g, val(*b).shape()), grads);
            }
            Op::Sub(a, b) => {
                send(*a, sum_to_shape(g, val(*a).shape()), grads);
                send(*b, sum_to_shape(g, val(*b).shape()).map(|x| -x), grads);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    let ga = broadcast_zip("mul", g, val(*b), |x, y| x * y).expect("shapes");
                    send(*a, sum_to_shape(&ga, val(*a).shape()), grads);
                }
                if self.ng(*b) {
                    let gb = broadcast_zip("mul", g, val(*a), |x, y| x * y).expect("shapes");
                    send(*b, sum_to_shape(&gb, val(*b).shape()), grads);
                }
            }
            Op::Affine(a, s) => send(*a, g.map(|x| x * s), grads),
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (batch, n, k, p, shared) =
                    matmul_dims(ta.shape(), tb.shape()).expect("checked in forward");
                if self.ng(*a) {
                    // dA = dC · Bᵀ
                    let mut bt = Vec::with_capacity(tb.len());
                    let nb = if shared { 1 } else { batch };
                    for t in 0..nb {
                        bt.extend(transpose_block(&tb.data()[t * k * p..(t + 1) * k * p], k, p));
                    }
                    let ga = bmm(g.data(), &bt, batch, n, p, k, shared);
                    send(*a, Tensor::from_parts(ta.shape().to_vec(), ga), grads);
                }
                if self.ng(*b) {
                    // dB = Aᵀ · dC, summed over the batch when B is shared
                    let gb = if shared {
                        let at = transpose_block(ta.data(), batch * n, k);
                        bmm(&at, g.data(), 1, k, batch * n, p, true)
                    } else {
                        let mut at = Vec::with_capacity(ta.len());
                        for t in 0..batch {
                            at.extend(transpose_block(&ta.data()[t * n * k..(t + 1) * n * k], n, k));
                        }
                        bmm(&at, g.data(), batch, k, n, p, false)
                    };
                    send(*b, Tensor::from_parts(tb.shape().to_vec(), gb), grads);
                }
            }
            Op::Permute(a, perm) => {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                send(*a, permute_data(g, &inv), grads);
            }
            Op::Reshape(a) => send(
                *a,
                Tensor::from_parts(val(*a).shape().to_vec(), g.data().to_vec()),
                grads,
            ),
            Op::Concat(parts, axis) => {
                let (outer, n, inner) = split_axis(g.shape(), *axis);
                let mut offset = 0;
                for &p in parts {
                    let shape = val(p).shape().to_vec();
                    let len = shape[*axis];
                    if self.ng(p) {
                        let mut data = Vec::with_capacity(numel(&shape));
                        for o in 0..outer {
                            let base = o * n * inner + offset * inner;
                            data.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        send(p, Tensor::from_parts(shape, data), grads);
                    }
                    offset += len;
                }
            }
            Op::Narrow(a, axis, start) => {
                let shape = val(*a).shape().to_vec();
                let (outer, n, inner) = split_axis(&shape, *axis);
                let len = g.shape()[*axis];
                let mut data = vec![0.0; numel(&shape)];
                for o in 0..outer {
                    let base = o * n * inner + start * inner;
                    data[base..base + len * inner]
                        .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
                }
                send(*a, Tensor::from_parts(shape, data), grads);
            }
            Op::Sum(a) => {
                let gv = g.data()[0];
                send(*a, Tensor::full(val(*a).shape().to_vec(), gv), grads);
            }
            Op::SumAxis(a, axis) => {
                let shape = val(*a).shape().to_vec();
                let (outer, n, inner) = split_axis(&shape, *axis);
                let mut data = Vec::with_capacity(numel(&shape));
                for o in 0..outer {
                    let row = &g.data()[o * inner..(o + 1) * inner];
                    for _ in 0..n {
                        data.extend_from_slice(row);
                    }
                }
                send(*a, Tensor::from_parts(shape, data), grads);
            }
            Op::Relu(a) => {
                let x = val(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { 0.0 })
                    .collect();
                send(*a, Tensor::from_parts(x.shape().to_vec(), data), grads);
            }
            Op::Tanh(a) => {
                let y = &node.value;
                let data = g.data().iter().zip(y.data()).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                send(*a, Tensor::from_parts(y.shape().to_vec(), data), grads);
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                let data = g.data().iter().zip(y.data()).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect();
                send(*a, Tensor::from_parts(y.shape().to_vec(), data), grads);
            }
            Op::Exp(a) => {
                let y = &node.value;
                let data = g.data().iter().zip(y.data()).map(|(gi, yi)| gi * yi).collect();
                send(*a, Tensor::from_parts(y.shape().to_vec(), data), grads);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let w = *y.shape().last().expect("rank >= 1");
                let mut data = vec![0.0; y.len()];
                if w > 0 {
                    for ((out, yr), gr) in data
                        .chunks_mut(w)
                        .zip(y.data().chunks(w))
                        .zip(g.data().chunks(w))
                    {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yi), gi) in out.iter_mut().zip(yr).zip(gr) {
                            *o = yi * (gi - dot);
                        }
                    }
                }
                send(*a, Tensor::from_parts(y.shape().to_vec(), data), grads);
            }
            Op::SqDist(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (n, d) = (ta.shape()[0], ta.shape()[1]);
                let k = tb.shape()[0];
                let mut ga = vec![0.0; n * d];
                let mut gb = vec![0.0; k * d];
                for i in 0..n {
                    for j in 0..k {
                        let gij = 2.0 * g.data()[i * k + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for t in 0..d {
                            let diff = ta.data()[i * d + t] - tb.data()[j * d + t];
                            ga[i * d + t] += gij * diff;
                            gb[j * d + t] -= gij * diff;
                        }
                    }
                }
                send(*a, Tensor::from_parts(vec![n, d], ga), grads);
                send(*b, Tensor::from_parts(vec![k, d], gb), grads);
            }
            Op::Mse(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let c = 2.0 * g.data()[0] / ta.len().max(1) as f64;
                let diff: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| c * (x - y)).collect();
                let t = Tensor::from_parts(ta.shape().to_vec(), diff);
                if self.ng(*b) {
                    send(*b, t.map(|x| -x), grads);
                }
                send(*a, t, grads);
            }
            Op::CrossEntropy(a, targets, probs) => {
                let c = probs.shape()[1];
                let scale = g.data()[0] / targets.len().max(1) as f64;
                let mut data = probs.data().to_vec();
                for (i, &t) in targets.iter().enumerate() {
                    data[i * c + t] -= 1.0;
                }
                for x in &mut data {
                    *x *= scale;
                }
                send(*a, Tensor::from_parts(probs.shape().to_vec(), data), grads);
            }
            Op::StraightThrough(input) => send(*input, g.clone(), grads),
            Op::GatherRows(a, idx) => {
                let shape = val(*a).shape().to_vec();
                let w = numel(&shape[1..]);
                let mut data = vec![0.0; numel(&shape)];
                for (r, &i) in idx.iter().enumerate() {
                    for (d, s) in data[i * w..(i + 1) * w].iter_mut().zip(&g.data()[r * w..(r + 1) * w]) {
                        *d += s;
                    }
                }
                send(*a, Tensor::from_parts(shape, data), grads);
            }
            Op::ScatterRows(a, idx) => {
                let shape = val(*a).shape().to_vec();
                let w = numel(&shape[1..]);
                let mut data = Vec::with_capacity(numel(&shape));
                for &o in idx {
                    data.extend_from_slice(&g.data()[o * w..(o + 1) * w]);
                }
                send(*a, Tensor::from_parts(shape, data), grads);
            }
            Op::Select(mask, a, b) => {
                let shape = g.shape().to_vec();
                let pick = |want: bool| -> Tensor {
                    let data = mask
                        .iter()
                        .zip(g.data())
                        .map(|(&m, &gi)| if m == want { gi } else { 0.0 })
                        .collect();
                    Tensor::from_parts(shape.clone(), data)
                };
                if self.ng(*a) {
                    send(*a, pick(true), grads);
                }
                if self.ng(*b) {
                    send(*b, pick(false), grads);
                }
            }
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let x = m(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let i = tape.constant(Tensor::eye(3));
        let xv = tape.constant(x.clone());
        let y = tape.matmul(i, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![2, 3]));
        let b = tape.constant(Tensor::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
        let c = tape.constant(Tensor::zeros(vec![3]));
        let d = tape.constant(Tensor::zeros(vec![4]));
        assert!(tape.add(c, d).unwrap_err().to_string().contains("add"));
        assert!(tape.mse(a, c).is_err());
    }

    #[test]
    fn softmax_of_single_element_is_one() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![-7.3]));
        let s = tape.softmax(a).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0]);
    }

    #[test]
    fn mse_of_equal_is_zero() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1., 2.]));
        let b = tape.constant(Tensor::vector(vec![1., 2.]));
        let l = tape.mse(a, b).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn stop_gradient_semantics() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![3.5]));
        let s = tape.stop_gradient(x);
        assert_eq!(tape.value(s).data(), &[3.5]);
        let l = tape.sum(s);
        let g = tape.gradients(l).unwrap();
        assert!(g.get(x).is_none());

        let mut tape = Tape::new();
        let x = tape.variable(Tensor::scalar(2.0));
        let s = tape.stop_gradient(x);
        let p = tape.mul(x, s).unwrap();
        let g = tape.gradients(p).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::vector(vec![1., 2.]));
        assert!(matches!(tape.gradients(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shared_param_has_one_node() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::ones(vec![2]));
        let mut tape = Tape::new();
        let a = tape.param(&store, id);
        let b = tape.param(&store, id);
        assert_eq!(a, b);
        let s = tape.add(a, b).unwrap();
        let l = tape.sum(s);
        tape.backward(l, &mut store).unwrap();
        assert_eq!(store.grad(id).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn zero_sized_matmul_gives_zeros() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(vec![3, 0]));
        let b = tape.constant(Tensor::zeros(vec![0, 2]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &Tensor::zeros(vec![3, 2]));
    }
}
