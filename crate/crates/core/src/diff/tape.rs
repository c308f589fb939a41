//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every forward operation as a node. Nodes are appended in
//! evaluation order, so the node list is already a topological order and
//! `backward` simply walks it in reverse, accumulating into per-node buffers.

use std::sync::Arc;

use rand::Rng;

use super::tensor::{axis_extents, gemm, Tensor};
use crate::error::{Error, Result};
use crate::geom::{self, NeighborGraph, Point3};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
    ScaleConst(Var, f64),
    ScaleBy { x: Var, s: Var },
    ScaleRows { x: Var, w: Var },
    MatMul(Var, Var),
    Linear { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Sigmoid(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    GatherRows { x: Var, idx: Vec<usize> },
    SliceRows { x: Var, start: usize },
    ReduceMax { x: Var, argmax: Vec<usize> },
    ReduceMean { x: Var, axis: usize },
    BroadcastRows(Var),
    Reshape(Var),
    Dropout { x: Var, mask: Vec<f64> },
    Sum(Var),
    EdgeLinear { x: Var, w: Var, b: Var, idx: Vec<usize>, k: usize },
    Chamfer { pred: Var, target: Arc<Vec<Point3>>, fwd_nn: Vec<usize>, bwd_nn: Vec<usize> },
    Contrastive(Var),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records forward operations and runs the reverse sweep.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// New tape; NaN/Inf checks after every op are on in debug builds.
    pub fn new() -> Self {
        Self::with_finite_checks(cfg!(debug_assertions))
    }

    pub fn with_finite_checks(check_finite: bool) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
            check_finite,
        }
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

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: impl Into<Arc<Tensor>>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: value.into(),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let t = self.value(a);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_with(a, b, |x, y| x + y);
        self.push("add", v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_with(a, b, |x, y| x - y);
        self.push("sub", v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_with(a, b, |x, y| x * y);
        self.push("mul", v, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let v = self.map(x, |a| a * c);
        self.push("scale", v, Op::ScaleConst(x, c), &[x])
    }

    /// Multiplies every element of `x` by the one-element tensor `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self
            .value(s)
            .item()
            .ok_or_else(|| Error::shape("scale_by", self.shape(x), self.shape(s)))?;
        let v = self.map(x, |a| a * sv);
        self.push("scale_by", v, Op::ScaleBy { x, s }, &[x, s])
    }

    /// Scales row `r` of an R×C tensor by `w[r]`, where `w` has R elements.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.shape().len() != 2 || tw.len() != tx.rows() {
            return Err(Error::shape("scale_rows", tx.shape(), tw.shape()));
        }
        let c = tx.row_len();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a * tw.data()[i / c])
            .collect();
        let v = Tensor::from_parts(tx.shape().to_vec(), data);
        self.push("scale_rows", v, Op::ScaleRows { x, w }, &[x, w])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, false);
        let v = Tensor::from_parts(vec![m, n], out);
        self.push("matmul", v, Op::MatMul(a, b), &[a, b])
    }

    /// Shared pointwise linear map: `x` (R×Cin) · `w` (Cin×Cout) + `b` (Cout).
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 2 || sw.len() != 2 || sx[1] != sw[0] {
            return Err(Error::shape("linear", sx, sw));
        }
        let (r, cin, cout) = (sx[0], sx[1], sw[1]);
        let mut out = vec![0.0; r * cout];
        if let Some(b) = b {
            let tb = self.value(b);
            if tb.len() != cout {
                return Err(Error::shape("linear bias", sw, tb.shape()));
            }
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(tb.data());
            }
        }
        gemm(r, cin, cout, tx.data(), false, tw.data(), false, &mut out, b.is_some());
        let v = Tensor::from_parts(vec![r, cout], out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", v, Op::Linear { x, w, b }, &inputs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = self.map(x, |a| a.max(0.0));
        self.push("relu", v, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let v = self.map(x, sigmoid);
        self.push("sigmoid", v, Op::Sigmoid(x), &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_extents(&base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let v = Tensor::from_parts(shape, data);
        let op = Op::Concat {
            inputs: inputs.to_vec(),
            axis,
        };
        self.push("concat", v, op, inputs)
    }

    /// Selects rows (first-axis slices) by index; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rows = t.rows();
        if t.shape().is_empty() {
            return Err(Error::shape("gather_rows", t.shape(), &[]));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::InvalidArgument(format!(
                "gather_rows index {bad} out of range for {rows} rows"
            )));
        }
        let w = t.row_len();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = idx.len();
        let v = Tensor::from_parts(shape, data);
        self.push("gather_rows", v, Op::GatherRows { x, idx: idx.to_vec() }, &[x])
    }

    /// Gathers neighbor features: N×C input, one row per graph edge, shaped N×k×C.
    pub fn gather_neighbors(&mut self, x: Var, graph: &NeighborGraph) -> Result<Var> {
        let c = self.value(x).row_len();
        let g = self.gather_rows(x, graph.indices())?;
        self.reshape(g, &[graph.num_points(), graph.k(), c])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.rows() || t.shape().is_empty() {
            return Err(Error::shape("slice_rows", t.shape(), &[start, end]));
        }
        let w = t.row_len();
        let data = t.data()[start * w..end * w].to_vec();
        let mut shape = t.shape().to_vec();
        shape[0] = end - start;
        let v = Tensor::from_parts(shape, data);
        self.push("slice_rows", v, Op::SliceRows { x, start }, &[x])
    }

    /// Maximum along `axis` (removed from the shape). Backward routes to the
    /// first maximal element only.
    pub fn reduce_max(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() || t.shape()[axis] == 0 {
            return Err(Error::shape("reduce_max", t.shape(), &[axis]));
        }
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let d = t.data();
        let mut data = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best = o * len * inner + i;
                for l in 1..len {
                    let at = (o * len + l) * inner + i;
                    if d[at] > d[best] {
                        best = at;
                    }
                }
                data.push(d[best]);
                argmax.push(best);
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::from_parts(shape, data);
        self.push("reduce_max", v, Op::ReduceMax { x, argmax }, &[x])
    }

    pub fn reduce_mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.shape().len() || t.shape()[axis] == 0 {
            return Err(Error::shape("reduce_mean", t.shape(), &[axis]));
        }
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let d = t.data();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            let out = &mut data[o * inner..(o + 1) * inner];
            for l in 0..len {
                let row = &d[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (a, b) in out.iter_mut().zip(row) {
                    *a += b;
                }
            }
            for a in out.iter_mut() {
                *a /= len as f64;
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let v = Tensor::from_parts(shape, data);
        self.push("reduce_mean", v, Op::ReduceMean { x, axis }, &[x])
    }

    /// Repeats a vector (shape `[C]` or `[1, C]`) as `n` rows: n×C.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let t = self.value(x);
        let c = match t.shape() {
            [c] => *c,
            [1, c] => *c,
            s => return Err(Error::shape("broadcast_rows", s, &[1, t.len()])),
        };
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            data.extend_from_slice(t.data());
        }
        let v = Tensor::from_parts(vec![n, c], data);
        self.push("broadcast_rows", v, Op::BroadcastRows(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        self.push("reshape", v, Op::Reshape(x), &[x])
    }

    /// Inverted dropout: in training, zeroes each element with probability `p`
    /// and scales survivors by 1/(1-p). Outside training it returns `x` unchanged.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let v = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("dropout", v, Op::Dropout { x, mask }, &[x])
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Edge pre-activations of an EdgeConv layer.
    ///
    /// For every point `i` and neighbor `n` the output row is
    /// `concat(x_i, x_i - x_n) · w + b`, with `w` of shape 2·Cin×Cout. The
    /// product is evaluated per point (split `w` into its two Cin-row halves)
    /// and then gathered per edge, which yields the same values as
    /// materializing the concatenated edge features.
    pub fn edge_linear(&mut self, x: Var, graph: &NeighborGraph, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (sx, sw) = (tx.shape(), tw.shape());
        if sx.len() != 2 || sw.len() != 2 || sw[0] != 2 * sx[1] || tb.len() != sw[1] {
            return Err(Error::shape("edge_linear", sx, sw));
        }
        if graph.num_points() != sx[0] {
            return Err(Error::shape("edge_linear graph", sx, &[graph.num_points(), graph.k()]));
        }
        let (n, cin, cout, k) = (sx[0], sx[1], sw[1], graph.k());
        let (w_self, w_diff) = tw.data().split_at(cin * cout);
        let mut u = vec![0.0; n * cout];
        let mut d = vec![0.0; n * cout];
        gemm(n, cin, cout, tx.data(), false, w_self, false, &mut u, false);
        gemm(n, cin, cout, tx.data(), false, w_diff, false, &mut d, false);
        let bias = tb.data();
        let mut out = Vec::with_capacity(n * k * cout);
        for i in 0..n {
            let ui = &u[i * cout..(i + 1) * cout];
            let di = &d[i * cout..(i + 1) * cout];
            for &j in graph.row(i) {
                let dj = &d[j * cout..(j + 1) * cout];
                out.extend((0..cout).map(|c| ui[c] + di[c] - dj[c] + bias[c]));
            }
        }
        let v = Tensor::from_parts(vec![n, k, cout], out);
        let op = Op::EdgeLinear {
            x,
            w,
            b,
            idx: graph.indices().to_vec(),
            k,
        };
        self.push("edge_linear", v, op, &[x, w, b])
    }

    /// Chamfer distance between the N×3 prediction and a constant target cloud.
    /// Gradients through a nearest-neighbor tie go to the first minimal index.
    pub fn chamfer(&mut self, pred: Var, target: Arc<Vec<Point3>>) -> Result<Var> {
        let t = self.value(pred);
        if t.shape().len() != 2 || t.shape()[1] != 3 {
            return Err(Error::shape("chamfer", t.shape(), &[target.len(), 3]));
        }
        if t.is_empty() || target.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let p: Vec<Point3> = t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
        let mut fwd_nn = Vec::with_capacity(p.len());
        let mut fwd = 0.0;
        for q in &p {
            let (j, d2) = geom::nearest(q, &target);
            fwd_nn.push(j);
            fwd += d2.sqrt();
        }
        let mut bwd_nn = Vec::with_capacity(target.len());
        let mut bwd = 0.0;
        for q in target.iter() {
            let (i, d2) = geom::nearest(q, &p);
            bwd_nn.push(i);
            bwd += d2.sqrt();
        }
        let value = fwd / p.len() as f64 + bwd / target.len() as f64;
        let op = Op::Chamfer {
            pred,
            target,
            fwd_nn,
            bwd_nn,
        };
        self.push("chamfer", Tensor::scalar(value), op, &[pred])
    }

    /// Mean over all B² entries of |(Q+1)/2 - I|, Q the cosine-similarity
    /// matrix of the rows of a B×E embedding batch.
    pub fn contrastive(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.shape().len() != 2 || t.rows() < 2 {
            return Err(Error::shape("contrastive", t.shape(), &[2, t.row_len()]));
        }
        let (u, _) = unit_rows(t)?;
        let b = t.rows();
        let q = gram(&u, b, t.row_len());
        let mut loss = 0.0;
        for i in 0..b {
            for j in 0..b {
                let target = if i == j { 1.0 } else { 0.0 };
                loss += ((q[i * b + j] + 1.0) / 2.0 - target).abs();
            }
        }
        let v = Tensor::scalar(loss / (b * b) as f64);
        self.push("contrastive", v, Op::Contrastive(x), &[x])
    }

    /// Mean softmax cross-entropy of R×C logits against R class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 2 || t.rows() != labels.len() {
            return Err(Error::shape("cross_entropy", t.shape(), &[labels.len()]));
        }
        let c = t.row_len();
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::InvalidArgument(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = Vec::with_capacity(t.len());
        let mut loss = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            loss += z.ln() + max - row[label];
            probs.extend(row.iter().map(|v| (v - max).exp() / z));
        }
        let v = Tensor::scalar(loss / labels.len() as f64);
        let op = Op::CrossEntropy {
            logits,
            labels: labels.to_vec(),
            probs,
        };
        self.push("cross_entropy", v, op, &[logits])
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let t = self.value(loss);
        if t.len() != 1 {
            return Err(Error::NonScalarLoss(t.shape().to_vec()));
        }
        let seed = Tensor::from_parts(t.shape().to_vec(), vec![1.0]);
        self.backward_seeded(vec![(loss, seed)])
    }

    /// Reverse sweep from arbitrary output gradients. Seeds on the same node add up.
    pub fn backward_seeded(&mut self, seeds: Vec<(Var, Tensor)>) -> Result<()> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.shape() != self.shape(v) {
                return Err(Error::shape("backward seed", self.shape(v), g.shape()));
            }
            accumulate(&mut grads[v.0], g);
        }
        for id in (0..self.nodes.len()).rev() {
            if !self.nodes[id].requires_grad {
                grads[id] = None;
                continue;
            }
            if matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, contribution) in self.input_grads(id, &g) {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], contribution);
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn input_grads(&self, id: usize, g: &Tensor) -> Vec<(Var, Tensor)> {
        let node = &self.nodes[id];
        let out = &node.value;
        let shaped = |v: Var, data: Vec<f64>| Tensor::from_parts(self.shape(v).to_vec(), data);
        let gd = g.data();
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, shaped(*b, gd.iter().map(|v| -v).collect()))],
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let ga = gd.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                let gb = gd.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                vec![(*a, shaped(*a, ga)), (*b, shaped(*b, gb))]
            }
            Op::ScaleConst(x, c) => vec![(*x, shaped(*x, gd.iter().map(|v| v * c).collect()))],
            Op::ScaleBy { x, s } => {
                let sv = self.value(*s).data()[0];
                let gs: f64 = gd.iter().zip(self.value(*x).data()).map(|(g, x)| g * x).sum();
                vec![
                    (*x, shaped(*x, gd.iter().map(|v| v * sv).collect())),
                    (*s, shaped(*s, vec![gs])),
                ]
            }
            Op::ScaleRows { x, w } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let c = tx.row_len();
                let gx = gd.iter().enumerate().map(|(i, g)| g * tw.data()[i / c]).collect();
                let gw = (0..tx.rows())
                    .map(|r| {
                        gd[r * c..(r + 1) * c]
                            .iter()
                            .zip(tx.row(r))
                            .map(|(g, x)| g * x)
                            .sum()
                    })
                    .collect();
                vec![(*x, shaped(*x, gx)), (*w, shaped(*w, gw))]
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                gemm(m, n, k, gd, false, tb.data(), true, &mut ga, false);
                gemm(k, m, n, ta.data(), true, gd, false, &mut gb, false);
                vec![(*a, shaped(*a, ga)), (*b, shaped(*b, gb))]
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (r, cin, cout) = (tx.shape()[0], tx.shape()[1], tw.shape()[1]);
                let mut res = Vec::with_capacity(3);
                if self.requires_grad(*x) {
                    let mut gx = vec![0.0; r * cin];
                    gemm(r, cout, cin, gd, false, tw.data(), true, &mut gx, false);
                    res.push((*x, shaped(*x, gx)));
                }
                if self.requires_grad(*w) {
                    let mut gw = vec![0.0; cin * cout];
                    gemm(cin, r, cout, tx.data(), true, gd, false, &mut gw, false);
                    res.push((*w, shaped(*w, gw)));
                }
                if let Some(b) = b {
                    res.push((*b, shaped(*b, column_sums(gd, cout))));
                }
                res
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let gx = gd
                    .iter()
                    .zip(tx.data())
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*x, shaped(*x, gx))]
            }
            Op::Sigmoid(x) => {
                let gx = gd.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                vec![(*x, shaped(*x, gx))]
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_extents(out.shape(), *axis);
                let mut parts: Vec<Vec<f64>> = inputs.iter().map(|v| Vec::with_capacity(self.value(*v).len())).collect();
                let mut offset = 0;
                for o in 0..outer {
                    for (p, v) in parts.iter_mut().zip(inputs) {
                        let block = self.shape(*v)[*axis] * inner;
                        p.extend_from_slice(&gd[offset..offset + block]);
                        offset += block;
                    }
                    debug_assert!(o < outer);
                }
                inputs.iter().zip(parts).map(|(v, p)| (*v, shaped(*v, p))).collect()
            }
            Op::GatherRows { x, idx } => {
                let w = self.value(*x).row_len();
                let mut gx = vec![0.0; self.value(*x).len()];
                for (r, &i) in idx.iter().enumerate() {
                    for (a, b) in gx[i * w..(i + 1) * w].iter_mut().zip(&gd[r * w..(r + 1) * w]) {
                        *a += b;
                    }
                }
                vec![(*x, shaped(*x, gx))]
            }
            Op::SliceRows { x, start } => {
                let tx = self.value(*x);
                let w = tx.row_len();
                let mut gx = vec![0.0; tx.len()];
                gx[start * w..start * w + gd.len()].copy_from_slice(gd);
                vec![(*x, shaped(*x, gx))]
            }
            Op::ReduceMax { x, argmax } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (g, &at) in gd.iter().zip(argmax) {
                    gx[at] += g;
                }
                vec![(*x, shaped(*x, gx))]
            }
            Op::ReduceMean { x, axis } => {
                let tx = self.value(*x);
                let (outer, len, inner) = axis_extents(tx.shape(), *axis);
                let mut gx = vec![0.0; tx.len()];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            gx[(o * len + l) * inner + i] = gd[o * inner + i] / len as f64;
                        }
                    }
                }
                vec![(*x, shaped(*x, gx))]
            }
            Op::BroadcastRows(x) => {
                let c = self.value(*x).len();
                vec![(*x, shaped(*x, column_sums(gd, c)))]
            }
            Op::Reshape(x) => vec![(*x, shaped(*x, gd.to_vec()))],
            Op::Dropout { x, mask } => {
                vec![(*x, shaped(*x, gd.iter().zip(mask).map(|(g, m)| g * m).collect()))]
            }
            Op::Sum(x) => vec![(*x, shaped(*x, vec![gd[0]; self.value(*x).len()]))],
            Op::EdgeLinear { x, w, b, idx, k } => self.edge_linear_grads(*x, *w, *b, idx, *k, gd),
            Op::Chamfer {
                pred,
                target,
                fwd_nn,
                bwd_nn,
            } => {
                let p = self.value(*pred).data();
                let (n, m) = (fwd_nn.len(), bwd_nn.len());
                let mut gp = vec![0.0; p.len()];
                let mut pull = |i: usize, q: &Point3, scale: f64| {
                    let d = [p[3 * i] - q[0], p[3 * i + 1] - q[1], p[3 * i + 2] - q[2]];
                    let len = geom::norm(&d);
                    if len > 0.0 {
                        for c in 0..3 {
                            gp[3 * i + c] += scale * d[c] / len;
                        }
                    }
                };
                for (i, &j) in fwd_nn.iter().enumerate() {
                    pull(i, &target[j], gd[0] / n as f64);
                }
                for (j, &i) in bwd_nn.iter().enumerate() {
                    pull(i, &target[j], gd[0] / m as f64);
                }
                vec![(*pred, shaped(*pred, gp))]
            }
            Op::Contrastive(x) => {
                let tx = self.value(*x);
                let (b, e) = (tx.rows(), tx.row_len());
                let (u, norms) = unit_rows(tx).expect("validated in forward");
                let q = gram(&u, b, e);
                let scale = gd[0] / (2.0 * (b * b) as f64);
                // dL/dQ, symmetrized; diagonal entries are constant in Q and carry no gradient
                let mut dq = vec![0.0; b * b];
                for i in 0..b {
                    for j in 0..b {
                        if i != j {
                            let a = (q[i * b + j] + 1.0) / 2.0;
                            dq[i * b + j] = scale * sign(a);
                        }
                    }
                }
                let mut sym = vec![0.0; b * b];
                for i in 0..b {
                    for j in 0..b {
                        sym[i * b + j] = dq[i * b + j] + dq[j * b + i];
                    }
                }
                let mut du = vec![0.0; b * e];
                gemm(b, b, e, &sym, false, &u, false, &mut du, false);
                let mut gx = vec![0.0; b * e];
                for i in 0..b {
                    let ui = &u[i * e..(i + 1) * e];
                    let dui = &du[i * e..(i + 1) * e];
                    let along: f64 = ui.iter().zip(dui).map(|(a, b)| a * b).sum();
                    for c in 0..e {
                        gx[i * e + c] = (dui[c] - ui[c] * along) / norms[i];
                    }
                }
                vec![(*x, shaped(*x, gx))]
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let c = self.value(*logits).row_len();
                let scale = gd[0] / labels.len() as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &l) in labels.iter().enumerate() {
                    gl[r * c + l] -= scale;
                }
                vec![(*logits, shaped(*logits, gl))]
            }
        }
    }

    fn edge_linear_grads(&self, x: Var, w: Var, b: Var, idx: &[usize], k: usize, gd: &[f64]) -> Vec<(Var, Tensor)> {
        let (tx, tw) = (self.value(x), self.value(w));
        let (n, cin, cout) = (tx.shape()[0], tx.shape()[1], tw.shape()[1]);
        // d out / d u_i sums over the point's edges; d out / d d_j also subtracts
        // every edge that names j as its neighbor
        let mut gu = vec![0.0; n * cout];
        for i in 0..n {
            let acc = &mut gu[i * cout..(i + 1) * cout];
            for e in 0..k {
                let row = &gd[(i * k + e) * cout..(i * k + e + 1) * cout];
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        let mut gdiff = gu.clone();
        for (edge, &j) in idx.iter().enumerate() {
            let row = &gd[edge * cout..(edge + 1) * cout];
            for (a, v) in gdiff[j * cout..(j + 1) * cout].iter_mut().zip(row) {
                *a -= v;
            }
        }
        let (w_self, w_diff) = tw.data().split_at(cin * cout);
        let mut res = Vec::with_capacity(3);
        if self.requires_grad(x) {
            let mut gx = vec![0.0; n * cin];
            gemm(n, cout, cin, &gu, false, w_self, true, &mut gx, false);
            gemm(n, cout, cin, &gdiff, false, w_diff, true, &mut gx, true);
            res.push((x, Tensor::from_parts(tx.shape().to_vec(), gx)));
        }
        if self.requires_grad(w) {
            let mut gw = vec![0.0; 2 * cin * cout];
            let (top, bottom) = gw.split_at_mut(cin * cout);
            gemm(cin, n, cout, tx.data(), true, &gu, false, top, false);
            gemm(cin, n, cout, tx.data(), true, &gdiff, false, bottom, false);
            res.push((w, Tensor::from_parts(tw.shape().to_vec(), gw)));
        }
        res.push((b, Tensor::from_parts(self.shape(b).to_vec(), column_sums(&gu, cout))));
        res
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn column_sums(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for row in data.chunks(cols) {
        for (a, b) in out.iter_mut().zip(row) {
            *a += b;
        }
    }
    out
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`sigmoid`] on (0, 1); maps 0 and 1 to ∓∞.
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Row-normalized copy of a B×E matrix and the original row norms.
fn unit_rows(t: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = t.row_len();
    let mut u = Vec::with_capacity(t.len());
    let mut norms = Vec::with_capacity(t.rows());
    for i in 0..t.rows() {
        let row = t.row(i);
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::DegenerateEmbedding(i));
        }
        norms.push(n);
        u.extend(row.iter().map(|v| v / n));
    }
    debug_assert_eq!(u.len(), t.rows() * e);
    Ok((u, norms))
}

fn gram(u: &[f64], b: usize, e: usize) -> Vec<f64> {
    let mut q = vec![0.0; b * b];
    gemm(b, e, b, u, false, u, true, &mut q, false);
    q
}
