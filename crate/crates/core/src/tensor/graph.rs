use std::collections::{BTreeMap, HashMap};

use super::{gemm_acc, gemm_nt_acc, gemm_tn_acc, softmax_slice, Tensor, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
}

/// Deliberate backward-rule corruption, used as a negative control for
/// gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Scales the tanh derivative by 1.5.
    TanhBackward,
}

enum Value<T> {
    Owned(Tensor<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Act(Var, Activation),
    Softmax(Var),
    Concat { parts: Vec<Var>, axis: usize },
    SliceRows { src: Var, start: usize },
    SliceCols { src: Var, start: usize },
    Gather { src: Var, indices: Vec<usize> },
    Reshape(Var),
    Transpose(Var),
    /// `gap` is the smallest non-zero distance between a winner and a runner-up.
    SegmentMax { src: Var, argmax: Vec<usize>, gap: T },
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Option<Vec<T>>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

/// Append-only operation record. Node ids are positions in the record, so the
/// append order is a topological order and `backward` simply runs it in
/// reverse.
///
/// A graph borrows the parameter store immutably; it must stay on one thread,
/// but distinct graphs over the same store may run concurrently.
pub struct Graph<'p, T: Scalar> {
    params: Option<&'p ParamStore<T>>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, Var>,
    fault: Option<Fault>,
}

impl<'p, T: Scalar> Default for Graph<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            fault: None,
        }
    }

    pub fn with_params(params: &'p ParamStore<T>) -> Self {
        Graph {
            params: Some(params),
            ..Graph::new()
        }
    }

    pub fn inject_fault(&mut self, fault: Option<Fault>) {
        self.fault = fault;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self
                .params
                .expect("parameter node without a store")
                .value(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients outside this graph.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node so
    /// gradients from every use accumulate in one place.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_nodes.get(&id) {
            return v;
        }
        assert!(
            self.params.map_or(false, |p| id.0 < p.len()),
            "parameter {id:?} not in this graph's store"
        );
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes.insert(id, v);
        v
    }

    fn matrix_dims(&self, op: &'static str, v: Var) -> Result<(usize, usize), TensorError> {
        let s = self.shape(v);
        if s.len() != 2 {
            return Err(TensorError::invalid(op, format!("expected a matrix, got shape {s:?}")));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        Ok(self.push(Tensor::new(&[m, n], out)?, Op::MatMul(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, op: Op<T>, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor { shape, data }, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(Op::Add(a, b), a, b, |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(Op::Sub(a, b), a, b, |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(Op::Mul(a, b), a, b, |x, y| x * y))
    }

    /// `m[r×c] + bias[c]` broadcast over rows; the only broadcasting op.
    pub fn add_row(&mut self, m: Var, bias: Var) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("add_row", m)?;
        if self.value(bias).len() != c || self.value(bias).rows() != 1 {
            return Err(TensorError::Shape {
                op: "add_row",
                lhs: vec![r, c],
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias).data();
        let mut data = self.value(m).data().to_vec();
        for row in data.chunks_mut(c.max(1)) {
            for (x, &y) in row.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(self.push(Tensor::new(&[r, c], data)?, Op::AddRow(m, bias)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x * s).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Scale(a, s))
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Var {
        let t = self.value(a);
        let data = t
            .data()
            .iter()
            .map(|&x| match kind {
                Activation::Tanh => x.tanh(),
                Activation::Relu => x.max(T::zero()),
                Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
            })
            .collect();
        let shape = t.shape().to_vec();
        self.push(Tensor { shape, data }, Op::Act(a, kind))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Relu)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(a, Activation::Sigmoid)
    }

    /// Softmax over all elements, computed with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(TensorError::invalid("softmax", "empty input"));
        }
        let data = softmax_slice(t.data());
        let shape = t.shape().to_vec();
        Ok(self.push(Tensor { shape, data }, Op::Softmax(a)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::invalid("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::invalid(
                "concat",
                format!("axis {axis} out of range for shape {base:?}"),
            ));
        }
        let mut out_shape = base.clone();
        out_shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        Ok(self.push(
            Tensor::new(&out_shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
        ))
    }

    pub fn slice_rows(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("slice_rows", src)?;
        if start + len > r {
            return Err(TensorError::invalid(
                "slice_rows",
                format!("rows {start}..{} out of {r}", start + len),
            ));
        }
        let data = self.value(src).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::new(&[len, c], data)?, Op::SliceRows { src, start }))
    }

    pub fn slice_cols(&mut self, src: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("slice_cols", src)?;
        if start + len > c {
            return Err(TensorError::invalid(
                "slice_cols",
                format!("columns {start}..{} out of {c}", start + len),
            ));
        }
        let t = self.value(src);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        Ok(self.push(Tensor::new(&[r, len], data)?, Op::SliceCols { src, start }))
    }

    /// Row lookup: `out[i] = src[indices[i]]`. Embedding tables use this.
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("gather_rows", src)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(TensorError::invalid(
                "gather_rows",
                format!("row {bad} out of {r}"),
            ));
        }
        let t = self.value(src);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        Ok(self.push(
            Tensor::new(&[indices.len(), c], data)?,
            Op::Gather {
                src,
                indices: indices.to_vec(),
            },
        ))
    }

    pub fn reshape(&mut self, src: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let t = self.value(src);
        if shape.iter().product::<usize>() != t.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = t.data().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Reshape(src)))
    }

    pub fn transpose(&mut self, src: Var) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("transpose", src)?;
        let t = self.value(src).data();
        let mut data = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(&[c, r], data)?, Op::Transpose(src)))
    }

    /// Column-wise max over consecutive row segments of the given lengths.
    /// Ties resolve to the first maximal row.
    pub fn segment_max(&mut self, src: Var, lens: &[usize]) -> Result<Var, TensorError> {
        let (r, c) = self.matrix_dims("segment_max", src)?;
        if lens.iter().sum::<usize>() != r || lens.contains(&0) {
            return Err(TensorError::invalid(
                "segment_max",
                format!("segments {lens:?} do not partition {r} rows"),
            ));
        }
        let t = self.value(src);
        let mut data = Vec::with_capacity(lens.len() * c);
        let mut argmax = Vec::with_capacity(lens.len() * c);
        let mut gap = T::infinity();
        let mut start = 0;
        for &len in lens {
            for j in 0..c {
                let mut best = start;
                for i in start + 1..start + len {
                    if t.at(i, j) > t.at(best, j) {
                        best = i;
                    }
                }
                let top = t.at(best, j);
                for i in start..start + len {
                    let d = top - t.at(i, j);
                    if d > T::zero() && d < gap {
                        gap = d;
                    }
                }
                data.push(top);
                argmax.push(best);
            }
            start += len;
        }
        Ok(self.push(
            Tensor::new(&[lens.len(), c], data)?,
            Op::SegmentMax { src, argmax, gap },
        ))
    }

    pub fn sum(&mut self, src: Var) -> Var {
        let total = self.value(src).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::Sum(src))
    }

    /// `Σ_k w_k · (logsumexp(logits[k]) − logits[k][targets[k]])`, a `[1]`
    /// tensor. Weights default to one.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[T]>,
    ) -> Result<Var, TensorError> {
        let (k, r) = self.matrix_dims("cross_entropy", logits)?;
        if targets.len() != k || weights.is_some_and(|w| w.len() != k) {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("{k} rows but {} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= r) {
            return Err(TensorError::invalid(
                "cross_entropy",
                format!("target {bad} out of {r} classes"),
            ));
        }
        let t = self.value(logits);
        let mut probs = Vec::with_capacity(k * r);
        let mut total = T::zero();
        for (i, &target) in targets.iter().enumerate() {
            let row = t.row(i);
            let lse = super::log_sum_exp(row);
            let w = weights.map_or(T::one(), |w| w[i]);
            total += w * (lse - row[target]);
            probs.extend(row.iter().map(|&x| (x - lse).exp()));
        }
        Ok(self.push(
            Tensor::scalar(total),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.map(<[T]>::to_vec),
                probs,
            },
        ))
    }

    /// Distance from the nearest point where the recorded computation stops
    /// being differentiable: the smallest `|x|` fed to a relu and the smallest
    /// non-zero winner/runner-up gap of a segment max. Exact ties between
    /// segment rows are ignored; they come from identical inputs and move
    /// together. Finite differences are only trustworthy when this is well
    /// above the perturbation size.
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Act(a, Activation::Relu) => {
                    for &x in self.value(*a).data() {
                        margin = margin.min(x.abs().as_f64());
                    }
                }
                Op::SegmentMax { gap, .. } => margin = margin.min(gap.as_f64()),
                _ => {}
            }
        }
        margin
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let shape = self.shape(loss);
        if !(shape.is_empty() || shape == [1]) {
            return Err(TensorError::NotScalar(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![T::one()]);
        let n_params = self.params.map_or(0, ParamStore::len);
        let mut rows: Vec<BTreeMap<usize, Vec<T>>> = vec![BTreeMap::new(); n_params];

        for id in (0..=loss.0).rev() {
            let Some(gy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if let Value::Param(_) = node.value {
                grads[id] = Some(gy);
                continue;
            }
            self.backward_node(&node.op, Var(id), &gy, &mut grads, &mut rows);
        }

        let mut dense = vec![None; n_params];
        for (&pid, &v) in &self.param_nodes {
            if let Some(g) = grads.get_mut(v.0).and_then(Option::take) {
                let shape = self.value(v).shape().to_vec();
                dense[pid.0] = Some(Tensor { shape, data: g });
            }
        }
        Ok(Gradients { dense, rows })
    }

    fn backward_node(
        &self,
        op: &Op<T>,
        out: Var,
        gy: &[T],
        grads: &mut [Option<Vec<T>>],
        rows: &mut [BTreeMap<usize, Vec<T>>],
    ) {
        macro_rules! acc {
            ($v:expr) => {{
                let n = self.value($v).len();
                grads[$v.0].get_or_insert_with(|| vec![T::zero(); n])
            }};
        }
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                gemm_nt_acc(gy, bv, acc!(*a), m, n, k);
                gemm_tn_acc(av, gy, acc!(*b), m, k, n);
            }
            Op::Add(a, b) => {
                add_into(acc!(*a), gy);
                add_into(acc!(*b), gy);
            }
            Op::Sub(a, b) => {
                add_into(acc!(*a), gy);
                for (g, &d) in acc!(*b).iter_mut().zip(gy) {
                    *g -= d;
                }
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b).data();
                for ((g, &d), &y) in acc!(*a).iter_mut().zip(gy).zip(bv) {
                    *g += d * y;
                }
                let av = self.value(*a).data();
                for ((g, &d), &x) in acc!(*b).iter_mut().zip(gy).zip(av) {
                    *g += d * x;
                }
            }
            Op::AddRow(m, bias) => {
                add_into(acc!(*m), gy);
                let c = self.value(*bias).len();
                let gb = acc!(*bias);
                for row in gy.chunks(c.max(1)) {
                    add_into(gb, row);
                }
            }
            Op::Scale(a, s) => {
                for (g, &d) in acc!(*a).iter_mut().zip(gy) {
                    *g += d * *s;
                }
            }
            Op::Act(a, kind) => {
                let y = self.value(out).data();
                let fault = match (kind, self.fault) {
                    (Activation::Tanh, Some(Fault::TanhBackward)) => T::of(1.5),
                    _ => T::one(),
                };
                let g = acc!(*a);
                for ((g, &d), &y) in g.iter_mut().zip(gy).zip(y) {
                    let dy = match kind {
                        Activation::Tanh => (T::one() - y * y) * fault,
                        Activation::Sigmoid => y * (T::one() - y),
                        Activation::Relu => {
                            if y > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                    };
                    *g += d * dy;
                }
            }
            Op::Softmax(a) => {
                let y = self.value(out).data();
                let dot: T = gy.iter().zip(y).map(|(&d, &p)| d * p).sum();
                for ((g, &d), &p) in acc!(*a).iter_mut().zip(gy).zip(y) {
                    *g += p * (d - dot);
                }
            }
            Op::Concat { parts, axis } => {
                let base = self.shape(parts[0]);
                let outer: usize = base[..*axis].iter().product();
                let inner: usize = base[axis + 1..].iter().product();
                let mut offset = 0;
                for o in 0..outer {
                    for &p in parts {
                        let chunk = self.shape(p)[*axis] * inner;
                        let g = acc!(p);
                        add_into(&mut g[o * chunk..(o + 1) * chunk], &gy[offset..offset + chunk]);
                        offset += chunk;
                    }
                }
            }
            Op::SliceRows { src, start } => {
                let c = self.value(*src).cols();
                let g = acc!(*src);
                add_into(&mut g[start * c..start * c + gy.len()], gy);
            }
            Op::SliceCols { src, start } => {
                let c = self.value(*src).cols();
                let len = self.value(out).cols();
                let g = acc!(*src);
                for (i, row) in gy.chunks(len.max(1)).enumerate() {
                    add_into(&mut g[i * c + start..i * c + start + len], row);
                }
            }
            Op::Gather { src, indices } => {
                let c = self.value(*src).cols();
                if let Value::Param(pid) = self.nodes[src.0].value {
                    let table = &mut rows[pid.0];
                    for (&i, row) in indices.iter().zip(gy.chunks(c.max(1))) {
                        let entry = table.entry(i).or_insert_with(|| vec![T::zero(); c]);
                        add_into(entry, row);
                    }
                } else {
                    let g = acc!(*src);
                    for (&i, row) in indices.iter().zip(gy.chunks(c.max(1))) {
                        add_into(&mut g[i * c..(i + 1) * c], row);
                    }
                }
            }
            Op::Reshape(src) => add_into(acc!(*src), gy),
            Op::Transpose(src) => {
                let (r, c) = (self.shape(*src)[0], self.shape(*src)[1]);
                let g = acc!(*src);
                for i in 0..r {
                    for j in 0..c {
                        g[i * c + j] += gy[j * r + i];
                    }
                }
            }
            Op::SegmentMax { src, argmax, .. } => {
                let c = self.value(*src).cols();
                let g = acc!(*src);
                for (k, (&row, &d)) in argmax.iter().zip(gy).enumerate() {
                    g[row * c + k % c] += d;
                }
            }
            Op::Sum(src) => {
                let d = gy[0];
                for g in acc!(*src).iter_mut() {
                    *g += d;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                let r = self.value(*logits).cols();
                let d = gy[0];
                let g = acc!(*logits);
                for (i, &t) in targets.iter().enumerate() {
                    let w = weights.as_ref().map_or(T::one(), |w| w[i]) * d;
                    for j in 0..r {
                        let indicator = if j == t { T::one() } else { T::zero() };
                        g[i * r + j] += w * (probs[i * r + j] - indicator);
                    }
                }
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Parameter gradients from one backward pass.
///
/// Gradients that reached a parameter only through row lookups are kept as
/// sparse rows so large embedding tables are never densified per sentence.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    dense: Vec<Option<Tensor<T>>>,
    rows: Vec<BTreeMap<usize, Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn touched(&self, id: ParamId) -> bool {
        self.dense.get(id.0).is_some_and(Option::is_some)
            || self.rows.get(id.0).is_some_and(|r| !r.is_empty())
    }

    /// Dense gradient for one parameter; zero when unreachable.
    pub fn get(&self, id: ParamId, store: &ParamStore<T>) -> Tensor<T> {
        let mut out = Tensor::zeros(store.value(id).shape());
        self.add_scaled_into(id, out.data_mut(), T::one());
        out
    }

    /// `dst += scale · grad(id)`
    pub fn add_scaled_into(&self, id: ParamId, dst: &mut [T], scale: T) {
        if let Some(Some(d)) = self.dense.get(id.0) {
            for (x, &g) in dst.iter_mut().zip(d.data()) {
                *x += scale * g;
            }
        }
        if let Some(rows) = self.rows.get(id.0) {
            for (&r, g) in rows {
                let c = g.len();
                for (x, &v) in dst[r * c..(r + 1) * c].iter_mut().zip(g) {
                    *x += scale * v;
                }
            }
        }
    }

    pub fn all_finite(&self) -> Option<ParamId> {
        for (i, d) in self.dense.iter().enumerate() {
            if d.as_ref().is_some_and(|t| !t.all_finite()) {
                return Some(ParamId(i));
            }
        }
        for (i, rows) in self.rows.iter().enumerate() {
            if rows.values().flatten().any(|x| !x.is_finite()) {
                return Some(ParamId(i));
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let mut g = Graph::<f64>::new();
        let i = g.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let b = g.constant(t(&[2, 2], &[5., 6., 7., 8.]));
        let c = g.matmul(i, b).unwrap();
        assert_eq!(g.value(c).data(), &[5., 6., 7., 8.]);

        let x = g.constant(t(&[1, 1], &[2.]));
        let y = g.constant(t(&[1, 1], &[3.]));
        let z = g.matmul(x, y).unwrap();
        assert_eq!(g.value(z).data(), &[6.]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TensorError::Shape {
                op: "matmul",
                lhs: vec![2, 3],
                rhs: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3] and [2, 3]"));
    }

    #[test]
    fn softmax_cases() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[2], &[0., 0.]));
        let s = g.softmax(a).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);

        let big = g.constant(t(&[3], &[1000., 1000., 1000.]));
        let s = g.softmax(big).unwrap();
        for &p in g.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }

        let empty = g.constant(Tensor::zeros(&[0]));
        assert!(g.softmax(empty).is_err());
    }

    #[test]
    fn activations() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[3], &[-1., 0., 2.]));
        let r = g.relu(a);
        assert_eq!(g.value(r).data(), &[0., 0., 2.]);
        let z = g.constant(t(&[1], &[0.]));
        let th = g.tanh(z);
        assert_eq!(g.value(th).data(), &[0.]);
    }

    #[test]
    fn relu_gradient_at_zero_is_zero() {
        let mut store = ParamStore::new();
        let pid = store.add("x", ParamGroup::Ffn, t(&[3], &[-1., 0., 2.]));
        let mut g = Graph::with_params(&store);
        let x = g.param(pid);
        let r = g.relu(x);
        let s = g.sum(r);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(pid, &store).data(), &[0., 0., 1.]);
    }

    #[test]
    fn concat_cases() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[1, 2], &[1., 2.]));
        let b = g.constant(t(&[1, 1], &[3.]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[1, 3]);
        assert_eq!(g.value(c).data(), &[1., 2., 3.]);

        let one = g.concat(&[a], 1).unwrap();
        assert_eq!(g.value(one), g.value(a));

        let bad = g.constant(t(&[2, 1], &[1., 2.]));
        assert!(g.concat(&[a, bad], 1).is_err());
    }

    #[test]
    fn concat_backward_splits_ones() {
        let mut store = ParamStore::new();
        let a = store.add("a", ParamGroup::Ffn, t(&[2, 2], &[1., 2., 3., 4.]));
        let b = store.add("b", ParamGroup::Ffn, t(&[2, 1], &[5., 6.]));
        let mut g = Graph::with_params(&store);
        let (va, vb) = (g.param(a), g.param(b));
        let c = g.concat(&[va, vb], 1).unwrap();
        let s = g.sum(c);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(a, &store).data(), &[1.; 4]);
        assert_eq!(grads.get(b, &store).data(), &[1.; 2]);
    }

    #[test]
    fn product_rule_and_accumulation() {
        let mut store = ParamStore::new();
        let x = store.add("x", ParamGroup::Ffn, t(&[1, 1], &[2.]));
        let y = store.add("y", ParamGroup::Ffn, t(&[1, 1], &[3.]));
        let unused = store.add("u", ParamGroup::Ffn, t(&[1, 1], &[9.]));
        let mut g = Graph::with_params(&store);
        let (vx, vy) = (g.param(x), g.param(y));
        let f = g.matmul(vx, vy).unwrap();
        let f = g.sum(f);
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x, &store).data(), &[3.]);
        assert_eq!(grads.get(y, &store).data(), &[2.]);
        assert_eq!(grads.get(unused, &store).data(), &[0.]);
        assert!(!grads.touched(unused));

        let mut g = Graph::with_params(&store);
        let vx = g.param(x);
        let vx2 = g.param(x);
        assert_eq!(vx, vx2);
        let f = g.add(vx, vx2).unwrap();
        let f = g.sum(f);
        let grads = g.backward(f).unwrap();
        assert_eq!(grads.get(x, &store).data(), &[2.]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2]));
        assert_eq!(g.backward(a).unwrap_err(), TensorError::NotScalar(vec![2]));
    }

    #[test]
    fn gather_of_param_is_sparse() {
        let mut store = ParamStore::new();
        let e = store.add("emb", ParamGroup::Embeddings, t(&[4, 2], &[0., 1., 2., 3., 4., 5., 6., 7.]));
        let mut g = Graph::with_params(&store);
        let ve = g.param(e);
        let rows = g.gather_rows(ve, &[1, 3, 1]).unwrap();
        assert_eq!(g.value(rows).data(), &[2., 3., 6., 7., 2., 3.]);
        let s = g.sum(rows);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(e, &store).data(), &[0., 0., 2., 2., 0., 0., 1., 1.]);
    }

    #[test]
    fn segment_max_ties_pick_first() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(t(&[3, 2], &[1., 5., 1., 2., 0., 9.]));
        let m = g.segment_max(a, &[2, 1]).unwrap();
        assert_eq!(g.value(m).data(), &[1., 5., 0., 9.]);
        assert!(g.segment_max(a, &[1, 1]).is_err());
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let mut g = Graph::<f64>::new();
        let l = g.constant(t(&[2, 2], &[0., 0., 1., 3.]));
        let ce = g.cross_entropy(l, &[0, 1], None).unwrap();
        let expected = 2f64.ln() + (1f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((g.value(ce).data()[0] - expected).abs() < 1e-12);
    }
}
