use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Tensor, TensorError};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Execution mode. Dropout is active only in `Train`, driven by `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Inference,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Conv1d { x: NodeId, w: NodeId, b: NodeId },
    Embedding { table: NodeId, indices: Vec<usize>, pad: Option<usize> },
    Concat { inputs: Vec<NodeId>, axis: usize },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Dropout { x: NodeId, mask: Vec<T> },
    Mean(NodeId),
    Sum(NodeId),
    L2Normalize(NodeId),
    GlobalAvgPool(NodeId),
    Slice { x: NodeId, axis: usize, start: usize },
    Reshape(NodeId),
    Mse { pred: NodeId, target: Vec<T>, denom: T },
    CrossEntropy { logits: NodeId, labels: Vec<usize>, denom: T },
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    /// `None` only for parameter nodes, whose value lives in the store.
    value: Option<Tensor<T>>,
    /// Whether any parameter reaches this node.
    grad: bool,
}

impl<T> Op<T> {
    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Conv1d { x, w, b } => vec![*x, *w, *b],
            Op::Embedding { table, .. } => vec![*table],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Scale(x, _)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Softmax(x)
            | Op::Dropout { x, .. }
            | Op::Mean(x)
            | Op::Sum(x)
            | Op::L2Normalize(x)
            | Op::GlobalAvgPool(x)
            | Op::Slice { x, .. }
            | Op::Reshape(x) => vec![*x],
            Op::Mse { pred, .. } => vec![*pred],
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

/// Per-parameter gradient buffers produced by [`Graph::backward`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients<T> {
    grads: BTreeMap<ParamId, Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.grads.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.grads.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Elementwise sum, used to merge gradients of independent sub-batches.
    pub fn merge(&mut self, other: Gradients<T>) {
        for (id, g) in other.grads {
            match self.grads.get_mut(&id) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => {
                    self.grads.insert(id, g);
                }
            }
        }
    }

    fn add(&mut self, id: ParamId, g: Vec<T>) {
        self.merge(Gradients {
            grads: BTreeMap::from([(id, g)]),
        });
    }
}

/// Define-by-run computation record over a borrowed parameter store.
///
/// Not `Sync`: one graph per thread. The store is shared read-only, so
/// several graphs can evaluate the same parameters concurrently.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
    mode: Mode,
    rng: ChaCha8Rng,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>, mode: Mode) -> Self {
        let seed = match mode {
            Mode::Train { seed } => seed,
            Mode::Inference => 0,
        };
        Self {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
            mode,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        matches!(self.mode, Mode::Train { .. })
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor<T>, TensorError> {
        let node = self.nodes.get(id.0).ok_or(TensorError::NotEvaluated(id.0))?;
        Ok(match (&node.op, &node.value) {
            (_, Some(v)) => v,
            (Op::Param(pid), None) => self.params.get(*pid),
            _ => unreachable!("non-parameter node without value"),
        })
    }

    /// Smallest `|input|` over all relu nodes, `None` without relus. Finite
    /// differences with a step at or above this straddle a kink.
    pub fn relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(x) => self.value(x).ok(),
                _ => None,
            })
            .flat_map(|t| t.data().iter().map(|v| v.abs()))
            .reduce(|a, b| if b < a { b } else { a })
    }

    fn shape(&self, id: NodeId) -> Result<Vec<usize>, TensorError> {
        Ok(self.value(id)?.shape().to_vec())
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> NodeId {
        let grad = op.operands().iter().any(|o| self.nodes[o.0].grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn tensor(shape: Vec<usize>, data: Vec<T>) -> Tensor<T> {
        Tensor::new(shape, data).expect("op output shape consistent")
    }

    pub fn input(&mut self, tensor: Tensor<T>) -> NodeId {
        let mut tensor = tensor;
        tensor.set_requires_grad(false);
        self.push(Op::Input, tensor)
    }

    /// Parameter leaf. Repeated calls with the same id share one node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&node) = self.param_nodes.get(&id) {
            return node;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            grad: true,
        });
        let node = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, node);
        node
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (av, bv) = (self.value(a)?, self.value(b)?);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(av.data(), bv.data(), m, k, n);
        Ok(self.push(Op::MatMul(a, b), Self::tensor(vec![m, n], out)))
    }

    /// Temporal convolution, same padding, stride 1.
    /// `x: [B, L, Cin]`, `w: [K, Cin, Cout]` with odd `K`, `b: [Cout]`.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (xv, wv, bv) = (self.value(x)?, self.value(w)?, self.value(b)?);
        let (sx, sw) = (xv.shape(), wv.shape());
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] || sw[0] % 2 == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d",
                left: sx.to_vec(),
                right: sw.to_vec(),
            });
        }
        if bv.shape() != [sw[2]] {
            return Err(TensorError::ShapeMismatch {
                op: "conv1d(bias)",
                left: sw.to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let (batch, len, cin) = (sx[0], sx[1], sx[2]);
        let (kernel, cout) = (sw[0], sw[2]);
        let pad = kernel / 2;
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![T::zero(); batch * len * cout];
        for bi in 0..batch {
            for t in 0..len {
                let row = &mut out[(bi * len + t) * cout..(bi * len + t + 1) * cout];
                row.copy_from_slice(bd);
                for k in 0..kernel {
                    let src = t + k;
                    if src < pad || src - pad >= len {
                        continue;
                    }
                    let xrow = &xd[(bi * len + src - pad) * cin..(bi * len + src - pad + 1) * cin];
                    for (i, &xval) in xrow.iter().enumerate() {
                        let wrow = &wd[(k * cin + i) * cout..(k * cin + i + 1) * cout];
                        for (o, &wval) in row.iter_mut().zip(wrow) {
                            *o += xval * wval;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            Op::Conv1d { x, w, b },
            Self::tensor(vec![batch, len, cout], out),
        ))
    }

    /// Row lookup `table[indices] -> [N, D]`. Row `pad` receives no gradient.
    pub fn embedding(
        &mut self,
        table: NodeId,
        indices: &[usize],
        pad: Option<usize>,
    ) -> Result<NodeId, TensorError> {
        let tv = self.value(table)?;
        let st = tv.shape();
        if st.len() != 2 || indices.is_empty() {
            return Err(TensorError::InvalidShape {
                op: "embedding",
                shape: st.to_vec(),
                reason: "table must be 2-D and indices non-empty".into(),
            });
        }
        let (rows, dim) = (st[0], st[1]);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "embedding",
                    index: i,
                    bound: rows,
                });
            }
            out.extend_from_slice(&tv.data()[i * dim..(i + 1) * dim]);
        }
        Ok(self.push(
            Op::Embedding {
                table,
                indices: indices.to_vec(),
                pad,
            },
            Self::tensor(vec![indices.len(), dim], out),
        ))
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId, TensorError> {
        let first = self.shape(*inputs.first().ok_or(TensorError::InvalidShape {
            op: "concat",
            shape: vec![],
            reason: "no inputs".into(),
        })?)?;
        if axis >= first.len() {
            return Err(TensorError::InvalidShape {
                op: "concat",
                shape: first,
                reason: format!("axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for &id in inputs {
            let s = self.shape(id)?;
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: first,
                    right: s,
                });
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &id in inputs {
                let v = self.value(id)?;
                let block = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            Self::tensor(shape, out),
        ))
    }

    /// Elementwise sum. `b` may also be a trailing-suffix shape that is
    /// broadcast over the leading dimensions of `a` (bias addition).
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (av, bv) = (self.value(a)?, self.value(b)?);
        let (sa, sb) = (av.shape(), bv.shape());
        let suffix = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb;
        if !suffix {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let bd = bv.data();
        let out = av
            .data()
            .chunks(bd.len())
            .flat_map(|chunk| chunk.iter().zip(bd).map(|(x, y)| *x + *y))
            .collect();
        let shape = sa.to_vec();
        Ok(self.push(Op::Add(a, b), Self::tensor(shape, out)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), out))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let out = self.zip_same("multiply", a, b, |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), out))
    }

    fn zip_same(
        &self,
        op: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>, TensorError> {
        let (av, bv) = (self.value(a)?, self.value(b)?);
        if av.shape() != bv.shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                left: av.shape().to_vec(),
                right: bv.shape().to_vec(),
            });
        }
        let out = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Self::tensor(av.shape().to_vec(), out))
    }

    fn map(&mut self, x: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> Result<NodeId, TensorError> {
        let v = self.value(x)?;
        let out = v.data().iter().map(|&e| f(e)).collect();
        let shape = v.shape().to_vec();
        Ok(self.push(op, Self::tensor(shape, out)))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> Result<NodeId, TensorError> {
        self.map(x, Op::Scale(x, factor), |e| e * factor)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.map(x, Op::Relu(x), |e| if e > T::zero() { e } else { T::zero() })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.map(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        self.map(x, Op::Tanh(x), T::tanh)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(x)?;
        let width = *v.shape().last().expect("non-empty shape");
        let mut out = Vec::with_capacity(v.numel());
        for row in v.data().chunks(width) {
            out.extend(softmax_row(row));
        }
        let shape = v.shape().to_vec();
        Ok(self.push(Op::Softmax(x), Self::tensor(shape, out)))
    }

    /// Inverted dropout: survivors are scaled by `1 / (1 - rate)` in
    /// training; inference returns `x` unchanged.
    pub fn dropout(&mut self, x: NodeId, rate: f64) -> Result<NodeId, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidShape {
                op: "dropout",
                shape: self.shape(x)?,
                reason: format!("rate {rate} outside [0, 1)"),
            });
        }
        if !self.is_training() || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let numel = self.value(x)?.numel();
        let mask: Vec<T> = (0..numel)
            .map(|_| {
                if self.rng.gen::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let v = self.value(x)?;
        let out = v.data().iter().zip(&mask).map(|(a, m)| *a * *m).collect();
        let shape = v.shape().to_vec();
        Ok(self.push(Op::Dropout { x, mask }, Self::tensor(shape, out)))
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(x)?;
        let m = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        Ok(self.push(Op::Mean(x), Tensor::scalar(m)))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let s = self.value(x)?.data().iter().copied().sum::<T>();
        Ok(self.push(Op::Sum(x), Tensor::scalar(s)))
    }

    /// Normalizes each last-axis row to unit Euclidean norm. Zero rows pass
    /// through unchanged.
    pub fn l2_normalize(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(x)?;
        let width = *v.shape().last().expect("non-empty shape");
        let mut out = Vec::with_capacity(v.numel());
        for row in v.data().chunks(width) {
            let norm = row.iter().map(|e| *e * *e).sum::<T>().sqrt();
            if norm > T::zero() {
                out.extend(row.iter().map(|e| *e / norm));
            } else {
                out.extend_from_slice(row);
            }
        }
        let shape = v.shape().to_vec();
        Ok(self.push(Op::L2Normalize(x), Self::tensor(shape, out)))
    }

    /// Mean over axis 1 of a `[B, L, C]` tensor, giving `[B, C]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId, TensorError> {
        let v = self.value(x)?;
        let s = v.shape();
        if s.len() != 3 {
            return Err(TensorError::InvalidShape {
                op: "global_avg_pool",
                shape: s.to_vec(),
                reason: "expected [batch, length, channels]".into(),
            });
        }
        let (batch, len, ch) = (s[0], s[1], s[2]);
        let inv = T::of(1.0 / len as f64);
        let mut out = vec![T::zero(); batch * ch];
        for b in 0..batch {
            for t in 0..len {
                let row = &v.data()[(b * len + t) * ch..(b * len + t + 1) * ch];
                for (o, e) in out[b * ch..(b + 1) * ch].iter_mut().zip(row) {
                    *o += *e;
                }
            }
        }
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(Op::GlobalAvgPool(x), Self::tensor(vec![batch, ch], out)))
    }

    /// `x[.., start..start+len, ..]` along `axis`; the axis is kept.
    pub fn slice(
        &mut self,
        x: NodeId,
        axis: usize,
        start: usize,
        len: usize,
    ) -> Result<NodeId, TensorError> {
        let v = self.value(x)?;
        let s = v.shape();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(TensorError::InvalidShape {
                op: "slice",
                shape: s.to_vec(),
                reason: format!("axis {axis} range {start}..{}", start + len),
            });
        }
        let (outer, dim, inner) = split_axis(s, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            out.extend_from_slice(&v.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        Ok(self.push(Op::Slice { x, axis, start }, Self::tensor(shape, out)))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let v = self.value(x)?.clone().reshape(shape.to_vec())?;
        Ok(self.push(Op::Reshape(x), v))
    }

    /// `sum((pred - target)^2) / denom`, shape `[1]`.
    pub fn mse_loss(&mut self, pred: NodeId, target: &[T], denom: T) -> Result<NodeId, TensorError> {
        let v = self.value(pred)?;
        if v.numel() != target.len() {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                left: v.shape().to_vec(),
                right: vec![target.len()],
            });
        }
        let total = v
            .data()
            .iter()
            .zip(target)
            .map(|(p, t)| (*p - *t) * (*p - *t))
            .sum::<T>();
        Ok(self.push(
            Op::Mse {
                pred,
                target: target.to_vec(),
                denom,
            },
            Tensor::scalar(total / denom),
        ))
    }

    /// Softmax cross-entropy over the last axis of `[B, K]` logits, summed
    /// over rows and divided by `denom`.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        denom: T,
    ) -> Result<NodeId, TensorError> {
        let v = self.value(logits)?;
        let s = v.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: s.to_vec(),
                right: vec![labels.len()],
            });
        }
        let classes = s[1];
        let mut total = T::zero();
        for (row, &label) in v.data().chunks(classes).zip(labels) {
            if label >= classes {
                return Err(TensorError::IndexOutOfRange {
                    op: "cross_entropy",
                    index: label,
                    bound: classes,
                });
            }
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|e| (*e - max).exp()).sum::<T>().ln();
            total += lse - row[label];
        }
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                denom,
            },
            Tensor::scalar(total / denom),
        ))
    }

    /// Reverse pass from a scalar node. Returns gradients for every
    /// parameter that the loss depends on; fan-out contributions add up.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss)?;
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut out = Gradients::default();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Param(pid) = node.op {
                out.add(pid, g);
                continue;
            }
            for (target, delta) in self.local_grads(node, &g)? {
                if !self.nodes[target.0].grad {
                    continue;
                }
                match &mut grads[target.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += *d),
                    slot @ None => *slot = Some(delta),
                }
            }
        }
        Ok(out)
    }

    fn local_grads(&self, node: &Node<T>, g: &[T]) -> Result<Vec<(NodeId, Vec<T>)>, TensorError> {
        let out = node.value.as_ref().expect("op node has value");
        Ok(match &node.op {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a)?, self.value(*b)?);
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                let mut out = Vec::with_capacity(2);
                if self.nodes[a.0].grad {
                    out.push((*a, matmul_bt(g, bv.data(), m, n, k)));
                }
                if self.nodes[b.0].grad {
                    out.push((*b, matmul_at(av.data(), g, m, k, n)));
                }
                out
            }
            Op::Conv1d { x, w, b } => {
                let (xv, wv) = (self.value(*x)?, self.value(*w)?);
                let (batch, len, cin) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                let (kernel, cout) = (wv.shape()[0], wv.shape()[2]);
                let pad = kernel / 2;
                let (xd, wd) = (xv.data(), wv.data());
                let mut dx = vec![T::zero(); xd.len()];
                let mut dw = vec![T::zero(); wd.len()];
                let mut db = vec![T::zero(); cout];
                for bi in 0..batch {
                    for t in 0..len {
                        let grow = &g[(bi * len + t) * cout..(bi * len + t + 1) * cout];
                        db.iter_mut().zip(grow).for_each(|(d, e)| *d += *e);
                        for k in 0..kernel {
                            let src = t + k;
                            if src < pad || src - pad >= len {
                                continue;
                            }
                            let xo = (bi * len + src - pad) * cin;
                            for i in 0..cin {
                                let wo = (k * cin + i) * cout;
                                let wrow = &wd[wo..wo + cout];
                                let mut acc = T::zero();
                                for (gv, wv) in grow.iter().zip(wrow) {
                                    acc += *gv * *wv;
                                }
                                dx[xo + i] += acc;
                                let xval = xd[xo + i];
                                for (d, gv) in dw[wo..wo + cout].iter_mut().zip(grow) {
                                    *d += xval * *gv;
                                }
                            }
                        }
                    }
                }
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::Embedding { table, indices, pad } => {
                let tv = self.value(*table)?;
                let dim = tv.shape()[1];
                let mut dt = vec![T::zero(); tv.numel()];
                for (row, &i) in indices.iter().enumerate() {
                    if Some(i) == *pad {
                        continue;
                    }
                    for (d, e) in dt[i * dim..(i + 1) * dim]
                        .iter_mut()
                        .zip(&g[row * dim..(row + 1) * dim])
                    {
                        *d += *e;
                    }
                }
                vec![(*table, dt)]
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(out.shape(), *axis);
                let mut parts: Vec<(NodeId, Vec<T>)> = inputs
                    .iter()
                    .map(|id| Ok((*id, Vec::with_capacity(self.value(*id)?.numel()))))
                    .collect::<Result<_, TensorError>>()?;
                for o in 0..outer {
                    let mut offset = o * total * inner;
                    for (id, buf) in parts.iter_mut() {
                        let block = self.value(*id)?.shape()[*axis] * inner;
                        buf.extend_from_slice(&g[offset..offset + block]);
                        offset += block;
                    }
                }
                parts
            }
            Op::Add(a, b) => {
                let blen = self.value(*b)?.numel();
                let mut db = vec![T::zero(); blen];
                for chunk in g.chunks(blen) {
                    db.iter_mut().zip(chunk).for_each(|(d, e)| *d += *e);
                }
                vec![(*a, g.to_vec()), (*b, db)]
            }
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|e| -*e).collect())],
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a)?.data(), self.value(*b)?.data());
                vec![
                    (*a, g.iter().zip(bv).map(|(e, y)| *e * *y).collect()),
                    (*b, g.iter().zip(av).map(|(e, x)| *e * *x).collect()),
                ]
            }
            Op::Scale(x, f) => vec![(*x, g.iter().map(|e| *e * *f).collect())],
            Op::Relu(x) => {
                let y = out.data();
                vec![(
                    *x,
                    g.iter()
                        .zip(y)
                        .map(|(e, v)| if *v > T::zero() { *e } else { T::zero() })
                        .collect(),
                )]
            }
            Op::Sigmoid(x) => {
                let y = out.data();
                vec![(
                    *x,
                    g.iter().zip(y).map(|(e, s)| *e * *s * (T::one() - *s)).collect(),
                )]
            }
            Op::Tanh(x) => {
                let y = out.data();
                vec![(
                    *x,
                    g.iter().zip(y).map(|(e, t)| *e * (T::one() - *t * *t)).collect(),
                )]
            }
            Op::Softmax(x) => {
                let width = *out.shape().last().expect("shape");
                let mut dx = Vec::with_capacity(g.len());
                for (grow, yrow) in g.chunks(width).zip(out.data().chunks(width)) {
                    let dot = grow.iter().zip(yrow).map(|(a, b)| *a * *b).sum::<T>();
                    dx.extend(grow.iter().zip(yrow).map(|(e, y)| *y * (*e - dot)));
                }
                vec![(*x, dx)]
            }
            Op::Dropout { x, mask } => {
                vec![(*x, g.iter().zip(mask).map(|(e, m)| *e * *m).collect())]
            }
            Op::Mean(x) => {
                let n = self.value(*x)?.numel();
                vec![(*x, vec![g[0] / T::of(n as f64); n])]
            }
            Op::Sum(x) => {
                let n = self.value(*x)?.numel();
                vec![(*x, vec![g[0]; n])]
            }
            Op::L2Normalize(x) => {
                let xv = self.value(*x)?;
                let width = *out.shape().last().expect("shape");
                let mut dx = Vec::with_capacity(g.len());
                for ((grow, yrow), xrow) in g
                    .chunks(width)
                    .zip(out.data().chunks(width))
                    .zip(xv.data().chunks(width))
                {
                    let norm = xrow.iter().map(|e| *e * *e).sum::<T>().sqrt();
                    if norm > T::zero() {
                        let dot = grow.iter().zip(yrow).map(|(a, b)| *a * *b).sum::<T>();
                        dx.extend(grow.iter().zip(yrow).map(|(e, y)| (*e - *y * dot) / norm));
                    } else {
                        dx.extend(std::iter::repeat(T::zero()).take(width));
                    }
                }
                vec![(*x, dx)]
            }
            Op::GlobalAvgPool(x) => {
                let s = self.value(*x)?.shape().to_vec();
                let (batch, len, ch) = (s[0], s[1], s[2]);
                let inv = T::of(1.0 / len as f64);
                let mut dx = Vec::with_capacity(batch * len * ch);
                for b in 0..batch {
                    for _ in 0..len {
                        dx.extend(g[b * ch..(b + 1) * ch].iter().map(|e| *e * inv));
                    }
                }
                vec![(*x, dx)]
            }
            Op::Slice { x, axis, start } => {
                let xv = self.value(*x)?;
                let (outer, dim, inner) = split_axis(xv.shape(), *axis);
                let len = out.shape()[*axis];
                let mut dx = vec![T::zero(); xv.numel()];
                for o in 0..outer {
                    let base = o * dim * inner + start * inner;
                    dx[base..base + len * inner]
                        .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, dx)]
            }
            Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Mse {
                pred,
                target,
                denom,
            } => {
                let p = self.value(*pred)?.data();
                let two = T::of(2.0);
                vec![(
                    *pred,
                    p.iter()
                        .zip(target)
                        .map(|(a, b)| g[0] * two * (*a - *b) / *denom)
                        .collect(),
                )]
            }
            Op::CrossEntropy {
                logits,
                labels,
                denom,
            } => {
                let lv = self.value(*logits)?;
                let classes = lv.shape()[1];
                let mut dx = Vec::with_capacity(lv.numel());
                for (row, &label) in lv.data().chunks(classes).zip(labels) {
                    for (c, p) in softmax_row(row).into_iter().enumerate() {
                        let onehot = if c == label { T::one() } else { T::zero() };
                        dx.push(g[0] * (p - onehot) / *denom);
                    }
                }
                vec![(*logits, dx)]
            }
        })
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_row<T: Scalar>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|e| (*e - max).exp()).collect();
    let total = exps.iter().copied().sum::<T>();
    exps.into_iter().map(|e| e / total).collect()
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
fn matmul_bt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut bt = vec![T::zero(); b.len()];
    for r in 0..n {
        for c in 0..k {
            bt[c * n + r] = b[r * k + c];
        }
    }
    matmul_raw(a, &bt, m, k, n)
}

/// `aᵀ · b` for `a: [m, k]`, `b: [m, n]`.
fn matmul_at<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, bv) in out[p * n..(p + 1) * n].iter_mut().zip(brow) {
                *o += av * *bv;
            }
        }
    }
    out
}

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            for (o, bv) in orow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * *bv;
            }
        }
    }
    out
}
