//! Append-only computation graph with a single reverse sweep.
//!
//! Nodes are stored in creation order, and every op only references nodes
//! that already exist, so insertion order is a topological order and
//! `backward` simply walks the node list in reverse.

use std::fmt;

use super::kernels::{self, ConvDims};
use super::tensor::{Real, Tensor};
use crate::error::{AmfError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive op kinds, in the order the gradient suite reports them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    MatMul,
    AddBias,
    Conv2d,
    Relu,
    MaxPool2,
    Reshape,
    Concat,
    Column,
    ScaleRows,
    Softmax,
    CrossEntropy,
    Mul,
    Sum,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Leaf => "leaf",
            Self::MatMul => "matmul",
            Self::AddBias => "add_bias",
            Self::Conv2d => "conv2d",
            Self::Relu => "relu",
            Self::MaxPool2 => "maxpool2",
            Self::Reshape => "reshape",
            Self::Concat => "concat",
            Self::Column => "column",
            Self::ScaleRows => "scale_rows",
            Self::Softmax => "softmax",
            Self::CrossEntropy => "cross_entropy",
            Self::Mul => "mul",
            Self::Sum => "sum",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::DIFFERENTIABLE
            .iter()
            .copied()
            .find(|k| k.name() == name)
    }

    /// Every op with a backward rule.
    pub const DIFFERENTIABLE: [OpKind; 13] = [
        Self::MatMul,
        Self::AddBias,
        Self::Conv2d,
        Self::Relu,
        Self::MaxPool2,
        Self::Reshape,
        Self::Concat,
        Self::Column,
        Self::ScaleRows,
        Self::Softmax,
        Self::CrossEntropy,
        Self::Mul,
        Self::Sum,
    ];
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dims: ConvDims,
    },
    Relu(NodeId),
    MaxPool2 {
        x: NodeId,
        argmax: Vec<usize>,
    },
    Reshape(NodeId),
    Concat(Vec<NodeId>),
    Column(NodeId, usize),
    ScaleRows(NodeId, NodeId),
    Softmax(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    Mul(NodeId, NodeId),
    Sum(NodeId),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::MatMul(..) => OpKind::MatMul,
            Op::AddBias(..) => OpKind::AddBias,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::Relu(_) => OpKind::Relu,
            Op::MaxPool2 { .. } => OpKind::MaxPool2,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Concat(_) => OpKind::Concat,
            Op::Column(..) => OpKind::Column,
            Op::ScaleRows(..) => OpKind::ScaleRows,
            Op::Softmax(_) => OpKind::Softmax,
            Op::CrossEntropy { .. } => OpKind::CrossEntropy,
            Op::Mul(..) => OpKind::Mul,
            Op::Sum(_) => OpKind::Sum,
        }
    }
}

#[derive(Debug)]
struct Node<T: Real> {
    op: Op,
    value: Tensor<T>,
    needs_grad: bool,
}

#[derive(Debug)]
pub struct Graph<T: Real = f32> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2(t: &Tensor<impl Real>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        &[r, c] => Ok((r, c)),
        s => Err(AmfError::shape(format!(
            "{what}: expected rank 2, got {s:?}"
        ))),
    }
}

fn dims4(t: &Tensor<impl Real>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        s => Err(AmfError::shape(format!(
            "{what}: expected rank 4, got {s:?}"
        ))),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Test hook: makes the backward rule of `kind` return 1.5× the true
    /// gradient so the checker can be shown to catch a broken rule.
    pub fn inject_fault(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> NodeId {
        let needs_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::ScaleRows(a, b) | Op::Mul(a, b) => {
                self.needs(*a) || self.needs(*b)
            }
            Op::Conv2d { x, w, b, .. } => self.needs(*x) || self.needs(*w) || self.needs(*b),
            Op::Relu(x)
            | Op::Reshape(x)
            | Op::Column(x, _)
            | Op::Softmax(x)
            | Op::Sum(x)
            | Op::MaxPool2 { x, .. } => self.needs(*x),
            Op::Concat(parts) => parts.iter().any(|p| self.needs(*p)),
            Op::CrossEntropy { logits, .. } => self.needs(*logits),
        };
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AmfError::usage(format!("node {} does not exist", id.0)))
        }
    }

    /// A constant input; gradients are not propagated into it.
    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Leaf, t)
    }

    /// A trainable leaf; receives a gradient on `backward`.
    pub fn param(&mut self, t: Tensor<T>) -> NodeId {
        let id = self.push(Op::Leaf, t);
        self.nodes[id.0].needs_grad = true;
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    /// Gradient accumulated at `id` by the last `backward`, if reached.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.nodes[id.0].value.grad()
    }

    /// Gradient at `id` as a tensor, zero-filled when the node was not reached.
    pub fn grad_or_zeros(&self, id: NodeId) -> Tensor<T> {
        let v = &self.nodes[id.0].value;
        let data = match v.grad() {
            Some(g) => g.to_vec(),
            None => vec![T::default(); v.len()],
        };
        Tensor::from_vec(v.shape(), data).expect("gradient matches value shape")
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (r, k) = dims2(self.value(a), "matmul lhs")?;
        let (k2, c) = dims2(self.value(b), "matmul rhs")?;
        if k != k2 {
            return Err(AmfError::shape(format!(
                "matmul inner dims disagree: [{r}x{k}]·[{k2}x{c}]"
            )));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), r, k, c);
        let t = Tensor::from_vec(&[r, c], out)?;
        Ok(self.push(Op::MatMul(a, b), t))
    }

    /// `x[N,d] + b[d]` broadcast over rows.
    pub fn add_bias(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(b)?;
        let (n, d) = dims2(self.value(x), "add_bias input")?;
        if self.value(b).shape() != [d] {
            return Err(AmfError::shape(format!(
                "bias {:?} does not match width {d}",
                self.value(b).shape()
            )));
        }
        let bias = self.value(b).data();
        let out = self
            .value(x)
            .data()
            .chunks(d)
            .flat_map(|row| {
                row.iter()
                    .zip(bias)
                    .map(|(&v, &bb)| T::from_f64(v.to_f64() + bb.to_f64()))
            })
            .collect();
        let t = Tensor::from_vec(&[n, d], out)?;
        Ok(self.push(Op::AddBias(x, b), t))
    }

    /// 3×3, stride 1, zero padding 1.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let [n, c, h, wd] = dims4(self.value(x), "conv2d input")?;
        let [f, wc, kh, kw] = dims4(self.value(w), "conv2d weight")?;
        if kh != 3 || kw != 3 {
            return Err(AmfError::shape(format!(
                "conv2d kernel must be 3x3, got {kh}x{kw}"
            )));
        }
        if wc != c {
            return Err(AmfError::shape(format!(
                "conv2d channel mismatch: input has {c}, weight expects {wc}"
            )));
        }
        if self.value(b).shape() != [f] {
            return Err(AmfError::shape(format!(
                "conv2d bias {:?} does not match {f} filters",
                self.value(b).shape()
            )));
        }
        let dims = ConvDims { n, c, f, h, w: wd };
        let out = kernels::conv2d(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            dims,
        );
        let t = Tensor::from_vec(&[n, f, h, wd], out)?;
        Ok(self.push(Op::Conv2d { x, w, b, dims }, t))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let t = self.value(x).map(|v| v.max(0.0));
        Ok(self.push(Op::Relu(x), t))
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let [n, c, h, w] = dims4(self.value(x), "maxpool2 input")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(AmfError::shape(format!(
                "maxpool2 needs even spatial dims, got {h}x{w}"
            )));
        }
        let (out, argmax) = kernels::maxpool2(self.value(x).data(), n * c, h, w);
        let t = Tensor::from_vec(&[n, c, h / 2, w / 2], out)?;
        Ok(self.push(Op::MaxPool2 { x, argmax }, t))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let t = Tensor::from_vec(self.value(x).shape(), self.value(x).data().to_vec())?
            .reshape(shape)?;
        Ok(self.push(Op::Reshape(x), t))
    }

    /// `[N, ...] → [N, rest]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let shape = self.value(x).shape();
        let n = shape[0];
        let rest = shape[1..].iter().product::<usize>().max(1);
        self.reshape(x, &[n, rest])
    }

    /// Column-wise concatenation of `[N, d_i]` parts in the given order.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(AmfError::shape("concat of zero parts"));
        }
        for &p in parts {
            self.check(p)?;
        }
        let widths = parts
            .iter()
            .map(|&p| dims2(self.value(p), "concat part"))
            .collect::<Result<Vec<_>>>()?;
        let n = widths[0].0;
        if let Some((_, (m, _))) = widths.iter().enumerate().find(|(_, (m, _))| *m != n) {
            return Err(AmfError::shape(format!(
                "concat batch mismatch: {n} vs {m}"
            )));
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut out = Vec::with_capacity(n * total);
        for row in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(row));
            }
        }
        let t = Tensor::from_vec(&[n, total], out)?;
        Ok(self.push(Op::Concat(parts.to_vec()), t))
    }

    /// Column `col` of `[N, k]` as `[N, 1]`.
    pub fn column(&mut self, x: NodeId, col: usize) -> Result<NodeId> {
        self.check(x)?;
        let (n, k) = dims2(self.value(x), "column input")?;
        if col >= k {
            return Err(AmfError::shape(format!(
                "column {col} out of range for width {k}"
            )));
        }
        let v = self.value(x).data();
        let out = (0..n).map(|r| v[r * k + col]).collect();
        let t = Tensor::from_vec(&[n, 1], out)?;
        Ok(self.push(Op::Column(x, col), t))
    }

    /// `z[s, j] = h[s] · m[s, j]`.
    pub fn scale_rows(&mut self, m: NodeId, h: NodeId) -> Result<NodeId> {
        self.check(m)?;
        self.check(h)?;
        let (n, d) = dims2(self.value(m), "scale_rows latent")?;
        let (hn, hc) = dims2(self.value(h), "scale_rows weight")?;
        if hn != n || hc != 1 {
            return Err(AmfError::shape(format!(
                "scale_rows weight [{hn}x{hc}] does not match batch {n}"
            )));
        }
        let hv = self.value(h).data();
        let out = self
            .value(m)
            .data()
            .chunks(d)
            .zip(hv)
            .flat_map(|(row, &s)| {
                let s = s.to_f64();
                row.iter().map(move |&v| T::from_f64(s * v.to_f64()))
            })
            .collect();
        let t = Tensor::from_vec(&[n, d], out)?;
        Ok(self.push(Op::ScaleRows(m, h), t))
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let (n, k) = dims2(self.value(x), "softmax input")?;
        let p = kernels::softmax_rows(&self.value(x).to_f64_vec(), n, k);
        let t = Tensor::from_f64s(&[n, k], &p)?;
        Ok(self.push(Op::Softmax(x), t))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`,
    /// computed through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check(logits)?;
        let (n, c) = dims2(self.value(logits), "cross_entropy logits")?;
        if labels.len() != n {
            return Err(AmfError::shape(format!(
                "{} labels for a batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(AmfError::Data(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let x = self.value(logits).to_f64_vec();
        let lse = kernels::logsumexp_rows(&x, n, c);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| lse[r] - x[r * c + l])
            .sum::<f64>()
            / n as f64;
        let probs = kernels::softmax_rows(&x, n, c);
        let t = Tensor::scalar(loss);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            t,
        ))
    }

    /// Elementwise product of equal-shape tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(AmfError::shape(format!(
                "mul shape mismatch {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| T::from_f64(x.to_f64() * y.to_f64()))
            .collect();
        let t = Tensor::from_vec(va.shape(), out)?;
        Ok(self.push(Op::Mul(a, b), t))
    }

    /// Sum of all elements as a `[1]` scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s: f64 = self.value(x).data().iter().map(|v| v.to_f64()).sum();
        Ok(self.push(Op::Sum(x), Tensor::scalar(s)))
    }

    /// Hash of every piecewise decision taken in the forward pass (ReLU
    /// signs and max-pool selections). Two evaluations with equal
    /// signatures lie on the same smooth piece of the function.
    pub fn decision_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for v in self.nodes[x.0].value.data() {
                        feed(u64::from(v.to_f64() > 0.0));
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.iter().for_each(|&a| feed(a as u64)),
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a scalar node. Gradients accumulate additively in
    /// each node's gradient slot; nodes created after `loss` are ignored.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(AmfError::usage(format!(
                "backward needs a scalar loss, node {} has shape {:?}",
                loss.0,
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.value.take_grad();
        }
        self.nodes[loss.0].value.set_grad(vec![T::from_f64(1.0)])?;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(upstream) = self.nodes[i].value.grad().map(<[T]>::to_vec) else {
                continue;
            };
            let mut contributions = self.local_grads(i, &upstream);
            if self.fault == Some(self.nodes[i].op.kind()) {
                for (_, g) in &mut contributions {
                    g.iter_mut()
                        .for_each(|v| *v = T::from_f64(1.5 * v.to_f64()));
                }
            }
            for (target, g) in contributions {
                if self.nodes[target.0].needs_grad {
                    self.nodes[target.0].value.accumulate_grad(&g);
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, up: &[T]) -> Vec<(NodeId, Vec<T>)> {
        let node = &self.nodes[i];
        let val = |id: NodeId| &self.nodes[id.0].value;
        let needs = |id: NodeId| self.nodes[id.0].needs_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let c = val(*b).shape()[1];
                if needs(*a) {
                    out.push((*a, kernels::matmul_grad_a(up, val(*b).data(), r, k, c)));
                }
                if needs(*b) {
                    out.push((*b, kernels::matmul_grad_b(val(*a).data(), up, r, k, c)));
                }
            }
            Op::AddBias(x, b) => {
                let d = val(*b).len();
                if needs(*x) {
                    out.push((*x, up.to_vec()));
                }
                if needs(*b) {
                    let mut acc = vec![0.0f64; d];
                    for row in up.chunks(d) {
                        acc.iter_mut().zip(row).for_each(|(a, &g)| *a += g.to_f64());
                    }
                    out.push((*b, acc.into_iter().map(T::from_f64).collect()));
                }
            }
            Op::Conv2d { x, w, b, dims } => {
                if needs(*x) {
                    out.push((*x, kernels::conv2d_grad_x(up, val(*w).data(), *dims)));
                }
                if needs(*w) || needs(*b) {
                    let (dw, db) = kernels::conv2d_grad_params(val(*x).data(), up, *dims);
                    out.push((*w, dw));
                    out.push((*b, db));
                }
            }
            Op::Relu(x) => {
                let g = val(*x)
                    .data()
                    .iter()
                    .zip(up)
                    .map(|(&v, &g)| if v.to_f64() > 0.0 { g } else { T::default() })
                    .collect();
                out.push((*x, g));
            }
            Op::MaxPool2 { x, argmax } => {
                let mut g = vec![T::default(); val(*x).len()];
                for (&a, &u) in argmax.iter().zip(up) {
                    g[a] = T::from_f64(g[a].to_f64() + u.to_f64());
                }
                out.push((*x, g));
            }
            Op::Reshape(x) => out.push((*x, up.to_vec())),
            Op::Concat(parts) => {
                let n = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).shape()[1];
                    let mut g = Vec::with_capacity(n * w);
                    for row in 0..n {
                        g.extend_from_slice(&up[row * total + offset..row * total + offset + w]);
                    }
                    offset += w;
                    out.push((p, g));
                }
            }
            Op::Column(x, col) => {
                let k = val(*x).shape()[1];
                let mut g = vec![T::default(); val(*x).len()];
                for (r, &u) in up.iter().enumerate() {
                    g[r * k + col] = u;
                }
                out.push((*x, g));
            }
            Op::ScaleRows(m, h) => {
                let d = val(*m).shape()[1];
                let hv = val(*h).data();
                if needs(*m) {
                    let g = up
                        .chunks(d)
                        .zip(hv)
                        .flat_map(|(row, &s)| {
                            let s = s.to_f64();
                            row.iter().map(move |&u| T::from_f64(s * u.to_f64()))
                        })
                        .collect();
                    out.push((*m, g));
                }
                if needs(*h) {
                    let g = up
                        .chunks(d)
                        .zip(val(*m).data().chunks(d))
                        .map(|(urow, mrow)| {
                            T::from_f64(
                                urow.iter()
                                    .zip(mrow)
                                    .fold(0.0, |s, (&u, &v)| s + u.to_f64() * v.to_f64()),
                            )
                        })
                        .collect();
                    out.push((*h, g));
                }
            }
            Op::Softmax(x) => {
                let k = node.value.shape()[1];
                let y = node.value.data();
                let g = y
                    .chunks(k)
                    .zip(up.chunks(k))
                    .flat_map(|(yr, ur)| {
                        let dot = yr
                            .iter()
                            .zip(ur)
                            .fold(0.0, |s, (&a, &b)| s + a.to_f64() * b.to_f64());
                        yr.iter()
                            .zip(ur)
                            .map(move |(&a, &b)| T::from_f64(a.to_f64() * (b.to_f64() - dot)))
                    })
                    .collect();
                out.push((*x, g));
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let c = probs.len() / n;
                let scale = up[0].to_f64() / n as f64;
                let mut g: Vec<T> = Vec::with_capacity(probs.len());
                for (r, &l) in labels.iter().enumerate() {
                    for j in 0..c {
                        let onehot = if j == l { 1.0 } else { 0.0 };
                        g.push(T::from_f64((probs[r * c + j] - onehot) * scale));
                    }
                }
                out.push((*logits, g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                let prod = |x: &[T]| -> Vec<T> {
                    x.iter()
                        .zip(up)
                        .map(|(&v, &u)| T::from_f64(v.to_f64() * u.to_f64()))
                        .collect()
                };
                if needs(*a) {
                    out.push((*a, prod(vb)));
                }
                if needs(*b) {
                    out.push((*b, prod(va)));
                }
            }
            Op::Sum(x) => out.push((*x, vec![up[0]; val(*x).len()])),
        }
        out
    }
}
