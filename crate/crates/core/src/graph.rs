//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is an append-only tape: every operation records its parents
//! and enough metadata to run the reverse pass. Node ids are topologically
//! ordered by construction, so the backward pass is a single reverse sweep
//! that visits each node exactly once.
//!
//! Broadcasting is restricted to leading-dimension expansion: the right-hand
//! operand of `add`/`mul` may have a shape that is a suffix of the left-hand
//! shape. Any other mismatch is a dimension error.

use crate::error::{McvqaError, Result};
use crate::scalar::Scalar;
use crate::tensor::{check_axis, lanes, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op<F> {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Affine { x: NodeId, mul: F, add: F },
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax { x: NodeId, axis: usize },
    CrossEntropy { probs: NodeId, target: usize },
    MaxPool { x: NodeId, axis: usize, argmax: Vec<usize> },
    Max2(NodeId, NodeId),
    SumAxis { x: NodeId, axis: usize },
    Mean { x: NodeId, axis: usize },
    Transpose(NodeId),
    Concat { axis: usize, parts: Vec<NodeId> },
    Slice { x: NodeId, axis: usize, start: usize, len: usize },
    Embed { table: NodeId, ids: Vec<usize> },
    GradScale { x: NodeId, factor: F },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape.
pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`NodeId`].
pub struct Grads<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Grads<F> {
    /// Gradient of the root w.r.t. the given node, if it required grad.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads[id.0].as_ref()
    }
}

const CE_CLAMP: f64 = 1e-12;

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn var(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<F>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape().len() != 2 || vb.shape().len() != 2 || va.cols() != vb.rows() {
            return Err(McvqaError::Dimension(format!(
                "matmul shape mismatch: {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let out = matmul_raw(va, vb);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = broadcast_zip(self.value(a), self.value(b), "add", |x, y| x + y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = broadcast_zip(self.value(a), self.value(b), "mul", |x, y| x * y)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise `mul * x + add` with scalar constants.
    pub fn affine(&mut self, x: NodeId, mul: F, add: F) -> NodeId {
        let out = self.value(x).map(|v| mul * v + add);
        let rg = self.requires_grad(x);
        self.push(out, Op::Affine { x, mul, add }, rg)
    }

    pub fn scale(&mut self, x: NodeId, factor: F) -> NodeId {
        self.affine(x, factor, F::zero())
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.requires_grad(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let one = F::one();
        let out = self.value(x).map(|v| one / (one + (-v).exp()));
        let rg = self.requires_grad(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Numerically stabilized softmax along `axis`.
    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let vx = self.value(x);
        check_axis(vx.shape(), axis)?;
        let out = softmax_raw(vx, axis);
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Softmax { x, axis }, rg))
    }

    /// `-log(probs[target])`, with probabilities clamped at 1e-12.
    pub fn cross_entropy(&mut self, probs: NodeId, target: usize) -> Result<NodeId> {
        let vp = self.value(probs);
        if target >= vp.numel() {
            return Err(McvqaError::Dimension(format!(
                "cross_entropy target {} out of range for {} probabilities",
                target,
                vp.numel()
            )));
        }
        let p = vp.data()[target];
        let clamp = F::from_f64_lossy(CE_CLAMP);
        let p = if p <= F::zero() {
            log::warn!("cross_entropy: non-positive probability {p} clamped to {CE_CLAMP}");
            clamp
        } else {
            p.max(clamp)
        };
        let out = Tensor::scalar(-p.ln());
        let rg = self.requires_grad(probs);
        Ok(self.push(out, Op::CrossEntropy { probs, target }, rg))
    }

    /// Max over `axis`; gradient flows to the first maximal index of each lane.
    pub fn max_pool(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let vx = self.value(x);
        check_axis(vx.shape(), axis)?;
        let len = vx.shape()[axis];
        if len == 0 {
            return Err(McvqaError::Dimension(format!(
                "max_pool over empty axis {} of shape {:?}",
                axis,
                vx.shape()
            )));
        }
        let mut out_shape: Vec<usize> = vx.shape().to_vec();
        out_shape.remove(axis);
        let mut out = Vec::with_capacity(vx.numel() / len);
        let mut argmax = Vec::with_capacity(out.capacity());
        for (base, stride) in lanes(vx.shape(), axis) {
            let mut best = vx.data()[base];
            let mut best_k = 0usize;
            for k in 1..len {
                let v = vx.data()[base + k * stride];
                if v > best {
                    best = v;
                    best_k = k;
                }
            }
            out.push(best);
            argmax.push(best_k);
        }
        let out = Tensor::new(out_shape, out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::MaxPool { x, axis, argmax }, rg))
    }

    /// Elementwise max of two same-shape tensors; ties route gradient to `a`.
    pub fn max2(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(McvqaError::Dimension(format!(
                "max2 shape mismatch: {:?} vs {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| if x >= y { x } else { y })
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Max2(a, b), rg))
    }

    pub fn sum_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let out = reduce_axis(self.value(x), axis, false)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::SumAxis { x, axis }, rg))
    }

    pub fn mean(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let out = reduce_axis(self.value(x), axis, true)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Mean { x, axis }, rg))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let vx = self.value(x);
        if vx.shape().len() != 2 {
            return Err(McvqaError::Dimension(format!(
                "transpose expects rank 2, got {:?}",
                vx.shape()
            )));
        }
        let out = transpose_raw(vx);
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::Transpose(x), rg))
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(McvqaError::Dimension("concat of zero tensors".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        check_axis(&first, axis)?;
        let mut axis_total = 0usize;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != first.len()
                || s.iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(McvqaError::Dimension(format!(
                    "concat shape mismatch along axis {}: {:?} vs {:?}",
                    axis, first, s
                )));
            }
            axis_total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;
        let inner: usize = first[axis + 1..].iter().product();
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let v = self.value(p);
                let block = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(out_shape, data)?;
        let rg = self.any_grad(parts);
        Ok(self.push(
            out,
            Op::Concat {
                axis,
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let vx = self.value(x);
        check_axis(vx.shape(), axis)?;
        if start + len > vx.shape()[axis] {
            return Err(McvqaError::Dimension(format!(
                "slice [{start}..{}] out of range for axis {} of shape {:?}",
                start + len,
                axis,
                vx.shape()
            )));
        }
        let mut out_shape = vx.shape().to_vec();
        out_shape[axis] = len;
        let inner: usize = vx.shape()[axis + 1..].iter().product();
        let outer: usize = vx.shape()[..axis].iter().product();
        let src_block = vx.shape()[axis] * inner;
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            let base = o * src_block + start * inner;
            data.extend_from_slice(&vx.data()[base..base + len * inner]);
        }
        let out = Tensor::new(out_shape, data)?;
        let rg = self.requires_grad(x);
        Ok(self.push(
            out,
            Op::Slice {
                x,
                axis,
                start,
                len,
            },
            rg,
        ))
    }

    /// Row gather from a 2-d table; backward scatter-adds into the table.
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = self.value(table);
        if vt.shape().len() != 2 {
            return Err(McvqaError::Dimension(format!(
                "embed table must be rank 2, got {:?}",
                vt.shape()
            )));
        }
        let (rows, d) = (vt.rows(), vt.cols());
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(McvqaError::Vocabulary(format!(
                "token id {bad} out of range for table with {rows} rows"
            )));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(&vt.data()[id * d..(id + 1) * d]);
        }
        let out = Tensor::matrix(ids.len(), d, data)?;
        let rg = self.requires_grad(table);
        Ok(self.push(
            out,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    /// Identity forward; backward multiplies the incoming gradient by `factor`.
    /// `factor = -1` is gradient reversal, `factor = 0` detaches.
    pub fn grad_scale(&mut self, x: NodeId, factor: F) -> NodeId {
        let out = self.value(x).clone();
        let rg = self.requires_grad(x);
        self.push(out, Op::GradScale { x, factor }, rg)
    }

    /// Mutable access to a leaf's stored value, for in-place re-evaluation.
    pub fn leaf_data_mut(&mut self, id: NodeId) -> &mut [F] {
        assert!(
            matches!(self.nodes[id.0].op, Op::Leaf),
            "leaf_data_mut on a non-leaf node"
        );
        self.nodes[id.0].value.data_mut()
    }

    /// Recompute every non-leaf value in id (topological) order after leaf
    /// values changed, reusing the existing graph structure. This is the
    /// fast path for repeated finite-difference probes: no rebuilding, no
    /// revalidation — shapes are unchanged by construction.
    pub fn refresh(&mut self) {
        for idx in 0..self.nodes.len() {
            let op = self.nodes[idx].op.clone();
            let value = match &op {
                Op::Leaf => continue,
                Op::MatMul(a, b) => matmul_raw(self.value(*a), self.value(*b)),
                Op::Add(a, b) => {
                    broadcast_zip(self.value(*a), self.value(*b), "add", |x, y| x + y)
                        .expect("shapes validated at build")
                }
                Op::Mul(a, b) => {
                    broadcast_zip(self.value(*a), self.value(*b), "mul", |x, y| x * y)
                        .expect("shapes validated at build")
                }
                Op::Affine { x, mul, add } => {
                    let (m, a) = (*mul, *add);
                    self.value(*x).map(|v| m * v + a)
                }
                Op::Tanh(x) => self.value(*x).map(|v| v.tanh()),
                Op::Sigmoid(x) => {
                    let one = F::one();
                    self.value(*x).map(|v| one / (one + (-v).exp()))
                }
                Op::Softmax { x, axis } => softmax_raw(self.value(*x), *axis),
                Op::CrossEntropy { probs, target } => {
                    let p = self.value(*probs).data()[*target];
                    let clamp = F::from_f64_lossy(CE_CLAMP);
                    let p = if p <= F::zero() { clamp } else { p.max(clamp) };
                    Tensor::scalar(-p.ln())
                }
                Op::MaxPool { x, axis, .. } => {
                    let vx = self.value(*x);
                    let len = vx.shape()[*axis];
                    let mut out_shape = vx.shape().to_vec();
                    out_shape.remove(*axis);
                    let mut out = Vec::with_capacity(vx.numel() / len);
                    let mut argmax = Vec::with_capacity(out.capacity());
                    for (base, stride) in lanes(vx.shape(), *axis) {
                        let mut best = vx.data()[base];
                        let mut best_k = 0usize;
                        for k in 1..len {
                            let v = vx.data()[base + k * stride];
                            if v > best {
                                best = v;
                                best_k = k;
                            }
                        }
                        out.push(best);
                        argmax.push(best_k);
                    }
                    if let Op::MaxPool { argmax: stored, .. } = &mut self.nodes[idx].op {
                        *stored = argmax;
                    }
                    Tensor::new(out_shape, out).expect("shape validated at build")
                }
                Op::Max2(a, b) => zip_map(self.value(*a), self.value(*b), |x, y| {
                    if x >= y {
                        x
                    } else {
                        y
                    }
                }),
                Op::SumAxis { x, axis } => {
                    reduce_axis(self.value(*x), *axis, false).expect("validated at build")
                }
                Op::Mean { x, axis } => {
                    reduce_axis(self.value(*x), *axis, true).expect("validated at build")
                }
                Op::Transpose(x) => transpose_raw(self.value(*x)),
                Op::Concat { axis, parts } => {
                    let first = self.value(parts[0]).shape().to_vec();
                    let inner: usize = first[axis + 1..].iter().product();
                    let outer: usize = first[..*axis].iter().product();
                    let mut data = Vec::with_capacity(self.nodes[idx].value.numel());
                    for o in 0..outer {
                        for &p in parts {
                            let v = self.value(p);
                            let block = v.shape()[*axis] * inner;
                            data.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
                        }
                    }
                    Tensor::new(self.nodes[idx].value.shape().to_vec(), data)
                        .expect("shape validated at build")
                }
                Op::Slice {
                    x,
                    axis,
                    start,
                    len,
                } => {
                    let vx = self.value(*x);
                    let inner: usize = vx.shape()[axis + 1..].iter().product();
                    let outer: usize = vx.shape()[..*axis].iter().product();
                    let src_block = vx.shape()[*axis] * inner;
                    let mut data = Vec::with_capacity(len * inner * outer);
                    for o in 0..outer {
                        let base = o * src_block + start * inner;
                        data.extend_from_slice(&vx.data()[base..base + len * inner]);
                    }
                    Tensor::new(self.nodes[idx].value.shape().to_vec(), data)
                        .expect("shape validated at build")
                }
                Op::Embed { table, ids } => {
                    let vt = self.value(*table);
                    let d = vt.cols();
                    let mut data = Vec::with_capacity(ids.len() * d);
                    for &id in ids {
                        data.extend_from_slice(&vt.data()[id * d..(id + 1) * d]);
                    }
                    Tensor::matrix(ids.len(), d, data).expect("shape validated at build")
                }
                Op::GradScale { x, .. } => self.value(*x).clone(),
            };
            self.nodes[idx].value = value;
        }
    }

    /// Reverse sweep from a scalar root. Each node is visited exactly once.
    pub fn backward(&self, root: NodeId) -> Result<Grads<F>> {
        if self.value(root).numel() != 1 {
            return Err(McvqaError::Dimension(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(
            self.value(root).shape().to_vec(),
            F::one(),
        ));
        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(gout);
                continue;
            }
            self.accumulate_parents(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        Ok(Grads { grads })
    }

    fn accumulate_parents(&self, i: usize, gout: &Tensor<F>, grads: &mut [Option<Tensor<F>>]) {
        let node = &self.nodes[i];
        let mut acc = |id: NodeId, g: Tensor<F>| {
            if !self.nodes[id.0].requires_grad {
                return;
            }
            match &mut grads[id.0] {
                Some(existing) => {
                    for (e, v) in existing.data_mut().iter_mut().zip(g.data()) {
                        *e = *e + *v;
                    }
                }
                slot => {
                    *slot = Some(g);
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                // dL/da = gout . b^T ; dL/db = a^T . gout
                let bt = transpose_raw(vb);
                let at = transpose_raw(va);
                acc(*a, matmul_raw(gout, &bt));
                acc(*b, matmul_raw(&at, gout));
            }
            Op::Add(a, b) => {
                acc(*a, gout.clone());
                acc(*b, reduce_to_shape(gout, self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = broadcast_zip(gout, vb, "mul-bwd", |g, y| g * y)
                    .expect("forward validated shapes");
                acc(*a, ga);
                let mut gb_full = gout.clone();
                for (k, g) in gb_full.data_mut().iter_mut().enumerate() {
                    *g = *g * va.data()[k];
                }
                acc(*b, reduce_to_shape(&gb_full, vb.shape()));
            }
            Op::Affine { x, mul, .. } => {
                acc(*x, gout.map(|g| g * *mul));
            }
            Op::Tanh(x) => {
                let y = &node.value;
                let g = zip_map(gout, y, |g, y| g * (F::one() - y * y));
                acc(*x, g);
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let g = zip_map(gout, y, |g, y| g * y * (F::one() - y));
                acc(*x, g);
            }
            Op::Softmax { x, axis } => {
                let y = &node.value;
                let mut g = Tensor::zeros(y.shape().to_vec());
                let len = y.shape()[*axis];
                for (base, stride) in lanes(y.shape(), *axis) {
                    let mut dot = F::zero();
                    for k in 0..len {
                        let idx = base + k * stride;
                        dot = dot + gout.data()[idx] * y.data()[idx];
                    }
                    for k in 0..len {
                        let idx = base + k * stride;
                        g.data_mut()[idx] = y.data()[idx] * (gout.data()[idx] - dot);
                    }
                }
                acc(*x, g);
            }
            Op::CrossEntropy { probs, target } => {
                let vp = self.value(*probs);
                let clamp = F::from_f64_lossy(CE_CLAMP);
                let p = vp.data()[*target].max(clamp);
                let mut g = Tensor::zeros(vp.shape().to_vec());
                g.data_mut()[*target] = -gout.item() / p;
                acc(*probs, g);
            }
            Op::MaxPool { x, axis, argmax } => {
                let vx = self.value(*x);
                let mut g = Tensor::zeros(vx.shape().to_vec());
                for (lane_idx, (base, stride)) in lanes(vx.shape(), *axis).enumerate() {
                    g.data_mut()[base + argmax[lane_idx] * stride] = gout.data()[lane_idx];
                }
                acc(*x, g);
            }
            Op::Max2(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = zip3_map(gout, va, vb, |g, x, y| if x >= y { g } else { F::zero() });
                let gb = zip3_map(gout, va, vb, |g, x, y| if x >= y { F::zero() } else { g });
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::SumAxis { x, axis } => {
                acc(*x, spread_axis(gout, self.value(*x).shape(), *axis, F::one()));
            }
            Op::Mean { x, axis } => {
                let vx = self.value(*x);
                let inv = F::one() / F::from_f64_lossy(vx.shape()[*axis] as f64);
                acc(*x, spread_axis(gout, vx.shape(), *axis, inv));
            }
            Op::Transpose(x) => {
                acc(*x, transpose_raw(gout));
            }
            Op::Concat { axis, parts } => {
                let inner: usize = node.value.shape()[*axis + 1..].iter().product();
                let outer: usize = node.value.shape()[..*axis].iter().product();
                let total_block = node.value.shape()[*axis] * inner;
                let mut offset = 0usize;
                for &p in parts {
                    let vs = self.value(p).shape().to_vec();
                    let block = vs[*axis] * inner;
                    let mut g = Tensor::zeros(vs);
                    for o in 0..outer {
                        let src = o * total_block + offset;
                        g.data_mut()[o * block..(o + 1) * block]
                            .copy_from_slice(&gout.data()[src..src + block]);
                    }
                    offset += block;
                    acc(p, g);
                }
            }
            Op::Slice {
                x,
                axis,
                start,
                len,
            } => {
                let vx = self.value(*x);
                let inner: usize = vx.shape()[*axis + 1..].iter().product();
                let outer: usize = vx.shape()[..*axis].iter().product();
                let src_block = vx.shape()[*axis] * inner;
                let out_block = len * inner;
                let mut g = Tensor::zeros(vx.shape().to_vec());
                for o in 0..outer {
                    let dst = o * src_block + start * inner;
                    g.data_mut()[dst..dst + out_block]
                        .copy_from_slice(&gout.data()[o * out_block..(o + 1) * out_block]);
                }
                acc(*x, g);
            }
            Op::Embed { table, ids } => {
                let vt = self.value(*table);
                let d = vt.cols();
                let mut g = Tensor::zeros(vt.shape().to_vec());
                for (row, &id) in ids.iter().enumerate() {
                    for c in 0..d {
                        let idx = id * d + c;
                        g.data_mut()[idx] = g.data()[idx] + gout.data()[row * d + c];
                    }
                }
                acc(*table, g);
            }
            Op::GradScale { x, factor } => {
                acc(*x, gout.map(|g| g * *factor));
            }
        }
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

// ── raw kernels ──────────────────────────────────────────────────────────

fn matmul_raw<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Tensor<F> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a.data()[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b.data()[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::matrix(m, n, out).expect("matmul output shape")
}

fn transpose_raw<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let (r, c) = (x.rows(), x.cols());
    let mut out = vec![F::zero(); r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x.data()[i * c + j];
        }
    }
    Tensor::matrix(c, r, out).expect("transpose output shape")
}

fn softmax_raw<F: Scalar>(x: &Tensor<F>, axis: usize) -> Tensor<F> {
    let mut out = Tensor::zeros(x.shape().to_vec());
    let len = x.shape()[axis];
    for (base, stride) in lanes(x.shape(), axis) {
        let mut mx = x.data()[base];
        for k in 1..len {
            mx = mx.max(x.data()[base + k * stride]);
        }
        let mut sum = F::zero();
        for k in 0..len {
            let e = (x.data()[base + k * stride] - mx).exp();
            out.data_mut()[base + k * stride] = e;
            sum = sum + e;
        }
        for k in 0..len {
            let idx = base + k * stride;
            out.data_mut()[idx] = out.data()[idx] / sum;
        }
    }
    out
}

fn reduce_axis<F: Scalar>(x: &Tensor<F>, axis: usize, mean: bool) -> Result<Tensor<F>> {
    check_axis(x.shape(), axis)?;
    let len = x.shape()[axis];
    if len == 0 {
        return Err(McvqaError::Dimension(format!(
            "reduction over empty axis {} of shape {:?}",
            axis,
            x.shape()
        )));
    }
    let mut out_shape = x.shape().to_vec();
    out_shape.remove(axis);
    let mut data = Vec::with_capacity(x.numel() / len);
    let inv = F::one() / F::from_f64_lossy(len as f64);
    for (base, stride) in lanes(x.shape(), axis) {
        let mut s = F::zero();
        for k in 0..len {
            s = s + x.data()[base + k * stride];
        }
        data.push(if mean { s * inv } else { s });
    }
    Tensor::new(out_shape, data)
}

/// Expand a reduced gradient back over `axis`, scaling each copy.
fn spread_axis<F: Scalar>(gout: &Tensor<F>, shape: &[usize], axis: usize, scale: F) -> Tensor<F> {
    let len = shape[axis];
    let mut g = Tensor::zeros(shape.to_vec());
    for (lane_idx, (base, stride)) in lanes(shape, axis).enumerate() {
        let v = gout.data()[lane_idx] * scale;
        for k in 0..len {
            g.data_mut()[base + k * stride] = v;
        }
    }
    g
}

/// Elementwise combine with suffix broadcast of `b` over leading dims of `a`.
fn broadcast_zip<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    what: &str,
    f: impl Fn(F, F) -> F,
) -> Result<Tensor<F>> {
    let compatible = a.shape() == b.shape()
        || (b.shape().len() <= a.shape().len()
            && a.shape()[a.shape().len() - b.shape().len()..] == *b.shape());
    if !compatible {
        return Err(McvqaError::Dimension(format!(
            "{what} shape mismatch: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let bn = b.numel();
    let data = a
        .data()
        .iter()
        .enumerate()
        .map(|(i, &x)| f(x, b.data()[i % bn]))
        .collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Sum a full-shape gradient down to a (possibly broadcast) operand shape.
fn reduce_to_shape<F: Scalar>(g: &Tensor<F>, shape: &[usize]) -> Tensor<F> {
    let n: usize = shape.iter().product();
    if g.numel() == n {
        return Tensor::new(shape.to_vec(), g.data().to_vec()).expect("same numel");
    }
    let mut out = Tensor::zeros(shape.to_vec());
    for (i, &v) in g.data().iter().enumerate() {
        let idx = i % n;
        out.data_mut()[idx] = out.data()[idx] + v;
    }
    out
}

fn zip_map<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shapes")
}

fn zip3_map<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    c: &Tensor<F>,
    f: impl Fn(F, F, F) -> F,
) -> Tensor<F> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .map(|((&x, &y), &z)| f(x, y, z))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shapes")
}
