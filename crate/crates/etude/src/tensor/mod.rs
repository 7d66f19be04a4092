//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! A [`Tape`] records every operation of a forward pass; [`Tape::backward`]
//! replays it in exact reverse order, accumulating gradients additively.
//! Values are `ndarray` arrays in standard layout; shapes are validated up
//! front and mismatches panic with the offending operation named.

pub mod check;
pub mod optim;

use ndarray::{concatenate, ArrayD, ArrayViewD, Axis, Ix2, IxDyn, Slice};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward on a detached value: the loss depends on no gradient-tracked leaf")]
    DetachedLoss,
}

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Slice { x: NodeId, axis: usize, start: usize },
    Concat { parts: Vec<NodeId>, axis: usize },
    Pad { x: NodeId, axis: usize, before: usize },
    Softmax(NodeId),
    Relu(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, normed: ArrayD<f64>, inv_std: ArrayD<f64> },
    Embed { table: NodeId, ids: Vec<usize> },
    Dropout { x: NodeId, mask: ArrayD<f64> },
    MeanRows(NodeId),
    Sum(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize>, mask: Vec<f64>, softmax: ArrayD<f64> },
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// One tape per forward/backward pass, single-threaded; leaf values without
/// gradients (constants) cost nothing at backward time.
pub struct Tape {
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let ndim = a.len().max(b.len());
    let mut out = vec![0; ndim];
    for i in 0..ndim {
        let da = if i < ndim - a.len() { 1 } else { a[i - (ndim - a.len())] };
        let db = if i < ndim - b.len() { 1 } else { b[i - (ndim - b.len())] };
        assert!(
            da == db || da == 1 || db == 1,
            "incompatible broadcast shapes {a:?} and {b:?}"
        );
        out[i] = da.max(db);
    }
    out
}

/// Sums `grad` back down to `shape` after a broadcast.
fn unbroadcast(grad: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    let mut g = grad.clone();
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (axis, (&gd, &sd)) in g.shape().to_vec().iter().zip(shape).enumerate() {
        if sd == 1 && gd != 1 {
            g = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
        }
    }
    g
}

fn as2(a: &ArrayD<f64>) -> ndarray::ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("expected a 2-d tensor")
}

impl Tape {
    pub fn new(seed: u64) -> Self {
        Tape { nodes: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, requires_grad });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn value(&self, id: NodeId) -> &ArrayD<f64> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert!(v.len() == 1, "scalar() on shape {:?}", v.shape());
        *v.iter().next().unwrap()
    }

    /// Gradient-tracked leaf (a parameter).
    pub fn leaf(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf (input data, masks, constants).
    pub fn constant(&mut self, value: ArrayD<f64>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Elementwise sum with broadcasting.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = broadcast_shape(self.value(a).shape(), self.value(b).shape());
        let va = self.value(a).broadcast(IxDyn(&shape)).expect("broadcast a");
        let vb = self.value(b).broadcast(IxDyn(&shape)).expect("broadcast b");
        let value = &va + &vb;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), rg)
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = broadcast_shape(self.value(a).shape(), self.value(b).shape());
        let va = self.value(a).broadcast(IxDyn(&shape)).expect("broadcast a");
        let vb = self.value(b).broadcast(IxDyn(&shape)).expect("broadcast b");
        let value = &va * &vb;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let value = self.value(x) * c;
        let rg = self.needs(x);
        self.push(value, Op::Scale(x, c), rg)
    }

    /// 2-d matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.shape()[va.ndim() - 1],
            vb.shape()[0],
            "matmul inner dimensions differ: {:?} x {:?}",
            va.shape(),
            vb.shape()
        );
        let value = as2(va).dot(&as2(vb)).into_dyn();
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Matmul(a, b), rg)
    }

    /// 2-d transpose.
    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        let value = as2(self.value(x)).t().to_owned().into_dyn();
        let rg = self.needs(x);
        self.push(value, Op::Transpose(x), rg)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> NodeId {
        let value = self
            .value(x)
            .to_shape(IxDyn(shape))
            .expect("reshape element count mismatch")
            .to_owned();
        let rg = self.needs(x);
        self.push(value, Op::Reshape(x), rg)
    }

    /// Contiguous range along one axis.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> NodeId {
        let value = self
            .value(x)
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        let rg = self.needs(x);
        self.push(value, Op::Slice { x, axis, start }, rg)
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        assert!(!parts.is_empty(), "concat of zero parts");
        let views: Vec<ArrayViewD<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(value, Op::Concat { parts: parts.to_vec(), axis }, rg)
    }

    /// Zero padding along one axis.
    pub fn pad(&mut self, x: NodeId, axis: usize, before: usize, after: usize) -> NodeId {
        let mut shape = self.value(x).shape().to_vec();
        let orig = shape[axis];
        shape[axis] += before + after;
        let mut value = ArrayD::zeros(IxDyn(&shape));
        value
            .slice_axis_mut(Axis(axis), Slice::from(before..before + orig))
            .assign(self.value(x));
        let rg = self.needs(x);
        self.push(value, Op::Pad { x, axis, before }, rg)
    }

    /// Softmax along the last axis; rows sum to 1.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let mut value = self.value(x).clone();
        let last = value.ndim() - 1;
        for mut lane in value.lanes_mut(Axis(last)) {
            let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            lane.mapv_inplace(|v| (v - max).exp());
            let sum = lane.sum();
            lane.mapv_inplace(|v| v / sum);
        }
        let rg = self.needs(x);
        self.push(value, Op::Softmax(x), rg)
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let value = self.value(x).mapv(|v| v.max(0.0));
        let rg = self.needs(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let v = self.value(x);
        let last = v.ndim() - 1;
        let d = v.shape()[last];
        assert_eq!(self.value(gamma).shape(), [d], "layer_norm gamma shape");
        assert_eq!(self.value(beta).shape(), [d], "layer_norm beta shape");
        let mut normed = v.clone();
        let mut inv_std_shape = v.shape().to_vec();
        inv_std_shape[last] = 1;
        let mut inv_std = ArrayD::zeros(IxDyn(&inv_std_shape));
        for (mut lane, inv) in normed.lanes_mut(Axis(last)).into_iter().zip(inv_std.iter_mut()) {
            let mean = lane.sum() / d as f64;
            let var = lane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            lane.mapv_inplace(|v| (v - mean) * is);
            *inv = is;
        }
        let value = &normed * &self.value(gamma).view() + &self.value(beta).view();
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, normed, inv_std }, rg)
    }

    /// Row lookup: `table` is (vocab, d), output is (ids.len(), d).
    pub fn embed(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        assert_eq!(t.ndim(), 2, "embedding table must be 2-d");
        let vocab = t.shape()[0];
        assert!(ids.iter().all(|&i| i < vocab), "embedding id out of range");
        let value = as2(t).select(Axis(0), ids).into_dyn();
        let rg = self.needs(table);
        self.push(value, Op::Embed { table, ids: ids.to_vec() }, rg)
    }

    /// Inverted dropout with keep-scaling. `p == 0` is the identity.
    pub fn dropout(&mut self, x: NodeId, p: f64) -> NodeId {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        if p == 0.0 {
            return x;
        }
        let keep = 1.0 - p;
        let rng = &mut self.rng;
        let mask = ArrayD::from_shape_fn(self.nodes[x].value.raw_dim(), |_| {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let value = &self.nodes[x].value * &mask;
        let rg = self.needs(x);
        self.push(value, Op::Dropout { x, mask }, rg)
    }

    /// Mean over axis 0: (n, d) -> (d,).
    pub fn mean_rows(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x);
        assert_eq!(v.ndim(), 2, "mean_rows expects a 2-d tensor");
        let value = v.mean_axis(Axis(0)).expect("non-empty rows").into_dyn();
        let rg = self.needs(x);
        self.push(value, Op::MeanRows(x), rg)
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let value = ArrayD::from_elem(IxDyn(&[]), self.value(x).sum());
        let rg = self.needs(x);
        self.push(value, Op::Sum(x), rg)
    }

    /// Mean negative log-likelihood in nats per (unmasked) token.
    ///
    /// `logits` is (n, vocab); `mask[i] = 0` drops position i from the mean.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], mask: &[f64]) -> NodeId {
        let v = self.value(logits);
        assert_eq!(v.ndim(), 2, "cross_entropy expects 2-d logits");
        let (n, vocab) = (v.shape()[0], v.shape()[1]);
        assert_eq!(targets.len(), n, "one target per row");
        assert_eq!(mask.len(), n, "one mask entry per row");
        assert!(targets.iter().all(|&t| t < vocab), "target id out of range");
        let denom: f64 = mask.iter().sum();
        assert!(denom > 0.0, "cross_entropy mask drops every position");
        let mut softmax = v.clone();
        let mut loss = 0.0;
        for (i, mut lane) in softmax.lanes_mut(Axis(1)).into_iter().enumerate() {
            let max = lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lane.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += mask[i] * (lse - lane[targets[i]]);
            lane.mapv_inplace(|v| (v - lse).exp());
        }
        let value = ArrayD::from_elem(IxDyn(&[]), loss / denom);
        let rg = self.needs(logits);
        self.push(
            value,
            Op::CrossEntropy { logits, targets: targets.to_vec(), mask: mask.to_vec(), softmax },
            rg,
        )
    }

    /// Reverse pass from a scalar loss. Returns one gradient slot per node;
    /// only gradient-tracked nodes reachable from the loss are filled.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !self.needs(loss) {
            return Err(TensorError::DetachedLoss);
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(ArrayD::from_elem(lv.raw_dim(), 1.0));
        for id in (0..=loss).rev() {
            let Some(grad) = grads[id].take() else { continue };
            if !self.needs(id) {
                continue;
            }
            self.accumulate(id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        Ok(Gradients { slots: grads })
    }

    fn add_grad(&self, grads: &mut [Option<ArrayD<f64>>], id: NodeId, g: ArrayD<f64>) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate(&self, id: NodeId, grad: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_grad(grads, *a, unbroadcast(grad, self.value(*a).shape()));
                self.add_grad(grads, *b, unbroadcast(grad, self.value(*b).shape()));
            }
            Op::Mul(a, b) => {
                let shape = self.value(id).shape().to_vec();
                let va = self.value(*a).broadcast(IxDyn(&shape)).unwrap().to_owned();
                let vb = self.value(*b).broadcast(IxDyn(&shape)).unwrap().to_owned();
                self.add_grad(grads, *a, unbroadcast(&(grad * &vb), self.value(*a).shape()));
                self.add_grad(grads, *b, unbroadcast(&(grad * &va), self.value(*b).shape()));
            }
            Op::Scale(x, c) => self.add_grad(grads, *x, grad * *c),
            Op::Matmul(a, b) => {
                let (va, vb) = (as2(self.value(*a)), as2(self.value(*b)));
                let g = as2(grad);
                self.add_grad(grads, *a, g.dot(&vb.t()).into_dyn());
                self.add_grad(grads, *b, va.t().dot(&g).into_dyn());
            }
            Op::Transpose(x) => self.add_grad(grads, *x, as2(grad).t().to_owned().into_dyn()),
            Op::Reshape(x) => {
                let g = grad.to_shape(self.value(*x).raw_dim()).unwrap().to_owned();
                self.add_grad(grads, *x, g);
            }
            Op::Slice { x, axis, start } => {
                let mut g = ArrayD::zeros(self.value(*x).raw_dim());
                let len = self.value(id).shape()[*axis];
                g.slice_axis_mut(Axis(*axis), Slice::from(*start..*start + len))
                    .assign(grad);
                self.add_grad(grads, *x, g);
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).shape()[*axis];
                    let g = grad
                        .slice_axis(Axis(*axis), Slice::from(offset..offset + len))
                        .to_owned();
                    self.add_grad(grads, p, g);
                    offset += len;
                }
            }
            Op::Pad { x, axis, before } => {
                let len = self.value(*x).shape()[*axis];
                let g = grad
                    .slice_axis(Axis(*axis), Slice::from(*before..*before + len))
                    .to_owned();
                self.add_grad(grads, *x, g);
            }
            Op::Softmax(x) => {
                let y = self.value(id);
                let mut g = grad * y;
                let last = y.ndim() - 1;
                for (mut glane, ylane) in
                    g.lanes_mut(Axis(last)).into_iter().zip(y.lanes(Axis(last)))
                {
                    let dot = glane.sum();
                    for (gv, yv) in glane.iter_mut().zip(ylane.iter()) {
                        *gv -= dot * yv;
                    }
                }
                self.add_grad(grads, *x, g);
            }
            Op::Relu(x) => {
                let mask = self.value(*x).mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                self.add_grad(grads, *x, grad * &mask);
            }
            Op::LayerNorm { x, gamma, beta, normed, inv_std } => {
                let last = normed.ndim() - 1;
                let d = normed.shape()[last] as f64;
                let gvec = self.value(*gamma);
                // d_normed = grad * gamma, then the standard layer-norm pullback.
                let dn = grad * &gvec.view();
                let mut dx = dn.clone();
                for ((mut dxl, nl), is) in dx
                    .lanes_mut(Axis(last))
                    .into_iter()
                    .zip(normed.lanes(Axis(last)))
                    .zip(inv_std.iter())
                {
                    let mean_dn = dxl.sum() / d;
                    let mean_dn_n = dxl.iter().zip(nl.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
                    for (dv, nv) in dxl.iter_mut().zip(nl.iter()) {
                        *dv = (*dv - mean_dn - nv * mean_dn_n) * is;
                    }
                }
                self.add_grad(grads, *x, dx);
                let flat_rows = normed.len() / normed.shape()[last];
                let n2 = normed.to_shape((flat_rows, normed.shape()[last])).unwrap();
                let g2 = grad.to_shape((flat_rows, normed.shape()[last])).unwrap();
                self.add_grad(grads, *gamma, (&n2 * &g2).sum_axis(Axis(0)).into_dyn());
                self.add_grad(grads, *beta, g2.sum_axis(Axis(0)).into_dyn());
            }
            Op::Embed { table, ids } => {
                let mut g = ArrayD::zeros(self.value(*table).raw_dim());
                let mut g2 = g.view_mut().into_dimensionality::<Ix2>().unwrap();
                let gr = as2(grad);
                for (row, &id) in ids.iter().enumerate() {
                    let mut target = g2.row_mut(id);
                    target += &gr.row(row);
                }
                self.add_grad(grads, *table, g);
            }
            Op::Dropout { x, mask } => self.add_grad(grads, *x, grad * mask),
            Op::MeanRows(x) => {
                let n = self.value(*x).shape()[0];
                let g1 = grad.view().insert_axis(Axis(0));
                let g = g1
                    .broadcast(self.value(*x).raw_dim())
                    .unwrap()
                    .to_owned()
                    / n as f64;
                self.add_grad(grads, *x, g);
            }
            Op::Sum(x) => {
                let g = ArrayD::from_elem(self.value(*x).raw_dim(), grad.sum());
                self.add_grad(grads, *x, g);
            }
            Op::CrossEntropy { logits, targets, mask, softmax } => {
                let upstream = grad.sum();
                let denom: f64 = mask.iter().sum();
                let mut g = softmax.clone();
                let mut g2 = g.view_mut().into_dimensionality::<Ix2>().unwrap();
                for (i, &t) in targets.iter().enumerate() {
                    g2[[i, t]] -= 1.0;
                    let w = upstream * mask[i] / denom;
                    let mut row = g2.row_mut(i);
                    row *= w;
                }
                self.add_grad(grads, *logits, g);
            }
        }
    }
}

/// Per-node gradient slots produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    slots: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to node `id`; zero-shaped nodes
    /// that the loss never touched return `None`.
    pub fn get(&self, id: NodeId) -> Option<&ArrayD<f64>> {
        self.slots.get(id).and_then(|s| s.as_ref())
    }
}
