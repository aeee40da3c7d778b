//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each recorded node keeps its
//! forward value plus whatever the backward rule needs; [`Tape::backward`]
//! walks the nodes in reverse insertion order, which is a valid reverse
//! topological order because inputs are always recorded before their users.

mod gradcheck;

pub use gradcheck::grad_check;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};
use crate::training::loss::nb;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Affine { x: NodeId, mul: f64 },
    Relu(NodeId),
    Softplus(NodeId),
    Sqrt(NodeId),
    ClampMin { x: NodeId, floor: f64 },
    Dropout { x: NodeId, mask: Tensor },
    Transpose(NodeId),
    Reshape(NodeId),
    Expand(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MeanAxes(NodeId),
    Concat(NodeId, NodeId),
    Slice { x: NodeId, start: usize },
    NbNll { mu: NodeId, alpha: NodeId, y: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by node; absent entries mean the node does not influence the loss.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient for `id`, zero-filled when the loss does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[id.0]).expect("recorded shapes are valid"),
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf (data, masks, statistics).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `a + b`, `b` broadcast to `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::add_broadcast(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::sub_broadcast(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::mul_broadcast(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::div_broadcast(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// `x * mul + add` with scalar constants.
    pub fn affine(&mut self, x: NodeId, mul: f64, add: f64) -> NodeId {
        let v = self.value(x).map(|e| e * mul + add);
        self.push(v, Op::Affine { x, mul }, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = tensor::relu(self.value(x));
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(tensor::softplus_scalar);
        self.push(v, Op::Softplus(x), &[x])
    }

    pub fn sqrt(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.data().iter().any(|&e| e <= 0.0) {
            return Err(Error::Numeric("sqrt of a non-positive value".into()));
        }
        let v = v.map(f64::sqrt);
        Ok(self.push(v, Op::Sqrt(x), &[x]))
    }

    /// `max(x, floor)`; gradient flows only where `x > floor`.
    pub fn clamp_min(&mut self, x: NodeId, floor: f64) -> NodeId {
        let v = self.value(x).map(|e| e.max(floor));
        self.push(v, Op::ClampMin { x, floor }, &[x])
    }

    /// Multiplies by a precomputed dropout mask.
    pub fn dropout_with_mask(&mut self, x: NodeId, mask: Tensor) -> Result<NodeId> {
        let v = self.value(x).zip_map(&mask, "dropout", |a, m| a * m)?;
        Ok(self.push(v, Op::Dropout { x, mask }, &[x]))
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = tensor::transpose(self.value(x))?;
        Ok(self.push(v, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    pub fn expand(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = tensor::expand(self.value(x), shape)?;
        Ok(self.push(v, Op::Expand(x), &[x]))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).mean());
        self.push(v, Op::Mean(x), &[x])
    }

    /// Mean over `axes`, keeping them with extent 1.
    pub fn mean_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let v = tensor::mean_axes(self.value(x), axes)?;
        Ok(self.push(v, Op::MeanAxes(x), &[x]))
    }

    pub fn concat_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::concat_last(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Concat(a, b), &[a, b]))
    }

    pub fn slice_last(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = tensor::slice_last(self.value(x), start, end)?;
        Ok(self.push(v, Op::Slice { x, start }, &[x]))
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        self.mul(x, x)
    }

    /// Mean negative-binomial NLL of integer counts `y` under (mean, dispersion).
    pub fn nb_nll(&mut self, mu: NodeId, alpha: NodeId, y: Tensor) -> Result<NodeId> {
        let total = nb::mean_nll(self.value(mu), self.value(alpha), &y)?;
        Ok(self.push(Tensor::scalar(total), Op::NbNll { mu, alpha, y }, &[mu, alpha]))
    }

    /// Reverse sweep from a one-element loss node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(lv.shape())?);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (input, contrib) in self.input_grads(node, &g)? {
                if self.nodes[input.0].requires_grad {
                    accumulate(&mut grads[input.0], contrib);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn input_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let mut out = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.wants(a) {
                    let mut ga = tensor::matmul(g, &tensor::transpose(bv)?)?;
                    if av.rank() == 2 && ga.rank() == 3 {
                        ga = tensor::sum_batch(&ga);
                    }
                    out.push((a, ga));
                }
                if self.wants(b) {
                    let mut gb = tensor::matmul(&tensor::transpose(av)?, g)?;
                    if bv.rank() == 2 && gb.rank() == 3 {
                        gb = tensor::sum_batch(&gb);
                    }
                    out.push((b, gb));
                }
            }
            &Op::Add(a, b) => {
                out.push((a, g.clone()));
                if self.wants(b) {
                    out.push((b, tensor::reduce_to_shape(g, self.shape(b))?));
                }
            }
            &Op::Sub(a, b) => {
                out.push((a, g.clone()));
                if self.wants(b) {
                    out.push((b, tensor::reduce_to_shape(&g.scale(-1.0), self.shape(b))?));
                }
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                if self.wants(a) {
                    out.push((a, tensor::mul_broadcast(g, bv)?));
                }
                if self.wants(b) {
                    let gb = g.zip_map(av, "mul_backward", |x, y| x * y)?;
                    out.push((b, tensor::reduce_to_shape(&gb, bv.shape())?));
                }
            }
            &Op::Div(a, b) => {
                let bv = self.value(b);
                if self.wants(a) {
                    out.push((a, tensor::div_broadcast(g, bv)?));
                }
                if self.wants(b) {
                    // d(a/b)/db = -(a/b)/b
                    let gy = g.zip_map(&node.value, "div_backward", |x, y| -x * y)?;
                    let gb = tensor::div_broadcast(&gy, bv)?;
                    out.push((b, tensor::reduce_to_shape(&gb, bv.shape())?));
                }
            }
            &Op::Affine { x, mul } => out.push((x, g.scale(mul))),
            &Op::Relu(x) => {
                let gx = g.zip_map(self.value(x), "relu_backward", |gv, xv| if xv > 0.0 { gv } else { 0.0 })?;
                out.push((x, gx));
            }
            &Op::Softplus(x) => {
                let gx = g.zip_map(self.value(x), "softplus_backward", |gv, xv| {
                    gv * tensor::sigmoid_scalar(xv)
                })?;
                out.push((x, gx));
            }
            &Op::Sqrt(x) => {
                let gx = g.zip_map(&node.value, "sqrt_backward", |gv, y| 0.5 * gv / y)?;
                out.push((x, gx));
            }
            &Op::ClampMin { x, floor } => {
                let gx = g.zip_map(
                    self.value(x),
                    "clamp_backward",
                    |gv, xv| {
                        if xv > floor {
                            gv
                        } else {
                            0.0
                        }
                    },
                )?;
                out.push((x, gx));
            }
            Op::Dropout { x, mask } => out.push((*x, g.zip_map(mask, "dropout_backward", |a, m| a * m)?)),
            &Op::Transpose(x) => out.push((x, tensor::transpose(g)?)),
            &Op::Reshape(x) => out.push((x, g.reshape(self.shape(x))?)),
            &Op::Expand(x) => out.push((x, tensor::reduce_to_shape(g, self.shape(x))?)),
            &Op::Sum(x) => out.push((x, Tensor::full(self.shape(x), g.item()?)?)),
            &Op::Mean(x) => {
                let xv = self.value(x);
                out.push((x, Tensor::full(xv.shape(), g.item()? / xv.len() as f64)?));
            }
            &Op::MeanAxes(x) => {
                let xv = self.value(x);
                let count = (xv.len() / node.value.len()) as f64;
                out.push((x, tensor::expand(g, xv.shape())?.scale(1.0 / count)));
            }
            &Op::Concat(a, b) => {
                let ca = *self.shape(a).last().unwrap();
                let cb = *self.shape(b).last().unwrap();
                if self.wants(a) {
                    out.push((a, tensor::slice_last(g, 0, ca)?));
                }
                if self.wants(b) {
                    out.push((b, tensor::slice_last(g, ca, ca + cb)?));
                }
            }
            &Op::Slice { x, start } => {
                let mut gx = Tensor::zeros(self.shape(x))?;
                tensor::scatter_last(&mut gx, g, start);
                out.push((x, gx));
            }
            Op::NbNll { mu, alpha, y } => {
                let (gmu, galpha) = nb::mean_nll_grad(self.value(*mu), self.value(*alpha), y)?;
                let s = g.item()?;
                if self.wants(*mu) {
                    out.push((*mu, gmu.scale(s)));
                }
                if self.wants(*alpha) {
                    out.push((*alpha, galpha.scale(s)));
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn square_sum_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(&[1], vec![3.0]).unwrap());
        let sq = tape.square(x).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.wrt(x).data(), &[6.0]);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let unused = tape.param(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let loss = tape.sum(x);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(unused).is_none());
        assert_eq!(grads.wrt(unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_node_accumulates() {
        // y = x + x + x  => dy/dx = 3
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(&[1], vec![2.0]).unwrap());
        let a = tape.add(x, x).unwrap();
        let b = tape.add(a, x).unwrap();
        let loss = tape.sum(b);
        assert_eq!(tape.backward(loss).unwrap().wrt(x).data(), &[3.0]);
    }

    #[test]
    fn relu_subgradient_convention() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(&[3], vec![2.0, -1.0, 0.0]).unwrap());
        let r = tape.relu(x);
        let loss = tape.sum(r);
        assert_eq!(tape.backward(loss).unwrap().wrt(x).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(&[2]).unwrap());
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = SeededRng::new(17);
        let a = Tensor::random_normal(&[2, 3, 4], &mut rng).unwrap();
        let w = Tensor::random_normal(&[5, 3], &mut rng).unwrap();
        let row = Tensor::random_normal(&[1, 4], &mut rng).unwrap();
        let pos = Tensor::random_uniform(&[3, 4], 0.5, 2.0, &mut rng).unwrap();
        let mask = tensor::dropout_mask(&[2, 5, 4], 0.3, &mut rng).unwrap();
        let params = vec![a, w, row, pos];
        let err = grad_check(
            |tape, p| {
                let (a, w, row, pos) = (p[0], p[1], p[2], p[3]);
                let h = tape.matmul(w, a)?; // 2x5x4
                let h = tape.dropout_with_mask(h, mask.clone())?;
                let h = tape.add(h, row)?;
                let h = tape.relu(h);
                let t = tape.transpose(h)?; // 2x4x5
                let sp = tape.softplus(t);
                let m = tape.mean_axes(sp, &[1, 2])?; // 2x1x1
                let s = tape.sub(sp, m)?;
                let sq = tape.square(s)?;
                let v = tape.clamp_min(sq, 1e-3);
                let r = tape.sqrt(v)?;
                let a2 = tape.slice_last(a, 1, 3)?; // 2x3x2
                let c = tape.concat_last(a, a2)?; // 2x3x6
                let q = tape.div(pos, row)?; // 3x4
                let q = tape.affine(q, 0.7, 0.1);
                let e = tape.expand(q, &[2, 3, 4])?;
                let mixed = tape.mul(e, a)?;
                let rs = tape.reshape(mixed, &[6, 4])?;
                let l1 = tape.mean(r);
                let l2 = tape.sum(c);
                let l3 = tape.mean(rs);
                let l12 = tape.add(l1, l2)?;
                let loss = tape.add(l12, l3)?;
                Ok(loss)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max rel err {err}");
    }

    #[test]
    fn rank2_times_rank3_grads() {
        let mut rng = SeededRng::new(8);
        let params = vec![
            Tensor::random_normal(&[3, 4], &mut rng).unwrap(),
            Tensor::random_normal(&[2, 4, 2], &mut rng).unwrap(),
            Tensor::random_normal(&[2, 5], &mut rng).unwrap(),
        ];
        let err = grad_check(
            |tape, p| {
                let h = tape.matmul(p[0], p[1])?; // 2x3x2
                let h = tape.matmul(h, p[2])?; // 2x3x5
                let h = tape.square(h)?;
                Ok(tape.mean(h))
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }
}
