//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation on a [`Var`] appends a node to its [`Tape`]; node ids are
//! assigned in creation order, so walking the node list backwards is a
//! reverse topological order and each node is visited once.

use std::cell::RefCell;
use std::rc::Rc;

use super::kernels;
use super::tensor::{numel, strides, Tensor};
use crate::error::{Error, Result};

/// Index marking a zero (padding) entry in a gather map.
pub const GATHER_ZERO: usize = usize::MAX;

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    ScalarMul(usize, usize),
    MatMul(usize, usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Gather(usize, Rc<Vec<usize>>),
    Concat(Vec<usize>, usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    Abs(usize),
    Relu(usize),
    Sigmoid(usize),
    Sqrt(usize),
    Pow(usize, f64),
    Exp(usize),
    Softmax(usize),
    AddRowBias(usize, usize),
    Bilinear(usize, usize),
    LayerNorm(usize, f64),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// A single-writer computation graph.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients of a scalar root with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zero-filled when the root does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.id]))
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

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let vals: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let first = vals
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::dim("concat", first.shape(), &[axis]));
        }
        for v in &vals[1..] {
            let ok = v.rank() == rank
                && (0..rank).all(|a| a == axis || v.shape()[a] == first.shape()[a]);
            if !ok {
                return Err(Error::dim("concat", first.shape(), v.shape()));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let total_axis: usize = vals.iter().map(|v| v.shape()[axis]).sum();
        let mut shape = first.shape().to_vec();
        shape[axis] = total_axis;
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for v in &vals {
                let blk = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * blk..(o + 1) * blk]);
            }
        }
        let needs = parts.iter().any(|p| self.needs(p.id));
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(ids, axis), needs))
    }

    /// Bilinear backward sampling of `img` (H×W×C) at absolute pixel
    /// coordinates `coords` (Ho×Wo×2, x then y), zero outside the image.
    pub fn bilinear_sample<'t>(&'t self, img: Var<'t>, coords: Var<'t>) -> Result<Var<'t>> {
        let out = kernels::bilinear_forward(&img.value(), &coords.value())?;
        let needs = self.needs(img.id) || self.needs(coords.id);
        Ok(self.push(out, Op::Bilinear(img.id, coords.id), needs))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let n = root.id + 1;
        if nodes[root.id].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar root, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let shapes: Vec<Vec<usize>> = nodes[..n]
            .iter()
            .map(|nd| nd.value.shape().to_vec())
            .collect();
        grads[root.id] = Some(Tensor::full(nodes[root.id].value.shape(), 1.0));

        for id in (0..n).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.needs_grad {
                backprop(&nodes, id, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        for (g, nd) in grads.iter_mut().zip(nodes.iter()) {
            if !nd.needs_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, contrib: Tensor) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(contrib.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn accumulate_with(
    grads: &mut [Option<Tensor>],
    nodes: &[Node],
    id: usize,
    f: impl FnOnce(&mut [f64]),
) {
    if !nodes[id].needs_grad {
        return;
    }
    let slot = &mut grads[id];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(nodes[id].value.shape()));
    }
    f(slot.as_mut().unwrap().data_mut());
}

fn reshaped(g: &Tensor, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), g.data().to_vec()).expect("gradient reshape")
}

fn backprop(nodes: &[Node], id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let y = &nodes[id].value;
    let val = |i: usize| &nodes[i].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.scale(-1.0));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(grads, nodes, *a, g.mul(vb).unwrap());
            accumulate(grads, nodes, *b, g.mul(va).unwrap());
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            accumulate(
                grads,
                nodes,
                *a,
                g.zip_with(vb, "div", |g, b| g / b).unwrap(),
            );
            let gb = Tensor::from_fn(g.shape(), |i| {
                -g.data()[i] * va.data()[i] / (vb.data()[i] * vb.data()[i])
            });
            accumulate(grads, nodes, *b, gb);
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, g.scale(*s)),
        Op::Offset(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::ScalarMul(t, s) => {
            let (vt, vs) = (val(*t), val(*s));
            accumulate(grads, nodes, *t, g.scale(vs.item()));
            let dot: f64 = g.data().iter().zip(vt.data()).map(|(a, b)| a * b).sum();
            accumulate(grads, nodes, *s, Tensor::full(vs.shape(), dot));
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if nodes[*a].needs_grad {
                accumulate(
                    grads,
                    nodes,
                    *a,
                    g.matmul(&vb.transpose().unwrap()).unwrap(),
                );
            }
            if nodes[*b].needs_grad {
                accumulate(grads, nodes, *b, va.transpose().unwrap().matmul(g).unwrap());
            }
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, reshaped(g, val(*a).shape())),
        Op::Permute(a, perm) => {
            let mut inv = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            accumulate(grads, nodes, *a, g.permute(&inv).unwrap());
        }
        Op::Gather(a, idx) => {
            accumulate_with(grads, nodes, *a, |ga| {
                for (&src, &gv) in idx.iter().zip(g.data()) {
                    if src != GATHER_ZERO {
                        ga[src] += gv;
                    }
                }
            });
        }
        Op::Concat(ids, axis) => {
            let shape = y.shape();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let total = shape[*axis] * inner;
            let mut start = 0;
            for &pid in ids {
                let ps = val(pid).shape().to_vec();
                let blk = ps[*axis] * inner;
                if nodes[pid].needs_grad {
                    let mut data = Vec::with_capacity(outer * blk);
                    for o in 0..outer {
                        data.extend_from_slice(
                            &g.data()[o * total + start..o * total + start + blk],
                        );
                    }
                    accumulate(grads, nodes, pid, Tensor::new(ps, data).unwrap());
                }
                start += blk;
            }
        }
        Op::Sum(a) => accumulate(grads, nodes, *a, Tensor::full(val(*a).shape(), g.item())),
        Op::Mean(a) => {
            let n = val(*a).len() as f64;
            accumulate(
                grads,
                nodes,
                *a,
                Tensor::full(val(*a).shape(), g.item() / n),
            );
        }
        Op::SumAxis(a, axis) => {
            let shape = val(*a).shape().to_vec();
            let outer: usize = shape[..*axis].iter().product();
            let inner: usize = shape[axis + 1..].iter().product();
            let d = shape[*axis];
            let mut data = vec![0.0; numel(&shape)];
            for o in 0..outer {
                for k in 0..d {
                    for i in 0..inner {
                        data[(o * d + k) * inner + i] = g.data()[o * inner + i];
                    }
                }
            }
            accumulate(grads, nodes, *a, Tensor::new(shape, data).unwrap());
        }
        Op::Abs(a) => {
            let va = val(*a);
            accumulate(
                grads,
                nodes,
                *a,
                g.zip_with(va, "abs", |g, x| {
                    if x > 0.0 {
                        g
                    } else if x < 0.0 {
                        -g
                    } else {
                        0.0
                    }
                })
                .unwrap(),
            );
        }
        Op::Relu(a) => {
            let va = val(*a);
            accumulate(
                grads,
                nodes,
                *a,
                g.zip_with(va, "relu", |g, x| if x > 0.0 { g } else { 0.0 })
                    .unwrap(),
            );
        }
        Op::Sigmoid(a) => accumulate(
            grads,
            nodes,
            *a,
            g.zip_with(y, "sigmoid", |g, s| g * s * (1.0 - s)).unwrap(),
        ),
        Op::Sqrt(a) => accumulate(
            grads,
            nodes,
            *a,
            g.zip_with(y, "sqrt", |g, r| if r > 0.0 { 0.5 * g / r } else { 0.0 })
                .unwrap(),
        ),
        Op::Pow(a, p) => {
            let va = val(*a);
            let p = *p;
            accumulate(
                grads,
                nodes,
                *a,
                g.zip_with(va, "pow", |g, x| g * p * x.powf(p - 1.0))
                    .unwrap(),
            );
        }
        Op::Exp(a) => accumulate(grads, nodes, *a, g.mul(y).unwrap()),
        Op::Softmax(a) => {
            let n = *y.shape().last().unwrap();
            let mut gx = vec![0.0; y.len()];
            for ((gr, yr), out) in g
                .data()
                .chunks(n)
                .zip(y.data().chunks(n))
                .zip(gx.chunks_mut(n))
            {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                    *o = yv * (gv - dot);
                }
            }
            accumulate(
                grads,
                nodes,
                *a,
                Tensor::new(y.shape().to_vec(), gx).unwrap(),
            );
        }
        Op::AddRowBias(x, b) => {
            accumulate(grads, nodes, *x, g.clone());
            let c = val(*b).len();
            accumulate_with(grads, nodes, *b, |gb| {
                for row in g.data().chunks(c) {
                    for (o, v) in gb.iter_mut().zip(row) {
                        *o += v;
                    }
                }
            });
        }
        Op::Bilinear(img, coords) => {
            let (vi, vc) = (val(*img), val(*coords));
            if nodes[*img].needs_grad {
                accumulate_with(grads, nodes, *img, |gi| {
                    kernels::bilinear_backward_img(vi.shape(), vc, g, gi)
                });
            }
            if nodes[*coords].needs_grad {
                accumulate(
                    grads,
                    nodes,
                    *coords,
                    kernels::bilinear_backward_coords(vi, vc, g),
                );
            }
        }
        Op::LayerNorm(a, eps) => {
            let va = val(*a);
            let n = *y.shape().last().unwrap();
            let mut gx = vec![0.0; y.len()];
            for (((xr, yr), gr), out) in va
                .data()
                .chunks(n)
                .zip(y.data().chunks(n))
                .zip(g.data().chunks(n))
                .zip(gx.chunks_mut(n))
            {
                let mean = xr.iter().sum::<f64>() / n as f64;
                let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + eps).sqrt();
                let gm = gr.iter().sum::<f64>() / n as f64;
                let gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                for ((o, &gv), &yv) in out.iter_mut().zip(gr).zip(yr) {
                    *o = inv * (gv - gm - yv * gy);
                }
            }
            accumulate(
                grads,
                nodes,
                *a,
                Tensor::new(va.shape().to_vec(), gx).unwrap(),
            );
        }
    }
}

// Fallible shape-checked arithmetic; the operator traits cannot return Result.
#[allow(clippy::should_implement_trait)]
impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a single-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn unary(self, out: Tensor, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id);
        self.tape.push(out, op, needs)
    }

    fn binary(self, other: Var<'t>, out: Tensor, op: Op) -> Var<'t> {
        let needs = self.tape.needs(self.id) || self.tape.needs(other.id);
        self.tape.push(out, op, needs)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().add(&other.value())?;
        Ok(self.binary(other, out, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().sub(&other.value())?;
        Ok(self.binary(other, out, Op::Sub(self.id, other.id)))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().mul(&other.value())?;
        Ok(self.binary(other, out, Op::Mul(self.id, other.id)))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().zip_with(&other.value(), "div", |a, b| a / b)?;
        Ok(self.binary(other, out, Op::Div(self.id, other.id)))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let out = self.value().scale(s);
        self.unary(out, Op::Scale(self.id, s))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    /// Adds a constant to every element.
    pub fn offset(self, c: f64) -> Var<'t> {
        let out = self.value().map(|v| v + c);
        self.unary(out, Op::Offset(self.id))
    }

    /// Multiplies every element by a single-element node.
    pub fn mul_scalar(self, s: Var<'t>) -> Result<Var<'t>> {
        let sv = s.value();
        if sv.len() != 1 {
            return Err(Error::dim("mul_scalar", &self.shape(), sv.shape()));
        }
        let out = self.value().scale(sv.item());
        Ok(self.binary(s, out, Op::ScalarMul(self.id, s.id)))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = self.value().matmul(&other.value())?;
        Ok(self.binary(other, out, Op::MatMul(self.id, other.id)))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value().reshape(shape)?;
        Ok(self.unary(out, Op::Reshape(self.id)))
    }

    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let out = self.value().permute(perm)?;
        Ok(self.unary(out, Op::Permute(self.id, perm.to_vec())))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        if self.value().rank() != 2 {
            return Err(Error::dim("transpose", &self.shape(), &[2]));
        }
        self.permute(&[1, 0])
    }

    /// `out[i] = self.flat[index[i]]`, or 0 where `index[i] == GATHER_ZERO`.
    pub fn gather(self, index: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var<'t>> {
        if numel(shape) != index.len() {
            return Err(Error::dim("gather", shape, &[index.len()]));
        }
        let v = self.value();
        let src = v.data();
        let mut data = Vec::with_capacity(index.len());
        for &i in index.iter() {
            if i == GATHER_ZERO {
                data.push(0.0);
            } else if i < src.len() {
                data.push(src[i]);
            } else {
                return Err(Error::contract(format!(
                    "gather index {i} out of range {}",
                    src.len()
                )));
            }
        }
        let out = Tensor::new(shape.to_vec(), data)?;
        Ok(self.unary(out, Op::Gather(self.id, index)))
    }

    /// Sub-range `[start, end)` along `axis`.
    pub fn slice(self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::dim("slice", &shape, &[axis, start, end]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let d = shape[axis];
        let mut idx = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            for k in start..end {
                let base = (o * d + k) * inner;
                idx.extend(base..base + inner);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        self.gather(Rc::new(idx), &out_shape)
    }

    pub fn sum(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().sum());
        self.unary(out, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let out = Tensor::scalar(self.value().mean());
        self.unary(out, Op::Mean(self.id))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'t>> {
        let v = self.value();
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(Error::dim("sum_axis", shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let d = shape[axis];
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..d {
                for i in 0..inner {
                    data[o * inner + i] += v.data()[(o * d + k) * inner + i];
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.unary(out, Op::SumAxis(self.id, axis)))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let d = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::dim("mean_axis", &self.shape(), &[axis]))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / d as f64))
    }

    pub fn abs(self) -> Var<'t> {
        let out = self.value().map(f64::abs);
        self.unary(out, Op::Abs(self.id))
    }

    pub fn relu(self) -> Var<'t> {
        let out = self.value().map(|v| v.max(0.0));
        self.unary(out, Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Var<'t> {
        let out = self.value().map(|v| 1.0 / (1.0 + (-v).exp()));
        self.unary(out, Op::Sigmoid(self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        let out = self.value().map(f64::sqrt);
        self.unary(out, Op::Sqrt(self.id))
    }

    pub fn powf(self, p: f64) -> Var<'t> {
        let out = self.value().map(|v| v.powf(p));
        self.unary(out, Op::Pow(self.id, p))
    }

    pub fn exp(self) -> Var<'t> {
        let out = self.value().map(f64::exp);
        self.unary(out, Op::Exp(self.id))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Var<'t> {
        let out = kernels::softmax_rows(&self.value(), None);
        self.unary(out, Op::Softmax(self.id))
    }

    /// Softmax over the last axis restricted to positions where `valid` is
    /// true. Invalid positions get weight exactly 0; a row with no valid
    /// position is all zeros.
    pub fn masked_softmax(self, valid: Rc<Vec<bool>>) -> Result<Var<'t>> {
        let v = self.value();
        let n = *v.shape().last().unwrap_or(&1);
        if valid.len() != n {
            return Err(Error::dim("masked_softmax", v.shape(), &[valid.len()]));
        }
        let out = kernels::softmax_rows(&v, Some(&valid));
        Ok(self.unary(out, Op::Softmax(self.id)))
    }

    /// Adds a length-C bias to every row of a tensor whose last axis is C.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let v = self.value();
        let b = bias.value();
        let c = *v.shape().last().unwrap_or(&1);
        if b.rank() != 1 || b.len() != c {
            return Err(Error::dim("add_row_bias", v.shape(), b.shape()));
        }
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let out = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.binary(bias, out, Op::AddRowBias(self.id, bias.id)))
    }

    /// Normalizes each row over the last axis to zero mean, unit variance.
    pub fn layer_norm(self, eps: f64) -> Var<'t> {
        let v = self.value();
        let n = *v.shape().last().unwrap_or(&1);
        let mut data = v.data().to_vec();
        for row in data.chunks_mut(n) {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for x in row.iter_mut() {
                *x = (*x - mean) * inv;
            }
        }
        let out = Tensor::new(v.shape().to_vec(), data).unwrap();
        self.unary(out, Op::LayerNorm(self.id, eps))
    }
}

/// Row-major strides, exposed for index-map builders.
pub fn row_strides(shape: &[usize]) -> Vec<usize> {
    strides(shape)
}
