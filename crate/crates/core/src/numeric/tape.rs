//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every op records its inputs and whatever it needs for the vector-Jacobian
//! product. Nodes built only from constants never receive gradient storage.

use super::conv::{conv2d, conv2d_backward, Conv2dSpec};
use super::linalg;
use super::norm::{self, LayerNormCache};
use super::sample::{bilinear_sample, bilinear_sample_backward};
use super::tensor::Tensor;
use crate::body::rotation::{rot6d_backward, rot6d_to_matrix};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBroadcast(Var, Var),
    Linear(Var, Var, Option<Var>),
    Bmm(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice { x: Var, axis: usize, start: usize },
    Gather(Var, Vec<usize>),
    LayerNorm { x: Var, gamma: Var, beta: Var, cache: LayerNormCache },
    Gelu(Var),
    Tanh(Var),
    Softplus(Var),
    Softmax(Var, usize),
    Conv2d { x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec },
    Bilinear(Var, Var),
    Rot6d(Var),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradient buffers produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` for nodes that never required a gradient.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub fn allocated(&self) -> usize {
        self.grads.iter().filter(|g| g.is_some()).count()
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("{op}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
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
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(value, op, needs)
    }

    /// Trainable leaf: receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Frozen leaf: no gradient is ever allocated for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.derived(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.derived(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.derived(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        self.derived(v, Op::Scale(a, factor), &[a])
    }

    /// `a + b` where `b`'s shape equals the trailing axes of `a`'s.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::dim(format!("add_broadcast: {sb:?} is not a suffix of {sa:?}")));
        }
        let bv = self.value(b).data();
        let n = bv.len();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % n])
            .collect();
        let v = Tensor::from_parts(sa.to_vec(), data);
        Ok(self.derived(v, Op::AddBroadcast(a, b), &[a, b]))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let v = linalg::linear(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(v, Op::Linear(x, w, b), &inputs))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = linalg::bmm(self.value(a), self.value(b))?;
        Ok(self.derived(v, Op::Bmm(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.derived(v, Op::Reshape(x), &[x]))
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = linalg::permute(self.value(x), axes)?;
        Ok(self.derived(v, Op::Permute(x, axes.to_vec()), &[x]))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = linalg::concat(&tensors, axis)?;
        Ok(self.derived(v, Op::Concat(parts.to_vec(), axis), parts))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let v = linalg::slice(self.value(x), axis, start, len)?;
        Ok(self.derived(v, Op::Slice { x, axis, start }, &[x]))
    }

    /// Rows of axis 0 selected by `index` (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let v = linalg::gather_rows(self.value(x), index)?;
        Ok(self.derived(v, Op::Gather(x, index.to_vec()), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (v, cache) = norm::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.derived(v, Op::LayerNorm { x, gamma, beta, cache }, &[x, gamma, beta]))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(norm::gelu_scalar);
        self.derived(v, Op::Gelu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.derived(v, Op::Tanh(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let v = self.value(x).map(norm::softplus_scalar);
        self.derived(v, Op::Softplus(x), &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = norm::softmax(self.value(x), axis)?;
        Ok(self.derived(v, Op::Softmax(x, axis), &[x]))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let v = conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.derived(v, Op::Conv2d { x, w, b, spec }, &inputs))
    }

    pub fn bilinear_sample(&mut self, x: Var, pos: Var) -> Result<Var> {
        let v = bilinear_sample(self.value(x), self.value(pos))?;
        Ok(self.derived(v, Op::Bilinear(x, pos), &[x, pos]))
    }

    pub fn rot6d_to_matrix(&mut self, x: Var) -> Result<Var> {
        let v = rot6d_to_matrix(self.value(x))?;
        Ok(self.derived(v, Op::Rot6d(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.derived(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        self.derived(v, Op::Mean(x), &[x])
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Back-propagates from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::dim(format!(
                "backward: output must be scalar, got {:?}",
                self.shape(output)
            )));
        }
        let seed = Tensor::ones(self.shape(output));
        self.backward_with(output, seed)
    }

    /// Back-propagates an explicit cotangent `seed` for `output`.
    pub fn backward_with(&self, output: Var, seed: Tensor) -> Result<Gradients> {
        same_shape("backward seed", self.value(output), &seed)?;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        if self.nodes[output.0].needs_grad {
            grads[output.0] = Some(seed);
        }
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].clone() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                self.accumulate(grads, *a, zip_map(g, val(*b), |x, y| x * y));
                self.accumulate(grads, *b, zip_map(g, val(*a), |x, y| x * y));
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.map(|x| x * f)),
            Op::AddBroadcast(a, b) => {
                self.accumulate(grads, *a, g.clone());
                let bs = val(*b).shape().to_vec();
                let n = val(*b).len();
                let mut gb = vec![0.0; n];
                for (i, x) in g.data().iter().enumerate() {
                    gb[i % n] += x;
                }
                self.accumulate(grads, *b, Tensor::from_parts(bs, gb));
            }
            Op::Linear(x, w, b) => {
                let (gx, gw, gb) = linalg::linear_backward(val(*x), val(*w), g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Bmm(a, b) => {
                let (ga, gb) = linalg::bmm_backward(val(*a), val(*b), g);
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Reshape(x) => {
                let gx = g.reshape(val(*x).shape()).expect("same element count");
                self.accumulate(grads, *x, gx);
            }
            Op::Permute(x, axes) => {
                let gx = linalg::permute(g, &linalg::inverse_permutation(axes)).expect("valid permutation");
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                for p in parts {
                    let len = val(*p).shape()[*axis];
                    let gp = linalg::slice(g, *axis, start, len).expect("within concat extent");
                    self.accumulate(grads, *p, gp);
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let gx = linalg::slice_backward(g, val(*x).shape(), *axis, *start);
                self.accumulate(grads, *x, gx);
            }
            Op::Gather(x, index) => {
                let gx = linalg::gather_rows_backward(g, val(*x).shape(), index);
                self.accumulate(grads, *x, gx);
            }
            Op::LayerNorm { x, gamma, beta, cache } => {
                let (gx, gg, gb) = norm::layer_norm_backward(cache, val(*gamma), g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gamma, gg);
                self.accumulate(grads, *beta, gb);
            }
            Op::Gelu(x) => {
                let gx = zip_map(g, val(*x), |gv, xv| gv * norm::gelu_derivative(xv));
                self.accumulate(grads, *x, gx);
            }
            Op::Tanh(x) => {
                let gx = zip_map(g, &node.value, |gv, y| gv * (1.0 - y * y));
                self.accumulate(grads, *x, gx);
            }
            Op::Softplus(x) => {
                let gx = zip_map(g, val(*x), |gv, xv| gv * norm::sigmoid(xv));
                self.accumulate(grads, *x, gx);
            }
            Op::Softmax(x, axis) => {
                let gx = norm::softmax_backward(&node.value, g, *axis);
                self.accumulate(grads, *x, gx);
            }
            Op::Conv2d { x, w, b, spec } => {
                let (gx, gw, gb) = conv2d_backward(val(*x), val(*w), *spec, g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *w, gw);
                if let Some(b) = b {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Bilinear(x, pos) => {
                let (gx, gp) = bilinear_sample_backward(val(*x), val(*pos), g);
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *pos, gp);
            }
            Op::Rot6d(x) => {
                let gx = rot6d_backward(val(*x), g);
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let gx = Tensor::full(val(*x).shape(), g.item());
                self.accumulate(grads, *x, gx);
            }
            Op::Mean(x) => {
                let n = val(*x).len() as f64;
                let gx = Tensor::full(val(*x).shape(), g.item() / n);
                self.accumulate(grads, *x, gx);
            }
        }
    }
}
