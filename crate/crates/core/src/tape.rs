//! Fixed-topology reverse-mode differentiation.
//!
//! A `Tape` records primitive operations during the forward pass and replays
//! them in exact reverse order to accumulate gradients. The op set is exactly
//! what the codec networks, the factorized prior, and the update-rate
//! surrogate need; there is no graph compiler.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Handle to a node on a tape. Only valid for the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf { requires_grad: bool },
    Conv2d { x: NodeId, k: NodeId },
    BiasAdd { x: NodeId, b: NodeId },
    MulChannel { x: NodeId, s: NodeId },
    Relu { x: NodeId },
    MaxPool2 { x: NodeId, argmax: Vec<u32> },
    Upsample2 { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    AddScalar { x: NodeId },
    Tanh { x: NodeId },
    Sigmoid { x: NodeId },
    Softplus { x: NodeId },
    Exp { x: NodeId },
    Ln { x: NodeId },
    SumAll { x: NodeId },
    Reshape { x: NodeId },
    SliceChannels { x: NodeId, from: usize },
    LowerBound { x: NodeId, bound: f64 },
    UpperBound { x: NodeId, bound: f64 },
    /// Round-to-grid-then-clip on the forward pass, identity gradient on the
    /// backward pass (straight-through estimator).
    SteQuantize { x: NodeId },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradients of a scalar loss with respect to tape leaves.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a node; zero if the loss does not depend on it.
    /// Errors if the node was never recorded on the originating tape.
    pub fn get(&self, id: NodeId) -> Result<&Tensor> {
        self.grads
            .get(id.0)
            .and_then(|g| g.as_ref())
            .ok_or_else(|| Error::Tape(format!("no gradient slot for node {}", id.0)))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Record an input tensor. Parameters use `requires_grad = true`;
    /// data and noise use `false`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf { requires_grad }, value)
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId) -> Result<NodeId> {
        let v = tensor::conv2d_same(self.value(x), self.value(k))?;
        Ok(self.push(Op::Conv2d { x, k }, v))
    }

    pub fn bias_add(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::bias_add_channel(self.value(x), self.value(b))?;
        Ok(self.push(Op::BiasAdd { x, b }, v))
    }

    pub fn mul_channel(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let v = tensor::mul_channel(self.value(x), self.value(s))?;
        Ok(self.push(Op::MulChannel { x, s }, v))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = tensor::relu(self.value(x));
        self.push(Op::Relu { x }, v)
    }

    pub fn maxpool2(&mut self, x: NodeId) -> Result<NodeId> {
        let (v, argmax) = tensor::maxpool2(self.value(x))?;
        Ok(self.push(Op::MaxPool2 { x, argmax }, v))
    }

    pub fn upsample2(&mut self, x: NodeId) -> Result<NodeId> {
        let v = tensor::upsample2(self.value(x))?;
        Ok(self.push(Op::Upsample2 { x }, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(Op::Add { a, b }, v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(Op::Sub { a, b }, v))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(Op::Mul { a, b }, v))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| c * v);
        self.push(Op::Scale { x, c }, v)
    }

    pub fn add_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|v| v + c);
        self.push(Op::AddScalar { x }, v)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::tanh);
        self.push(Op::Tanh { x }, v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(tensor::sigmoid_scalar);
        self.push(Op::Sigmoid { x }, v)
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(tensor::softplus_scalar);
        self.push(Op::Softplus { x }, v)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::exp);
        self.push(Op::Exp { x }, v)
    }

    pub fn ln(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::ln);
        self.push(Op::Ln { x }, v)
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = tensor::sum_all(self.value(x));
        self.push(Op::SumAll { x }, v)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape { x }, v))
    }

    pub fn slice_channels(&mut self, x: NodeId, from: usize, to: usize) -> Result<NodeId> {
        let v = tensor::slice_channels(self.value(x), from, to)?;
        Ok(self.push(Op::SliceChannels { x, from }, v))
    }

    /// max(x, bound) with the gradient passed where x is above the bound or
    /// where the upstream gradient would push x upward.
    pub fn lower_bound(&mut self, x: NodeId, bound: f64) -> NodeId {
        let v = self.value(x).map(|v| v.max(bound));
        self.push(Op::LowerBound { x, bound }, v)
    }

    /// min(x, bound), mirror of `lower_bound`.
    pub fn upper_bound(&mut self, x: NodeId, bound: f64) -> NodeId {
        let v = self.value(x).map(|v| v.min(bound));
        self.push(Op::UpperBound { x, bound }, v)
    }

    /// Quantize to the update grid (bin width `t`, grid indices clamped to
    /// `[-k_max, k_max]`) on the forward pass; identity gradient backward.
    pub fn ste_quantize(&mut self, x: NodeId, t: f64, k_max: i64) -> NodeId {
        let v = self.value(x).map(|v| crate::update::quantize_scalar(v, t, k_max));
        self.push(Op::SteQuantize { x }, v)
    }

    fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        match &mut grads[id.0] {
            Some(existing) => {
                for (d, s) in existing.data_mut().iter_mut().zip(g.data()) {
                    *d += s;
                }
            }
            slot => *slot = Some(g),
        }
    }

    /// Reverse pass from a scalar loss node. Returns one accumulated gradient
    /// slot per reachable node; leaves that require gradients but are
    /// unreachable from the loss get explicit zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("node {} not recorded on this tape", loss.0)));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Tape("backward requires a scalar loss".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf { .. } => {
                    grads[idx] = Some(g); // keep for the caller
                }
                Op::Conv2d { x, k } => {
                    let gx = tensor::conv2d_same_grad_input(&g, self.value(*k))?;
                    let gk =
                        tensor::conv2d_same_grad_kernels(&g, self.value(*x), self.value(*k).shape())?;
                    Self::accumulate(&mut grads, *x, gx);
                    Self::accumulate(&mut grads, *k, gk);
                }
                Op::BiasAdd { x, b } => {
                    let (c, h, w) = (g.shape()[0], g.shape()[1], g.shape()[2]);
                    let mut gb = Tensor::zeros(&[c]);
                    for ci in 0..c {
                        gb.data_mut()[ci] = g.data()[ci * h * w..(ci + 1) * h * w].iter().sum();
                    }
                    Self::accumulate(&mut grads, *x, g);
                    Self::accumulate(&mut grads, *b, gb);
                }
                Op::MulChannel { x, s } => {
                    let xv = self.value(*x);
                    let sv = self.value(*s);
                    let (c, h, w) = (xv.shape()[0], xv.shape()[1], xv.shape()[2]);
                    let mut gs = Tensor::zeros(&[c]);
                    for ci in 0..c {
                        let mut acc = 0.0;
                        for j in ci * h * w..(ci + 1) * h * w {
                            acc += g.data()[j] * xv.data()[j];
                        }
                        gs.data_mut()[ci] = acc;
                    }
                    let gx = tensor::mul_channel(&g, sv)?;
                    Self::accumulate(&mut grads, *x, gx);
                    Self::accumulate(&mut grads, *s, gs);
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (d, s) in gx.data_mut().iter_mut().zip(xv.data()) {
                        if *s <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let gx = tensor::maxpool2_backward(&g, argmax, self.value(*x).shape());
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::Upsample2 { x } => {
                    let gx = tensor::upsample2_backward(&g, self.value(*x).shape());
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::Add { a, b } => {
                    Self::accumulate(&mut grads, *b, g.clone());
                    Self::accumulate(&mut grads, *a, g);
                }
                Op::Sub { a, b } => {
                    Self::accumulate(&mut grads, *b, g.map(|v| -v));
                    Self::accumulate(&mut grads, *a, g);
                }
                Op::Mul { a, b } => {
                    let ga = tensor::mul(&g, self.value(*b))?;
                    let gb = tensor::mul(&g, self.value(*a))?;
                    Self::accumulate(&mut grads, *a, ga);
                    Self::accumulate(&mut grads, *b, gb);
                }
                Op::Scale { x, c } => {
                    Self::accumulate(&mut grads, *x, g.map(|v| c * v));
                }
                Op::AddScalar { x } => {
                    Self::accumulate(&mut grads, *x, g);
                }
                Op::Tanh { x } => {
                    let y = &node.value;
                    let mut gx = g;
                    for (d, t) in gx.data_mut().iter_mut().zip(y.data()) {
                        *d *= 1.0 - t * t;
                    }
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid { x } => {
                    let y = &node.value;
                    let mut gx = g;
                    for (d, s) in gx.data_mut().iter_mut().zip(y.data()) {
                        *d *= s * (1.0 - s);
                    }
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::Softplus { x } => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (d, s) in gx.data_mut().iter_mut().zip(xv.data()) {
                        *d *= tensor::sigmoid_scalar(*s);
                    }
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::Exp { x } => {
                    let gx = tensor::mul(&g, &node.value)?;
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::Ln { x } => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (d, s) in gx.data_mut().iter_mut().zip(xv.data()) {
                        *d /= s;
                    }
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::SumAll { x } => {
                    let gx = Tensor::full(self.value(*x).shape(), g.item());
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::Reshape { x } => {
                    let gx = g.reshaped(self.value(*x).shape())?;
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::SliceChannels { x, from } => {
                    let xs = self.value(*x).shape();
                    let (h, w) = (xs[1], xs[2]);
                    let mut gx = Tensor::zeros(xs);
                    let dst = gx.data_mut();
                    let base = from * h * w;
                    for (j, s) in g.data().iter().enumerate() {
                        dst[base + j] = *s;
                    }
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::LowerBound { x, bound } => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (d, s) in gx.data_mut().iter_mut().zip(xv.data()) {
                        if !(*s >= *bound || *d < 0.0) {
                            *d = 0.0;
                        }
                    }
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::UpperBound { x, bound } => {
                    let xv = self.value(*x);
                    let mut gx = g;
                    for (d, s) in gx.data_mut().iter_mut().zip(xv.data()) {
                        if !(*s <= *bound || *d > 0.0) {
                            *d = 0.0;
                        }
                    }
                    Self::accumulate(&mut grads, *x, gx);
                }
                Op::SteQuantize { x } => {
                    Self::accumulate(&mut grads, *x, g);
                }
            }
        }

        // zero-fill leaves that require grad but were never reached
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { requires_grad: true } = node.op {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(node.value.shape()));
                }
            }
        }
        Ok(Gradients { grads })
    }
}
