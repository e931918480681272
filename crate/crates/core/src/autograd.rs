//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every operator appends a node to the [`Tape`]; node order is a
//! topological order, so [`Tape::backward`] walks the tape in reverse.
//! Only leaves keep their gradients after a backward pass. Repeated calls
//! accumulate into them.

use crate::error::{invalid, shape_err, Error, Result};
use crate::kernels::{conv2d_backward, conv2d_forward, ConvGeometry, ResizePlan};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise loss applied by [`Tape::weighted_loss`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointLoss {
    /// Binary cross-entropy on logits.
    BceWithLogits,
    /// Huber loss with unit threshold on `x - target`.
    SmoothL1,
}

impl PointLoss {
    fn value<T: Scalar>(self, x: T, t: T) -> T {
        match self {
            // max(x, 0) - x t + ln(1 + e^{-|x|})
            PointLoss::BceWithLogits => x.max(T::zero()) - x * t + (-x.abs()).exp().ln_1p(),
            PointLoss::SmoothL1 => {
                let d = (x - t).abs();
                if d < T::one() {
                    T::of(0.5) * d * d
                } else {
                    d - T::of(0.5)
                }
            }
        }
    }

    fn derivative<T: Scalar>(self, x: T, t: T) -> T {
        match self {
            PointLoss::BceWithLogits => sigmoid(x) - t,
            PointLoss::SmoothL1 => {
                let d = x - t;
                if d.abs() < T::one() {
                    d
                } else {
                    d.signum()
                }
            }
        }
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geometry: ConvGeometry, cols: Vec<T> },
    Resize { input: Var, plan: ResizePlan<T> },
    Add(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    MulScalar(Var, T),
    Sum(Var),
    WeightedLoss { input: Var, kind: PointLoss, targets: Vec<T>, weights: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// One forward/backward episode.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. `requires_grad` leaves receive gradients on backward.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape4 {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var], name: &str) -> Result<Var> {
        value.ensure_finite(name)?;
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Ok(Var(self.nodes.len() - 1))
    }

    /// 2-D convolution with zero padding. `bias` must hold `out_channels`
    /// elements.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        if xs.c != ws.c {
            return Err(shape_err(format!(
                "conv2d input has {} channels, weight expects {}",
                xs.c, ws.c
            )));
        }
        if stride == 0 {
            return Err(invalid("conv2d stride must be >= 1"));
        }
        if self.value(bias).numel() != ws.n {
            return Err(shape_err(format!(
                "conv2d bias has {} elements, expected {}",
                self.value(bias).numel(),
                ws.n
            )));
        }
        let geometry = ConvGeometry {
            input: xs,
            out_channels: ws.n,
            kernel_h: ws.h,
            kernel_w: ws.w,
            stride,
            padding,
        };
        let out_shape = geometry
            .output_shape()
            .ok_or_else(|| shape_err(format!("conv2d output of {xs} with {ws} kernel is empty")))?;
        let (out, cols) = conv2d_forward(
            &geometry,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let value = Tensor::from_vec(out_shape, out)?;
        let cols = if self.requires_grad(weight) { cols } else { Vec::new() };
        self.push(value, Op::Conv2d { input, weight, bias, geometry, cols }, &[input, weight, bias], "conv2d")
    }

    /// Half-pixel-center bilinear resize of every channel plane.
    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        if out_h == 0 || out_w == 0 {
            return Err(invalid("resize target must be at least 1x1"));
        }
        let s = self.shape(input);
        let plan = ResizePlan::new(s.h, s.w, out_h, out_w);
        let out = plan.forward(self.value(input).data(), s.h, s.w);
        let value = Tensor::from_vec(Shape4::new(s.n, s.c, out_h, out_w), out)?;
        self.push(value, Op::Resize { input, plan }, &[input], "resize_bilinear")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!("add of {} and {}", self.shape(a), self.shape(b))));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(value, Op::Add(a, b), &[a, b], "add")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(a), &[a], "relu")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a], "sigmoid")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.exp());
        self.push(value, Op::Exp(a), &[a], "exp")
    }

    pub fn mul_scalar(&mut self, a: Var, k: T) -> Result<Var> {
        let value = self.value(a).map(|v| v * k);
        self.push(value, Op::MulScalar(a, k), &[a], "mul_scalar")
    }

    /// Sum of all elements as a `1x1x1x1` tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).data().iter().copied().sum());
        self.push(value, Op::Sum(a), &[a], "sum")
    }

    /// `sum_i weights[i] * loss(input[i], targets[i])` as a scalar.
    pub fn weighted_loss(&mut self, input: Var, kind: PointLoss, targets: Vec<T>, weights: Vec<T>) -> Result<Var> {
        let n = self.value(input).numel();
        if targets.len() != n || weights.len() != n {
            return Err(shape_err(format!(
                "loss targets/weights ({}/{}) do not match input of {n} elements",
                targets.len(),
                weights.len()
            )));
        }
        let total = self
            .value(input)
            .data()
            .iter()
            .zip(targets.iter().zip(&weights))
            .filter(|(_, (_, &w))| w != T::zero())
            .map(|(&x, (&t, &w))| w * kind.value(x, t))
            .sum();
        self.push(
            Tensor::scalar(total),
            Op::WeightedLoss { input, kind, targets, weights },
            &[input],
            "weighted_loss",
        )
    }

    /// Propagates d(loss)/d(node) to every tracked leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != Shape4::scalar() {
            return Err(shape_err(format!("backward needs a scalar loss, got {}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let slot = &mut self.nodes[i].grad;
                match slot {
                    Some(acc) => acc.add_assign(&g),
                    None => *slot = Some(g),
                }
                continue;
            }
            let node = &self.nodes[i];
            let send = |target: Var, delta: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| {
                assert!(target.0 < i, "tape order violated");
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&delta),
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv2d { input, weight, bias, geometry, cols } => {
                    let need_in = self.nodes[input.0].requires_grad;
                    let need_w = self.nodes[weight.0].requires_grad;
                    let need_b = self.nodes[bias.0].requires_grad;
                    let r = conv2d_backward(
                        geometry,
                        self.nodes[input.0].value.data(),
                        self.nodes[weight.0].value.data(),
                        cols,
                        g.data(),
                        need_in,
                        need_w,
                        need_b,
                    );
                    if let Some(d) = r.input {
                        send(*input, Tensor::from_vec(geometry.input, d)?, &mut grads);
                    }
                    if let Some(d) = r.weight {
                        send(*weight, Tensor::from_vec(self.nodes[weight.0].value.shape(), d)?, &mut grads);
                    }
                    if let Some(d) = r.bias {
                        send(*bias, Tensor::from_vec(self.nodes[bias.0].value.shape(), d)?, &mut grads);
                    }
                }
                Op::Resize { input, plan } => {
                    let s = self.nodes[input.0].value.shape();
                    let d = plan.backward(g.data(), s.h, s.w);
                    send(*input, Tensor::from_vec(s, d)?, &mut grads);
                }
                Op::Add(a, b) => {
                    if self.nodes[b.0].requires_grad {
                        send(*b, g.clone(), &mut grads);
                    }
                    send(*a, g, &mut grads);
                }
                Op::Relu(a) => {
                    let x = &self.nodes[a.0].value;
                    let mut d = g;
                    for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                        if xv <= T::zero() {
                            *dv = T::zero();
                        }
                    }
                    send(*a, d, &mut grads);
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for (dv, &yv) in d.data_mut().iter_mut().zip(y.data()) {
                        *dv *= yv * (T::one() - yv);
                    }
                    send(*a, d, &mut grads);
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let mut d = g;
                    for (dv, &yv) in d.data_mut().iter_mut().zip(y.data()) {
                        *dv *= yv;
                    }
                    send(*a, d, &mut grads);
                }
                Op::MulScalar(a, k) => {
                    let k = *k;
                    send(*a, g.map(|v| v * k), &mut grads);
                }
                Op::Sum(a) => {
                    let s = self.nodes[a.0].value.shape();
                    send(*a, Tensor::full(s, g.item()), &mut grads);
                }
                Op::WeightedLoss { input, kind, targets, weights } => {
                    let upstream = g.item();
                    let x = &self.nodes[input.0].value;
                    let mut d = Tensor::zeros(x.shape());
                    for (((dv, &xv), &t), &w) in
                        d.data_mut().iter_mut().zip(x.data()).zip(targets).zip(weights)
                    {
                        if w != T::zero() {
                            *dv = upstream * w * kind.derivative(xv, t);
                        }
                    }
                    send(*input, d, &mut grads);
                }
            }
        }
        for node in &self.nodes[..=loss.0] {
            if let (Op::Leaf, Some(g)) = (&node.op, &node.grad) {
                if !g.all_finite() {
                    return Err(Error::NonFinite("backward".into()));
                }
            }
        }
        Ok(())
    }
}
