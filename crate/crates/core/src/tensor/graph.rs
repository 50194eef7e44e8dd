use std::cell::{Cell, RefCell};
use std::fmt;

use super::kernels::{self, DwConvGeom, LayerNormCache, MatmulPlan};
use super::{Scalar, Tensor, TensorError, TensorResult};

type CustomBackward<T> = Box<dyn Fn(&[Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>>>;

enum Op<T> {
    Leaf,
    Add(usize, usize),
    /// `x + y` with `y`'s shape a suffix of `x`'s (bias, positional table).
    AddSuffix(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Gelu(usize),
    Sigmoid(usize),
    MatMul(usize, usize, MatmulPlan),
    Softmax(usize, usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        cache: LayerNormCache<T>,
    },
    Permute(usize, Vec<usize>),
    Reshape(usize),
    MeanAxis(usize, usize),
    Sum(usize),
    DepthwiseConv {
        x: usize,
        kernel: usize,
        bias: usize,
        geom: DwConvGeom,
    },
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Custom {
        inputs: Vec<usize>,
        backward: CustomBackward<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// A recording graph keeps each node's backward rule; an inference graph
/// (see [`Graph::inference`]) keeps only values and never tracks gradients.
/// Graphs are single-threaded by construction (`!Sync`).
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
    macs: Cell<u64>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            macs: Cell::new(0),
        }
    }

    /// A graph that evaluates forward passes without recording backward rules.
    pub fn inference() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulates performed so far by matmul, depthwise
    /// convolution, and tensor-tensor products.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    fn count(&self, macs: u64) {
        self.macs.set(self.macs.get() + macs);
    }

    /// Trainable leaf (gradients are tracked on recording graphs).
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, self.recording)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let op = if self.recording && requires_grad {
            op
        } else {
            Op::Leaf
        };
        nodes.push(Node {
            value,
            op,
            requires_grad: self.recording && requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn result(&self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, inputs: &[usize]) -> Var<'_, T> {
        let rg = inputs.iter().any(|&i| self.requires_grad(i));
        let value = Tensor::new(shape, value).expect("kernel output length");
        self.push(value, op, rg)
    }

    /// Registers an operation with a caller-supplied vector-Jacobian product.
    ///
    /// `backward(inputs, output, grad_output)` must return one gradient per
    /// input, each shaped like that input.
    pub fn custom<'g, F>(
        &'g self,
        inputs: &[Var<'g, T>],
        output: Tensor<T>,
        backward: F,
    ) -> Var<'g, T>
    where
        F: Fn(&[Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>> + 'static,
    {
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let rg = ids.iter().any(|&i| self.requires_grad(i));
        self.push(
            output,
            Op::Custom {
                inputs: ids,
                backward: Box::new(backward),
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> TensorResult<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::ONE]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            let mut acc = Accumulator {
                nodes: &nodes,
                grads: &mut grads,
            };
            node.backprop(&dy, &mut acc);
            grads[id] = Some(dy);
        }

        let grads = grads
            .into_iter()
            .zip(nodes.iter())
            .map(|(g, n)| g.map(|g| Tensor::new(n.value.shape().to_vec(), g).expect("grad shape")))
            .collect();
        Ok(Gradients { grads })
    }
}

struct Accumulator<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<T: Scalar> Accumulator<'_, T> {
    fn wants(&self, id: usize) -> bool {
        self.nodes[id].requires_grad
    }

    fn val(&self, id: usize) -> &Tensor<T> {
        &self.nodes[id].value
    }

    /// Mutable gradient buffer for `id`, zero-initialized on first use.
    fn buf(&mut self, id: usize) -> &mut [T] {
        let n = self.nodes[id].value.numel();
        self.grads[id].get_or_insert_with(|| vec![T::ZERO; n])
    }

    fn with(&mut self, id: usize, f: impl FnOnce(&mut [T])) {
        if self.wants(id) {
            f(self.buf(id));
        }
    }
}

impl<T: Scalar> Node<T> {
    fn backprop(&self, dy: &[T], acc: &mut Accumulator<'_, T>) {
        match &self.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &i in &[*a, *b] {
                    acc.with(i, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d));
                }
            }
            Op::AddSuffix(x, y) => {
                acc.with(*x, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d));
                let len = acc.val(*y).numel();
                acc.with(*y, |g| {
                    for chunk in dy.chunks(len) {
                        g.iter_mut().zip(chunk).for_each(|(g, &d)| *g += d);
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (acc.val(*a).clone(), acc.val(*b).clone());
                acc.with(*a, |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(bv.data()) {
                        *g += d * o;
                    }
                });
                acc.with(*b, |g| {
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(av.data()) {
                        *g += d * o;
                    }
                });
            }
            Op::Scale(x, s) => {
                let s = *s;
                acc.with(*x, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d * s));
            }
            Op::Gelu(x) => {
                let xv = acc.val(*x).clone();
                acc.with(*x, |g| {
                    for ((g, &d), &v) in g.iter_mut().zip(dy).zip(xv.data()) {
                        *g += d * kernels::gelu_grad(v);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = self.value.data();
                acc.with(*x, |g| {
                    for ((g, &d), &s) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * s * (T::ONE - s);
                    }
                });
            }
            Op::MatMul(a, b, plan) => {
                let (av, bv) = (acc.val(*a).clone(), acc.val(*b).clone());
                acc.with(*a, |g| kernels::matmul_grad_a(plan, dy, bv.data(), g));
                acc.with(*b, |g| kernels::matmul_grad_b(plan, dy, av.data(), g));
            }
            Op::Softmax(x, axis) => {
                let y = &self.value;
                acc.with(*x, |g| {
                    kernels::softmax_backward(y.data(), dy, y.shape(), *axis, g)
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                cache,
            } => {
                let gv = acc.val(*gamma).clone();
                let d = gv.numel();
                let mut dx = acc.wants(*x).then(|| vec![T::ZERO; dy.len()]);
                let mut dg = acc.wants(*gamma).then(|| vec![T::ZERO; d]);
                let mut db = acc.wants(*beta).then(|| vec![T::ZERO; d]);
                kernels::layer_norm_backward(
                    dy,
                    d,
                    gv.data(),
                    cache,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (id, part) in [(*x, dx), (*gamma, dg), (*beta, db)] {
                    if let Some(part) = part {
                        acc.with(id, |g| g.iter_mut().zip(&part).for_each(|(g, &p)| *g += p));
                    }
                }
            }
            Op::Permute(x, axes) => {
                let inv = kernels::inverse_axes(axes);
                let back = kernels::permute_raw(self.value.shape(), dy, &inv);
                acc.with(*x, |g| g.iter_mut().zip(&back).for_each(|(g, &d)| *g += d));
            }
            Op::Reshape(x) => {
                acc.with(*x, |g| g.iter_mut().zip(dy).for_each(|(g, &d)| *g += d));
            }
            Op::MeanAxis(x, axis) => {
                let shape = acc.val(*x).shape().to_vec();
                let (outer, len, inner) = kernels::axis_split(&shape, *axis);
                let inv = T::ONE / T::from_usize(len);
                acc.with(*x, |g| {
                    for o in 0..outer {
                        for j in 0..len {
                            for i in 0..inner {
                                g[(o * len + j) * inner + i] += dy[o * inner + i] * inv;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                let d = dy[0];
                acc.with(*x, |g| g.iter_mut().for_each(|g| *g += d));
            }
            Op::DepthwiseConv {
                x,
                kernel,
                bias,
                geom,
            } => {
                let (xv, kv) = (acc.val(*x).clone(), acc.val(*kernel).clone());
                let mut dx = acc.wants(*x).then(|| vec![T::ZERO; xv.numel()]);
                let mut dk = acc.wants(*kernel).then(|| vec![T::ZERO; kv.numel()]);
                let mut db = acc.wants(*bias).then(|| vec![T::ZERO; geom.c]);
                kernels::dwconv_backward(
                    geom,
                    xv.data(),
                    kv.data(),
                    dy,
                    dx.as_deref_mut(),
                    dk.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (id, part) in [(*x, dx), (*kernel, dk), (*bias, db)] {
                    if let Some(part) = part {
                        acc.with(id, |g| g.iter_mut().zip(&part).for_each(|(g, &p)| *g += p));
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let b = labels.len();
                let c = probs.len() / b;
                let scale = dy[0] / T::from_usize(b);
                acc.with(*logits, |g| {
                    for (r, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { T::ONE } else { T::ZERO };
                            g[r * c + j] += (probs[r * c + j] - onehot) * scale;
                        }
                    }
                });
            }
            Op::Custom { inputs, backward } => {
                let vals: Vec<Tensor<T>> = inputs.iter().map(|&i| acc.val(i).clone()).collect();
                let dyt =
                    Tensor::new(self.value.shape().to_vec(), dy.to_vec()).expect("grad shape");
                let parts = backward(&vals, &self.value, &dyt);
                assert_eq!(parts.len(), inputs.len(), "custom backward arity");
                for (&id, part) in inputs.iter().zip(parts) {
                    assert_eq!(part.shape(), acc.val(id).shape(), "custom backward shape");
                    acc.with(id, |g| {
                        g.iter_mut().zip(part.data()).for_each(|(g, &p)| *g += p)
                    });
                }
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by graph node.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros if the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Scalar> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> TensorResult<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Tensor<T> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    fn unary(&self, f: impl Fn(T) -> T, op: Op<T>) -> Var<'g, T> {
        let x = self.value();
        let data = x.data().iter().map(|&v| f(v)).collect();
        self.graph.result(data, x.shape().to_vec(), op, &[self.id])
    }

    pub fn add(&self, other: Var<'g, T>) -> TensorResult<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.graph.result(
            data,
            a.shape().to_vec(),
            Op::Add(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    /// `self + other` where `other`'s shape equals a trailing suffix of
    /// `self`'s shape, broadcast over the leading axes.
    pub fn add_broadcast(&self, other: Var<'g, T>) -> TensorResult<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(TensorError::ShapeMismatch {
                op: "add_broadcast",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let len = b.numel();
        let mut data = a.data().to_vec();
        for chunk in data.chunks_mut(len) {
            chunk.iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
        }
        Ok(self.graph.result(
            data,
            sa.to_vec(),
            Op::AddSuffix(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    pub fn mul(&self, other: Var<'g, T>) -> TensorResult<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x * y)
            .collect();
        self.graph.count(a.numel() as u64);
        Ok(self.graph.result(
            data,
            a.shape().to_vec(),
            Op::Mul(self.id, other.id),
            &[self.id, other.id],
        ))
    }

    pub fn scale(&self, s: T) -> Var<'g, T> {
        self.unary(|v| v * s, Op::Scale(self.id, s))
    }

    /// Gaussian error linear unit, exact erf form.
    pub fn gelu(&self) -> Var<'g, T> {
        self.unary(kernels::gelu, Op::Gelu(self.id))
    }

    pub fn sigmoid(&self) -> Var<'g, T> {
        self.unary(kernels::sigmoid, Op::Sigmoid(self.id))
    }

    /// Batched matrix product `[..., m, k] x [..., k, n]` with broadcast batch axes.
    pub fn matmul(&self, other: Var<'g, T>) -> TensorResult<Var<'g, T>> {
        let (a, b) = (self.value(), other.value());
        let plan = MatmulPlan::new(a.shape(), b.shape())?;
        let data = kernels::matmul_forward(&plan, a.data(), b.data());
        self.graph.count(plan.macs());
        let shape = plan.out_shape.clone();
        Ok(self.graph.result(
            data,
            shape,
            Op::MatMul(self.id, other.id, plan),
            &[self.id, other.id],
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> TensorResult<Var<'g, T>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                shape: x.shape().to_vec(),
            });
        }
        if x.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        let data = kernels::softmax_forward(x.data(), x.shape(), axis);
        Ok(self.graph.result(
            data,
            x.shape().to_vec(),
            Op::Softmax(self.id, axis),
            &[self.id],
        ))
    }

    /// Normalizes over the last axis (population variance), then applies
    /// `gamma * x̂ + beta`.
    pub fn layer_norm(
        &self,
        gamma: Var<'g, T>,
        beta: Var<'g, T>,
        eps: T,
    ) -> TensorResult<Var<'g, T>> {
        let (x, g, b) = (self.value(), gamma.value(), beta.value());
        let d = *x.shape().last().ok_or_else(|| TensorError::Rank {
            op: "layer_norm",
            expected: ">= 1".into(),
            shape: x.shape().to_vec(),
        })?;
        if g.shape() != [d] || b.shape() != [d] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if eps <= T::ZERO {
            return Err(TensorError::Invalid {
                op: "layer_norm",
                msg: "eps must be positive".into(),
            });
        }
        let (data, cache) = kernels::layer_norm_forward(x.data(), d, g.data(), b.data(), eps);
        let op = Op::LayerNorm {
            x: self.id,
            gamma: gamma.id,
            beta: beta.id,
            cache,
        };
        Ok(self
            .graph
            .result(data, x.shape().to_vec(), op, &[self.id, gamma.id, beta.id]))
    }

    /// Output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> TensorResult<Var<'g, T>> {
        let x = self.value();
        kernels::validate_axes(x.shape(), axes)?;
        let data = kernels::permute_raw(x.shape(), x.data(), axes);
        let shape = kernels::permuted_shape(x.shape(), axes);
        Ok(self
            .graph
            .result(data, shape, Op::Permute(self.id, axes.to_vec()), &[self.id]))
    }

    pub fn transpose_last2(&self) -> TensorResult<Var<'g, T>> {
        let r = self.shape().len();
        if r < 2 {
            return Err(TensorError::Rank {
                op: "transpose_last2",
                expected: ">= 2".into(),
                shape: self.shape(),
            });
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> TensorResult<Var<'g, T>> {
        let x = self.value();
        let y = x.reshape(shape.to_vec())?;
        let rg = self.requires_grad();
        Ok(self.graph.push(y, Op::Reshape(self.id), rg))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> TensorResult<Var<'g, T>> {
        let x = self.value();
        if axis >= x.rank() {
            return Err(TensorError::Axis {
                op: "mean_axis",
                axis,
                shape: x.shape().to_vec(),
            });
        }
        let (outer, len, inner) = kernels::axis_split(x.shape(), axis);
        let inv = T::ONE / T::from_usize(len);
        let src = x.data();
        let mut out = vec![T::ZERO; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let row = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                out[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(row)
                    .for_each(|(acc, &v)| *acc += v);
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = x.shape().to_vec();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self
            .graph
            .result(out, shape, Op::MeanAxis(self.id, axis), &[self.id]))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&self) -> Var<'g, T> {
        let x = self.value();
        let s = x.data().iter().copied().sum();
        self.graph
            .result(vec![s], vec![1], Op::Sum(self.id), &[self.id])
    }

    /// Stride-1 depthwise convolution over NHWC input with zero "same"
    /// padding. `kernel` is `[kh, kw, c]` (odd sizes), `bias` is `[c]`.
    pub fn depthwise_conv2d(
        &self,
        kernel: Var<'g, T>,
        bias: Var<'g, T>,
    ) -> TensorResult<Var<'g, T>> {
        let (x, k, b) = (self.value(), kernel.value(), bias.value());
        let xs = x.shape();
        if xs.len() != 4 {
            return Err(TensorError::Rank {
                op: "depthwise_conv2d",
                expected: "4 (b, h, w, c)".into(),
                shape: xs.to_vec(),
            });
        }
        let ks = k.shape();
        if ks.len() != 3
            || ks[2] != xs[3]
            || ks[0] % 2 == 0
            || ks[1] % 2 == 0
            || b.shape() != [xs[3]]
        {
            return Err(TensorError::ShapeMismatch {
                op: "depthwise_conv2d",
                lhs: xs.to_vec(),
                rhs: ks.to_vec(),
            });
        }
        let geom = DwConvGeom {
            batch: xs[0],
            h: xs[1],
            w: xs[2],
            c: xs[3],
            kh: ks[0],
            kw: ks[1],
        };
        let data = kernels::dwconv_forward(&geom, x.data(), k.data(), b.data());
        self.graph.count(geom.macs());
        let op = Op::DepthwiseConv {
            x: self.id,
            kernel: kernel.id,
            bias: bias.id,
            geom,
        };
        Ok(self
            .graph
            .result(data, xs.to_vec(), op, &[self.id, kernel.id, bias.id]))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(self)` for
    /// logits shaped `[batch, classes]`, via log-sum-exp.
    pub fn cross_entropy(&self, labels: &[usize]) -> TensorResult<Var<'g, T>> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let c = s[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Invalid {
                op: "cross_entropy",
                msg: format!("label {bad} out of range for {c} classes"),
            });
        }
        if !x.all_finite() {
            return Err(TensorError::NonFinite {
                op: "cross_entropy",
            });
        }
        let probs = kernels::softmax_forward(x.data(), s, 1);
        let mut total = T::ZERO;
        for (r, &label) in labels.iter().enumerate() {
            let row = &x.data()[r * c..(r + 1) * c];
            let max = row.iter().copied().fold(row[0], T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total += lse - row[label];
        }
        let loss = total / T::from_usize(labels.len());
        let op = Op::CrossEntropy {
            logits: self.id,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.graph.result(vec![loss], vec![1], op, &[self.id]))
    }
}
