//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and backward is a single reverse sweep.

use std::collections::hash_map::DefaultHasher;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::kernels;
use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::Tensor;

/// A differentiable scalar function applied elementwise by [`Graph::map`].
pub trait ScalarFn: Send + Sync + fmt::Debug {
    fn value(&self, x: f64) -> f64;
    fn derivative(&self, x: f64) -> f64;

    /// Identifies the smooth piece `x` falls in, for piecewise functions.
    fn piece(&self, _x: f64) -> u8 {
        0
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Batch statistics produced by a training-mode batchnorm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: Var, kernel: Var, stride: usize, pad: usize },
    DepthwiseConv2d { input: Var, kernel: Var, stride: usize, pad: usize },
    MaxPool2x2 { input: Var, argmax: Vec<u32> },
    Upsample2x { input: Var },
    SoftmaxRows { input: Var, row_len: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Concat(Vec<Var>),
    BatchNorm { input: Var, scale: Var, shift: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    ChannelAffine { input: Var, scale: Var, shift: Var, mean: Vec<f64>, inv_std: Vec<f64> },
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Map { input: Var, f: Arc<dyn ScalarFn> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient of a scalar with respect to every node that influenced it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same-shape zip")
}

fn unary_map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|x| f(*x)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same-shape map")
}

impl Graph {
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::conv2d(self.value(input), self.value(kernel), stride, pad)?;
        let rg = self.needs(&[input, kernel]);
        Ok(self.push(out, Op::Conv2d { input, kernel, stride, pad }, rg))
    }

    pub fn depthwise_conv2d(&mut self, input: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = kernels::depthwise_conv2d(self.value(input), self.value(kernel), stride, pad)?;
        let rg = self.needs(&[input, kernel]);
        Ok(self.push(out, Op::DepthwiseConv2d { input, kernel, stride, pad }, rg))
    }

    pub fn maxpool2x2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = kernels::maxpool2x2(self.value(input))?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::MaxPool2x2 { input, argmax }, rg))
    }

    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let out = kernels::upsample2x(self.value(input))?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::Upsample2x { input }, rg))
    }

    /// Softmax over each consecutive run of `row_len` elements.
    pub fn softmax_rows(&mut self, input: Var, row_len: usize) -> Result<Var> {
        let out = kernels::softmax_rows(self.value(input), row_len)?;
        let rg = self.needs(&[input]);
        Ok(self.push(out, Op::SoftmaxRows { input, row_len }, rg))
    }

    /// Softmax over the spatial plane of each `(n, c)` slice.
    pub fn spatial_softmax(&mut self, input: Var) -> Result<Var> {
        let [_, _, h, w] = self.value(input).dims4("spatial_softmax")?;
        self.softmax_rows(input, h * w)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = unary_map(self.value(a), |x| factor * x);
        let rg = self.needs(&[a]);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = unary_map(self.value(a), |x| x.max(0.0));
        let rg = self.needs(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let vals: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = kernels::concat_channels(&vals)?;
        let rg = self.needs(inputs);
        Ok(self.push(out, Op::Concat(inputs.to_vec()), rg))
    }

    /// Training-mode batch normalization over N, H, W per channel.
    pub fn batch_norm(&mut self, input: Var, scale: Var, shift: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (mean, var) = kernels::channel_moments(self.value(input))?;
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let c = mean.len();
        let out = kernels::channel_affine(
            self.value(input),
            self.value(scale),
            self.value(shift),
            &mean,
            &inv_std,
        )?;
        let ones = Tensor::ones(vec![c]);
        let zeros = Tensor::zeros(vec![c]);
        let xhat = kernels::channel_affine(self.value(input), &ones, &zeros, &mean, &inv_std)?.into_data();
        let rg = self.needs(&[input, scale, shift]);
        let v = self.push(out, Op::BatchNorm { input, scale, shift, xhat, inv_std }, rg);
        Ok((v, BatchStats { mean, var }))
    }

    /// `scale · (x − mean) / sqrt(var + eps) + shift` with fixed statistics.
    pub fn batch_norm_inference(
        &mut self,
        input: Var,
        scale: Var,
        shift: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.affine_with(input, scale, shift, mean.to_vec(), inv_std)
    }

    /// Per-channel `scale · x + shift`.
    pub fn channel_affine(&mut self, input: Var, scale: Var, shift: Var) -> Result<Var> {
        let c = self.value(input).dims4("channel_affine")?[1];
        self.affine_with(input, scale, shift, vec![0.0; c], vec![1.0; c])
    }

    fn affine_with(&mut self, input: Var, scale: Var, shift: Var, mean: Vec<f64>, inv_std: Vec<f64>) -> Result<Var> {
        let c = self.value(input).dims4("channel_affine")?[1];
        if mean.len() != c || inv_std.len() != c {
            return Err(shape_mismatch("channel_affine", self.value(input).shape(), &[mean.len()]));
        }
        let out = kernels::channel_affine(self.value(input), self.value(scale), self.value(shift), &mean, &inv_std)?;
        let rg = self.needs(&[input, scale, shift]);
        Ok(self.push(out, Op::ChannelAffine { input, scale, shift, mean, inv_std }, rg))
    }

    /// Matrix product of rank-2 operands or batched rank-3 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = kernels::matmul(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let out = kernels::transpose_last2(self.value(a))?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self.value(a).reshape(shape)?;
        let rg = self.needs(&[a]);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn map(&mut self, a: Var, f: Arc<dyn ScalarFn>) -> Var {
        let out = unary_map(self.value(a), |x| f.value(x));
        let rg = self.needs(&[a]);
        self.push(out, Op::Map { input: a, f }, rg)
    }

    /// Hash of every branch decision taken by piecewise ops (relu signs,
    /// pooling winners, [`ScalarFn::piece`]). Two evaluations with equal
    /// signatures lie on the same smooth piece of the recorded function.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => {
                    for v in self.value(*a).data() {
                        (*v > 0.0).hash(&mut h);
                    }
                }
                Op::MaxPool2x2 { argmax, .. } => argmax.hash(&mut h),
                Op::Map { input, f } => {
                    for v in self.value(*input).data() {
                        f.piece(*v).hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => {
                    for (e, x) in existing.data_mut().iter_mut().zip(t.data()) {
                        *e += x;
                    }
                }
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, stride, pad } => {
                let (dx, dk) = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *stride,
                    *pad,
                    self.nodes[input.0].requires_grad,
                    self.nodes[kernel.0].requires_grad,
                )?;
                if let Some(dx) = dx {
                    acc(*input, dx);
                }
                if let Some(dk) = dk {
                    acc(*kernel, dk);
                }
            }
            Op::DepthwiseConv2d { input, kernel, stride, pad } => {
                let (dx, dk) = kernels::depthwise_conv2d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    *stride,
                    *pad,
                )?;
                acc(*input, dx);
                acc(*kernel, dk);
            }
            Op::MaxPool2x2 { input, argmax } => {
                acc(*input, kernels::maxpool2x2_backward(self.value(*input).shape(), argmax, g)?);
            }
            Op::Upsample2x { input } => {
                acc(*input, kernels::upsample2x_backward(self.value(*input).shape(), g)?);
            }
            Op::SoftmaxRows { input, row_len } => {
                acc(*input, kernels::softmax_rows_backward(&node.value, g, *row_len)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, unary_map(g, |x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, zip_map(g, self.value(*b), |x, y| x * y));
                acc(*b, zip_map(g, self.value(*a), |x, y| x * y));
            }
            Op::Scale(a, f) => acc(*a, unary_map(g, |x| f * x)),
            Op::Relu(a) => acc(*a, zip_map(g, self.value(*a), |gx, x| if x > 0.0 { gx } else { 0.0 })),
            Op::Concat(inputs) => {
                let shapes: Vec<Vec<usize>> = inputs.iter().map(|v| self.value(*v).shape().to_vec()).collect();
                for (v, t) in inputs.iter().zip(kernels::concat_channels_backward(&shapes, g)?) {
                    acc(*v, t);
                }
            }
            Op::BatchNorm { input, scale, shift, xhat, inv_std } => {
                let [n, c, h, w] = g.dims4("batchnorm")?;
                let plane = h * w;
                let m = (n * plane) as f64;
                let gd = g.data();
                let mut dscale = vec![0.0; c];
                let mut dshift = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        for i in base..base + plane {
                            dshift[ch] += gd[i];
                            dscale[ch] += gd[i] * xhat[i];
                        }
                    }
                }
                let sc = self.value(*scale).data();
                let mut dx = vec![0.0; g.len()];
                for b in 0..n {
                    for ch in 0..c {
                        let k = sc[ch] * inv_std[ch] / m;
                        let base = (b * c + ch) * plane;
                        for i in base..base + plane {
                            dx[i] = k * (m * gd[i] - dshift[ch] - xhat[i] * dscale[ch]);
                        }
                    }
                }
                acc(*input, Tensor::new(g.shape().to_vec(), dx)?);
                acc(*scale, Tensor::new(vec![c], dscale)?);
                acc(*shift, Tensor::new(vec![c], dshift)?);
            }
            Op::ChannelAffine { input, scale, shift, mean, inv_std } => {
                let [n, c, h, w] = g.dims4("channel_affine")?;
                let plane = h * w;
                let gd = g.data();
                let x = self.value(*input).data();
                let sc = self.value(*scale).data();
                let mut dx = vec![0.0; g.len()];
                let mut dscale = vec![0.0; c];
                let mut dshift = vec![0.0; c];
                for b in 0..n {
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let a = sc[ch] * inv_std[ch];
                        for i in base..base + plane {
                            dx[i] = a * gd[i];
                            dshift[ch] += gd[i];
                            dscale[ch] += gd[i] * (x[i] - mean[ch]) * inv_std[ch];
                        }
                    }
                }
                acc(*input, Tensor::new(g.shape().to_vec(), dx)?);
                acc(*scale, Tensor::new(vec![c], dscale)?);
                acc(*shift, Tensor::new(vec![c], dshift)?);
            }
            Op::MatMul(a, b) => {
                let (da, db) = kernels::matmul_backward(self.value(*a), self.value(*b), g)?;
                acc(*a, da);
                acc(*b, db);
            }
            Op::Transpose(a) => acc(*a, kernels::transpose_last2(g)?),
            Op::Reshape(a) => acc(*a, g.reshape(self.value(*a).shape().to_vec())?),
            Op::Sum(a) => {
                let s = g.item()?;
                acc(*a, Tensor::full(self.value(*a).shape().to_vec(), s));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let s = g.item()? / t.len().max(1) as f64;
                acc(*a, Tensor::full(t.shape().to_vec(), s));
            }
            Op::Map { input, f } => {
                acc(*input, zip_map(g, self.value(*input), |gx, x| gx * f.derivative(x)));
            }
        }
        Ok(())
    }
}
