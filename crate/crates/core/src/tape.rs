//! Reverse-mode differentiation over a linear tape of tensor operations.
//!
//! Every op appends a node holding its forward value and whatever it needs for
//! the backward pass. [`Tape::backward`] walks the nodes in reverse and returns
//! one gradient buffer per node that requires it.

use std::borrow::Cow;

use crate::crop::{self, Anchor, AnchorGradient, AnchorParams};
use crate::error::{Error, Result};
use crate::geometry::{Rect, SaliencyMap};
use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` so the spatial size is preserved.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Largest `f64` below one; keeps sigmoid outputs strictly inside `(0, 1)`.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

/// Probability clamp used by the cross-entropy loss.
pub const BCE_EPS: f64 = 1e-7;

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

enum Op {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    ConvTranspose2d { input: Var, weight: Var, bias: Var, geom: ConvGeom },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Upsample2 { input: Var },
    Concat { inputs: Vec<Var> },
    Linear { input: Var, weight: Var, bias: Var },
    Relu { input: Var },
    Sigmoid { input: Var },
    SoftBinarize { input: Var, sigma: f64 },
    AnchorCorners { input: Var, anchor: Anchor, gamma: f64, variant: AnchorGradient },
    RoiPool { input: Var, argmax: Vec<usize> },
    BceWithLogits { logits: Var, target: Vec<f64> },
    SquaredError { input: Var, target: Vec<f64> },
    WeightedSum { input: Var, weights: Vec<f64> },
    AddScaled { a: Var, b: Var, scale: f64 },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

fn add_into(slot: &mut Option<Vec<f64>>, delta: Vec<f64>) {
    match slot {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
        None => *slot = Some(delta),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if value.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value produced by op #{}",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a tensor owned by the tape.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a borrowed tensor (typically a model parameter) without copying it.
    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn conv_geom(&self, input: Var, weight: Var, bias: Var, transposed: bool, padding: Padding) -> Result<ConvGeom> {
        let (c_in, h, w) = self.value(input).chw()?;
        let ws = self.value(weight).shape();
        let &[a, b, k, k2] = ws else {
            return Err(Error::shape(format!("conv weights must be 4-d, got {ws:?}")));
        };
        let (w_in, c_out) = if transposed { (a, b) } else { (b, a) };
        if k != k2 || k % 2 == 0 {
            return Err(Error::shape(format!("conv kernel must be square and odd, got {k}x{k2}")));
        }
        if w_in != c_in {
            return Err(Error::shape(format!(
                "conv expects {w_in} input channels, input has {c_in}"
            )));
        }
        if self.value(bias).numel() != c_out {
            return Err(Error::shape(format!(
                "conv bias has {} entries for {c_out} output channels",
                self.value(bias).numel()
            )));
        }
        let pad = match padding {
            Padding::Same => k / 2,
            Padding::Valid => 0,
        };
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!(
                "input {h}x{w} is smaller than the {k}x{k} kernel"
            )));
        }
        Ok(ConvGeom { c_in, c_out, h, w, k, pad })
    }

    /// 2-d cross-correlation plus bias. Weights are `[C_out, C_in, k, k]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, padding: Padding) -> Result<Var> {
        let geom = self.conv_geom(input, weight, bias, false, padding)?;
        let out = kernels::conv2d_forward(
            geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let rg = self.any_grad(&[input, weight, bias]);
        self.push(
            Tensor::new([geom.c_out, geom.out_h(), geom.out_w()], out)?,
            Op::Conv2d { input, weight, bias, geom },
            rg,
        )
    }

    /// Stride-1 transposed convolution with same padding. Weights are
    /// `[C_in, C_out, k, k]`.
    pub fn conv_transpose2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let geom = self.conv_geom(input, weight, bias, true, Padding::Same)?;
        let out = kernels::conv_transpose2d_forward(
            geom,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let rg = self.any_grad(&[input, weight, bias]);
        self.push(
            Tensor::new([geom.c_out, geom.h, geom.w], out)?,
            Op::ConvTranspose2d { input, weight, bias, geom },
            rg,
        )
    }

    /// 2x2 max pooling, stride 2.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "max pooling needs even spatial dims, got {h}x{w}"
            )));
        }
        let (out, argmax) = kernels::maxpool2_forward(c, h, w, self.value(input).data());
        let rg = self.any_grad(&[input]);
        self.push(Tensor::new([c, h / 2, w / 2], out)?, Op::MaxPool2 { input, argmax }, rg)
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample_nearest(&mut self, input: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).chw()?;
        let out = kernels::upsample2_forward(c, h, w, self.value(input).data());
        let rg = self.any_grad(&[input]);
        self.push(Tensor::new([c, 2 * h, 2 * w], out)?, Op::Upsample2 { input }, rg)
    }

    /// Concatenates `[C_k, H, W]` tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::shape("concatenation of zero tensors"));
        };
        let (_, h, w) = self.value(first).chw()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &v in inputs {
            let (c, hh, ww) = self.value(v).chw()?;
            if (hh, ww) != (h, w) {
                return Err(Error::shape(format!(
                    "cannot concatenate {hh}x{ww} onto {h}x{w}"
                )));
            }
            channels += c;
            data.extend_from_slice(self.value(v).data());
        }
        let rg = self.any_grad(inputs);
        self.push(
            Tensor::new([channels, h, w], data)?,
            Op::Concat { inputs: inputs.to_vec() },
            rg,
        )
    }

    /// `weight · x + bias` with `weight` of shape `[m, n]`; `x` is flattened.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input).data();
        let ws = self.value(weight).shape();
        let &[m, n] = ws else {
            return Err(Error::shape(format!("linear weights must be 2-d, got {ws:?}")));
        };
        if x.len() != n {
            return Err(Error::shape(format!(
                "linear layer expects {n} inputs, got {}",
                x.len()
            )));
        }
        let b = self.value(bias).data();
        if b.len() != m {
            return Err(Error::shape(format!("linear bias has {} entries for {m} outputs", b.len())));
        }
        let wd = self.value(weight).data();
        let out: Vec<f64> = wd
            .chunks_exact(n)
            .zip(b)
            .map(|(row, bi)| bi + row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        let rg = self.any_grad(&[input, weight, bias]);
        self.push(Tensor::new([m], out)?, Op::Linear { input, weight, bias }, rg)
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let t = self.value(input);
        let shape = t.shape().to_vec();
        let rg = self.any_grad(&[input]);
        match kind {
            Activation::Relu => {
                let out = t.data().iter().map(|&v| v.max(0.0)).collect();
                self.push(Tensor::new(shape, out)?, Op::Relu { input }, rg)
            }
            Activation::Sigmoid => {
                let out = t.data().iter().map(|&v| sigmoid(v)).collect();
                self.push(Tensor::new(shape, out)?, Op::Sigmoid { input }, rg)
            }
        }
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Relu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.activation(input, Activation::Sigmoid)
    }

    /// Elementwise `x^2 / (x^2 + sigma^2)`.
    pub fn soft_binarize(&mut self, input: Var, sigma: f64) -> Result<Var> {
        crop::binarize_check(sigma)?;
        let t = self.value(input);
        let shape = t.shape().to_vec();
        let out = t.data().iter().map(|&x| crop::soft_binarize_value(x, sigma)).collect();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::new(shape, out)?, Op::SoftBinarize { input, sigma }, rg)
    }

    /// Anchor window corners `[x_min, y_min, x_max, y_max]` of a `[1, H, W]` or
    /// `[H, W]` saliency tensor. Returns the corner var and the anchor itself.
    pub fn anchor_corners(&mut self, input: Var, params: &AnchorParams) -> Result<(Var, Anchor)> {
        self.anchor_corners_with(input, params, AnchorGradient::Exact)
    }

    #[doc(hidden)]
    pub fn anchor_corners_with(
        &mut self,
        input: Var,
        params: &AnchorParams,
        variant: AnchorGradient,
    ) -> Result<(Var, Anchor)> {
        let map = SaliencyMap::from_tensor(self.value(input))?;
        let anchor = crop::anchor_region(&map, params);
        let rg = self.any_grad(&[input]);
        let var = self.push(
            Tensor::from_vec(anchor.rect.corners().to_vec()),
            Op::AnchorCorners { input, anchor, gamma: params.gamma, variant },
            rg,
        )?;
        Ok((var, anchor))
    }

    /// RoI max pooling of `[C, h, w]` features. The region is a constant input.
    pub fn roi_pool(&mut self, features: Var, region: &Rect, stride: f64, grid: usize) -> Result<Var> {
        let pooled = crop::roi_pool(self.value(features), region, stride, grid)?;
        let rg = self.any_grad(&[features]);
        self.push(pooled.output, Op::RoiPool { input: features, argmax: pooled.argmax }, rg)
    }

    /// Summed binary cross-entropy of `sigmoid(logits)` against `target`.
    /// The gradient with respect to the logits is `p - target`.
    pub fn bce_with_logits(&mut self, logits: Var, target: &[f64]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != target.len() {
            return Err(Error::shape(format!(
                "bce target has {} values for {} logits",
                target.len(),
                z.len()
            )));
        }
        let loss = z
            .iter()
            .zip(target)
            .map(|(&z, &s)| bce_term(sigmoid(z), s))
            .sum();
        let rg = self.any_grad(&[logits]);
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits { logits, target: target.to_vec() },
            rg,
        )
    }

    /// `sum (x - target)^2`.
    pub fn squared_error(&mut self, input: Var, target: &[f64]) -> Result<Var> {
        let x = self.value(input).data();
        if x.len() != target.len() {
            return Err(Error::shape(format!(
                "squared error target has {} values for {} inputs",
                target.len(),
                x.len()
            )));
        }
        let loss = x.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.any_grad(&[input]);
        self.push(
            Tensor::scalar(loss),
            Op::SquaredError { input, target: target.to_vec() },
            rg,
        )
    }

    /// `sum weights * x`, used to reduce a tensor output to a scalar.
    pub fn weighted_sum(&mut self, input: Var, weights: &[f64]) -> Result<Var> {
        let x = self.value(input).data();
        if x.len() != weights.len() {
            return Err(Error::shape(format!(
                "{} weights for {} values",
                weights.len(),
                x.len()
            )));
        }
        let s = x.iter().zip(weights).map(|(a, b)| a * b).sum();
        let rg = self.any_grad(&[input]);
        self.push(
            Tensor::scalar(s),
            Op::WeightedSum { input, weights: weights.to_vec() },
            rg,
        )
    }

    /// `a + scale * b` for equally shaped tensors.
    pub fn add_scaled(&mut self, a: Var, b: Var, scale: f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(format!(
                "cannot add {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + scale * y).collect();
        let shape = ta.shape().to_vec();
        let rg = self.any_grad(&[a, b]);
        self.push(Tensor::new(shape, out)?, Op::AddScaled { a, b, scale }, rg)
    }

    /// Back-propagates from a scalar `root`, seeding its gradient with one.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[idx] = None;
            } else if let Some(g) = &grads[idx] {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric(format!("non-finite gradient at op #{idx}")));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom } => {
                let (gi, gw, gb) = kernels::conv2d_backward(
                    *geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                );
                for (v, d) in [(*input, gi), (*weight, gw), (*bias, gb)] {
                    if wants(v) {
                        add_into(&mut grads[v.0], d);
                    }
                }
            }
            Op::ConvTranspose2d { input, weight, bias, geom } => {
                let (gi, gw, gb) = kernels::conv_transpose2d_backward(
                    *geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                );
                for (v, d) in [(*input, gi), (*weight, gw), (*bias, gb)] {
                    if wants(v) {
                        add_into(&mut grads[v.0], d);
                    }
                }
            }
            Op::MaxPool2 { input, argmax } | Op::RoiPool { input, argmax } => {
                if wants(*input) {
                    let d = crop::roi_pool_backward(self.value(*input).numel(), argmax, g);
                    add_into(&mut grads[input.0], d);
                }
            }
            Op::Upsample2 { input } => {
                if wants(*input) {
                    let (c, h, w) = self.value(*input).chw()?;
                    add_into(&mut grads[input.0], kernels::upsample2_backward(c, h, w, g));
                }
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for &v in inputs {
                    let n = self.value(v).numel();
                    if wants(v) {
                        add_into(&mut grads[v.0], g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                let n = x.len();
                if wants(*input) {
                    let mut gi = vec![0.0; n];
                    for (row, &gj) in w.chunks_exact(n).zip(g) {
                        gi.iter_mut().zip(row).for_each(|(a, w)| *a += gj * w);
                    }
                    add_into(&mut grads[input.0], gi);
                }
                if wants(*weight) {
                    let mut gw = Vec::with_capacity(w.len());
                    for &gj in g {
                        gw.extend(x.iter().map(|xi| gj * xi));
                    }
                    add_into(&mut grads[weight.0], gw);
                }
                if wants(*bias) {
                    add_into(&mut grads[bias.0], g.to_vec());
                }
            }
            Op::Relu { input } => {
                if wants(*input) {
                    let x = self.value(*input).data();
                    let d = x.iter().zip(g).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect();
                    add_into(&mut grads[input.0], d);
                }
            }
            Op::Sigmoid { input } => {
                if wants(*input) {
                    let d = node.value.data().iter().zip(g).map(|(&p, &g)| g * p * (1.0 - p)).collect();
                    add_into(&mut grads[input.0], d);
                }
            }
            Op::SoftBinarize { input, sigma } => {
                if wants(*input) {
                    let x = self.value(*input).data();
                    let d = x
                        .iter()
                        .zip(g)
                        .map(|(&x, &g)| g * crop::soft_binarize_derivative(x, *sigma))
                        .collect();
                    add_into(&mut grads[input.0], d);
                }
            }
            Op::AnchorCorners { input, anchor, gamma, variant } => {
                if wants(*input) {
                    let map = SaliencyMap::from_tensor(self.value(*input))?;
                    let d = crop::anchor_backward(&map, anchor, *gamma, [g[0], g[1], g[2], g[3]], *variant);
                    add_into(&mut grads[input.0], d);
                }
            }
            Op::BceWithLogits { logits, target } => {
                if wants(*logits) {
                    let z = self.value(*logits).data();
                    let d = z.iter().zip(target).map(|(&z, &s)| g[0] * (sigmoid(z) - s)).collect();
                    add_into(&mut grads[logits.0], d);
                }
            }
            Op::SquaredError { input, target } => {
                if wants(*input) {
                    let x = self.value(*input).data();
                    let d = x.iter().zip(target).map(|(a, b)| g[0] * 2.0 * (a - b)).collect();
                    add_into(&mut grads[input.0], d);
                }
            }
            Op::WeightedSum { input, weights } => {
                if wants(*input) {
                    add_into(&mut grads[input.0], weights.iter().map(|w| g[0] * w).collect());
                }
            }
            Op::AddScaled { a, b, scale } => {
                if wants(*a) {
                    add_into(&mut grads[a.0], g.to_vec());
                }
                if wants(*b) {
                    add_into(&mut grads[b.0], g.iter().map(|x| scale * x).collect());
                }
            }
        }
        Ok(())
    }
}

/// `-[s log p + (1 - s) log(1 - p)]` with `p` clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub(crate) fn bce_term(p: f64, s: f64) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(s * p.ln() + (1.0 - s) * (1.0 - p).ln())
}
