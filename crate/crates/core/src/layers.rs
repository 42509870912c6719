//! Layers with hand-written forward and backward passes.
//!
//! A distance-based generalized convolution is not a single layer here: the
//! [`GenConv`] layer only produces the raw distance map, and the similarity is
//! obtained by following it with an [`AdaptiveLinear`] layer (usually with a
//! negative slope) and an [`Activation`]. For instance WL2 distance, then
//! `y = −½x`, then `exp` is exactly the Gaussian kernel.
//!
//! Every layer caches what its backward pass needs during `forward`; calling
//! `backward` without a preceding `forward` is an error. Parameter gradients
//! are overwritten, not accumulated.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use crate::kernels::sgn;
use crate::tensor::{col2im, gemm, im2col, Fnv, PatchMatrix};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Constraint {
    #[default]
    None,
    /// The forward pass uses `|stored|`.
    Abs,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::None => "none",
            Constraint::Abs => "abs",
        })
    }
}

impl FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Constraint::None),
            "abs" => Ok(Constraint::Abs),
            _ => Err(Error::invalid(format!("unknown constraint `{s}`"))),
        }
    }
}

/// A trainable tensor with its gradient, learning-rate multiplier and
/// constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
    pub lr_mult: f64,
    pub constraint: Constraint,
}

impl Param {
    pub fn new(name: &'static str, value: Tensor, lr_mult: f64, constraint: Constraint) -> Self {
        Param {
            name,
            grad: Tensor::zeros_like(&value),
            value,
            lr_mult,
            constraint,
        }
    }

    /// The value seen by the forward pass.
    pub fn effective(&self) -> Cow<'_, Tensor> {
        match self.constraint {
            Constraint::None => Cow::Borrowed(&self.value),
            Constraint::Abs => Cow::Owned(self.value.map(f64::abs)),
        }
    }

    /// Stores a gradient taken with respect to the effective value, applying
    /// the chain rule of the constraint.
    fn set_grad(&mut self, mut grad: Vec<f64>) {
        if self.constraint == Constraint::Abs {
            for (g, v) in grad.iter_mut().zip(self.value.data()) {
                *g *= sgn(*v);
            }
        }
        self.grad.data_mut().copy_from_slice(&grad);
    }

    fn sign_signature(&self, hash: &mut Fnv) {
        if self.constraint == Constraint::Abs {
            for v in self.value.data() {
                hash.write(&[(sgn(*v) + 1.0) as u8]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    None,
    ReLU,
    Sigmoid,
    TanH,
    ScaledTanH,
    Sine,
    ReSine,
    ReTanH,
    Exp,
    DoubleThreshold,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 10] = [
        ActivationKind::None,
        ActivationKind::ReLU,
        ActivationKind::Sigmoid,
        ActivationKind::TanH,
        ActivationKind::ScaledTanH,
        ActivationKind::Sine,
        ActivationKind::ReSine,
        ActivationKind::ReTanH,
        ActivationKind::Exp,
        ActivationKind::DoubleThreshold,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::None => "none",
            ActivationKind::ReLU => "relu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::TanH => "tanh",
            ActivationKind::ScaledTanH => "scaled_tanh",
            ActivationKind::Sine => "sine",
            ActivationKind::ReSine => "resine",
            ActivationKind::ReTanH => "retanh",
            ActivationKind::Exp => "exp",
            ActivationKind::DoubleThreshold => "double_threshold",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::None => x,
            ActivationKind::ReLU => x.max(0.0),
            ActivationKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActivationKind::TanH => x.tanh(),
            ActivationKind::ScaledTanH => 1.7159 * (2.0 * x / 3.0).tanh(),
            ActivationKind::Sine => x.sin(),
            ActivationKind::ReSine => x.sin().max(0.0),
            ActivationKind::ReTanH => x.tanh().max(0.0),
            ActivationKind::Exp => x.exp(),
            ActivationKind::DoubleThreshold => x.clamp(0.0, 1.0),
        }
    }

    /// Derivative; zero on the flat side of every kink.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::None => 1.0,
            ActivationKind::ReLU => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActivationKind::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            ActivationKind::TanH => 1.0 - x.tanh().powi(2),
            ActivationKind::ScaledTanH => 1.7159 * (2.0 / 3.0) * (1.0 - (2.0 * x / 3.0).tanh().powi(2)),
            ActivationKind::Sine => x.cos(),
            ActivationKind::ReSine => {
                if x.sin() > 0.0 {
                    x.cos()
                } else {
                    0.0
                }
            }
            ActivationKind::ReTanH => {
                if x > 0.0 {
                    1.0 - x.tanh().powi(2)
                } else {
                    0.0
                }
            }
            ActivationKind::Exp => x.exp(),
            ActivationKind::DoubleThreshold => {
                if x > 0.0 && x < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Which linear piece `x` falls on, for kinked activations.
    fn region(self, x: f64) -> u8 {
        match self {
            ActivationKind::ReLU | ActivationKind::ReTanH => u8::from(x > 0.0),
            ActivationKind::ReSine => u8::from(x.sin() > 0.0),
            ActivationKind::DoubleThreshold => u8::from(x > 0.0) + u8::from(x >= 1.0),
            _ => 0,
        }
    }

    fn has_kinks(self) -> bool {
        matches!(
            self,
            ActivationKind::ReLU
                | ActivationKind::ReTanH
                | ActivationKind::ReSine
                | ActivationKind::DoubleThreshold
        )
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown activation kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    GenConvWL1,
    GenConvWL2,
    AdaptiveLinear,
    Activation(ActivationKind),
    MaxPool,
    FullyConnected,
    SoftmaxLoss,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerKind::Conv => f.write_str("Conv"),
            LayerKind::GenConvWL1 => f.write_str("GenConvWL1"),
            LayerKind::GenConvWL2 => f.write_str("GenConvWL2"),
            LayerKind::AdaptiveLinear => f.write_str("AdaptiveLinear"),
            LayerKind::Activation(k) => write!(f, "Activation({k})"),
            LayerKind::MaxPool => f.write_str("MaxPool"),
            LayerKind::FullyConnected => f.write_str("FullyConnected"),
            LayerKind::SoftmaxLoss => f.write_str("SoftmaxLoss"),
        }
    }
}

fn missing_cache() -> Error {
    Error::BackwardBeforeForward
}

fn check_grad_shape(grad: &Tensor, expected: &[usize]) -> Result<()> {
    if grad.shape() != expected {
        return Err(Error::shape(format!(
            "gradient shape {:?} does not match output shape {expected:?}",
            grad.shape()
        )));
    }
    Ok(())
}

fn spatial_output(
    input: &[usize],
    channels: usize,
    window: usize,
    stride: usize,
    pad: usize,
    planes: usize,
) -> Result<Vec<usize>> {
    let [n, c, h, w] = match input {
        &[n, c, h, w] => [n, c, h, w],
        _ => return Err(Error::shape(format!("expected a 4-D signal, got {input:?}"))),
    };
    if c != channels {
        return Err(Error::shape(format!(
            "layer expects {channels} input channels, got {c}"
        )));
    }
    let g = crate::tensor::PatchGeometry::new([n, c, h, w], window, stride, pad)?;
    Ok(vec![n, planes, g.out_h, g.out_w])
}

/// Rows of a patch-major (rows × planes) matrix to a batch × planes × positions
/// tensor.
fn rows_to_planes(rows: &[f64], batch: usize, positions: usize, planes: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows.len()];
    for b in 0..batch {
        for p in 0..positions {
            let r = (b * positions + p) * planes;
            for l in 0..planes {
                out[(b * planes + l) * positions + p] = rows[r + l];
            }
        }
    }
    out
}

fn planes_to_rows(planes_major: &[f64], batch: usize, positions: usize, planes: usize) -> Vec<f64> {
    let mut out = vec![0.0; planes_major.len()];
    for b in 0..batch {
        for l in 0..planes {
            let src = (b * planes + l) * positions;
            for p in 0..positions {
                out[(b * positions + p) * planes + l] = planes_major[src + p];
            }
        }
    }
    out
}

/// Ordinary convolution: `out[l] = <patch, W_l> + bias_l`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub in_channels: usize,
    pub planes: usize,
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
    /// `[planes, in_channels, window, window]`
    pub weight: Param,
    /// `[planes]`
    pub bias: Param,
    patches: Option<PatchMatrix>,
}

impl Conv {
    pub fn new(in_channels: usize, planes: usize, window: usize, stride: usize, pad: usize) -> Self {
        Conv {
            in_channels,
            planes,
            window,
            stride,
            pad,
            weight: Param::new(
                "weight",
                Tensor::zeros(&[planes, in_channels, window, window]),
                1.0,
                Constraint::None,
            ),
            bias: Param::new("bias", Tensor::zeros(&[planes]), 1.0, Constraint::None),
            patches: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        spatial_output(input, self.in_channels, self.window, self.stride, self.pad, self.planes)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(input.shape())?;
        let patches = im2col(input, self.window, self.stride, self.pad)?;
        let g = *patches.geometry();
        let (rows, n) = (g.rows(), g.cols());
        let weight = self.weight.effective();
        let mut prod = vec![0.0; rows * self.planes];
        gemm(rows, n, self.planes, 1.0, patches.data(), false, weight.data(), true, 0.0, &mut prod);
        let mut out = rows_to_planes(&prod, g.batch, g.positions(), self.planes);
        let bias = self.bias.value.data();
        for (i, v) in out.iter_mut().enumerate() {
            *v += bias[(i / g.positions()) % self.planes];
        }
        self.patches = Some(patches);
        Tensor::new(shape, out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let patches = self.patches.as_ref().ok_or_else(missing_cache)?;
        let g = *patches.geometry();
        check_grad_shape(grad_out, &[g.batch, self.planes, g.out_h, g.out_w])?;
        let (rows, n) = (g.rows(), g.cols());
        let grad_rows = planes_to_rows(grad_out.data(), g.batch, g.positions(), self.planes);

        let mut grad_w = vec![0.0; self.planes * n];
        gemm(self.planes, rows, n, 1.0, &grad_rows, true, patches.data(), false, 0.0, &mut grad_w);
        let mut grad_b = vec![0.0; self.planes];
        for row in grad_rows.chunks_exact(self.planes) {
            for (gb, v) in grad_b.iter_mut().zip(row) {
                *gb += v;
            }
        }

        let weight = self.weight.effective();
        let mut grad_patches = PatchMatrix::zeros(g);
        gemm(rows, self.planes, n, 1.0, &grad_rows, false, weight.data(), false, 0.0, grad_patches.data_mut());
        drop(weight);

        self.weight.set_grad(grad_w);
        self.bias.set_grad(grad_b);
        col2im(&grad_patches)
    }
}

/// Distance convolution: `out[l] = Σ_i |theta_l,i| · |patch_i − mean_l,i|^p`
/// with `p ∈ {1, 2}`. No additive bias; shifts belong to a following
/// [`AdaptiveLinear`] layer.
#[derive(Debug, Clone)]
pub struct GenConv {
    pub norm: Norm,
    pub in_channels: usize,
    pub planes: usize,
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
    /// Template patterns, `[planes, in_channels, window, window]`.
    pub mean: Param,
    /// Stored precisions, same shape; always used through `|theta|`.
    pub precision: Param,
    patches: Option<PatchMatrix>,
}

impl GenConv {
    pub fn new(
        norm: Norm,
        in_channels: usize,
        planes: usize,
        window: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        let shape = [planes, in_channels, window, window];
        GenConv {
            norm,
            in_channels,
            planes,
            window,
            stride,
            pad,
            mean: Param::new("mean", Tensor::zeros(&shape), 1.0, Constraint::None),
            precision: Param::new("precision", Tensor::full(&shape, 1.0), 1.0, Constraint::Abs),
            patches: None,
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self.norm {
            Norm::L1 => LayerKind::GenConvWL1,
            Norm::L2 => LayerKind::GenConvWL2,
        }
    }

    /// Patch dimensionality `in_channels · window²`.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.window * self.window
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        spatial_output(input, self.in_channels, self.window, self.stride, self.pad, self.planes)
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(input.shape())?;
        let patches = im2col(input, self.window, self.stride, self.pad)?;
        let g = *patches.geometry();
        let n = g.cols();
        let mean = self.mean.effective();
        let tau = self.precision.value.map(f64::abs);
        let (z, t) = (mean.data(), tau.data());
        let positions = g.positions();
        let mut out = vec![0.0; g.rows() * self.planes];
        for (r, x) in patches.data().chunks_exact(n).enumerate() {
            let (b, p) = (r / positions, r % positions);
            for l in 0..self.planes {
                let zl = &z[l * n..(l + 1) * n];
                let tl = &t[l * n..(l + 1) * n];
                let d = match self.norm {
                    Norm::L2 => wl2_row(x, zl, tl),
                    Norm::L1 => wl1_row(x, zl, tl),
                };
                out[(b * self.planes + l) * positions + p] = d;
            }
        }
        drop(mean);
        self.patches = Some(patches);
        Tensor::new(shape, out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let patches = self.patches.as_ref().ok_or_else(missing_cache)?;
        let g = *patches.geometry();
        check_grad_shape(grad_out, &[g.batch, self.planes, g.out_h, g.out_w])?;
        let n = g.cols();
        let positions = g.positions();
        let mean = self.mean.effective();
        let tau = self.precision.value.map(f64::abs);
        let (z, t) = (mean.data(), tau.data());
        let go = grad_out.data();

        let mut grad_patches = PatchMatrix::zeros(g);
        let mut grad_z = vec![0.0; self.planes * n];
        let mut grad_tau = vec![0.0; self.planes * n];
        for (r, x) in patches.data().chunks_exact(n).enumerate() {
            let (b, p) = (r / positions, r % positions);
            let gx_row = &mut grad_patches.data_mut()[r * n..(r + 1) * n];
            for l in 0..self.planes {
                let gd = go[(b * self.planes + l) * positions + p];
                if gd == 0.0 {
                    continue;
                }
                let range = l * n..(l + 1) * n;
                let (zl, tl) = (&z[range.clone()], &t[range.clone()]);
                let (gzl, gtl) = (&mut grad_z[range.clone()], &mut grad_tau[range]);
                match self.norm {
                    Norm::L2 => {
                        for i in 0..n {
                            let d = x[i] - zl[i];
                            let gx = gd * 2.0 * tl[i] * d;
                            gx_row[i] += gx;
                            gzl[i] -= gx;
                            gtl[i] += gd * d * d;
                        }
                    }
                    Norm::L1 => {
                        for i in 0..n {
                            let d = x[i] - zl[i];
                            let gx = gd * tl[i] * sgn(d);
                            gx_row[i] += gx;
                            gzl[i] -= gx;
                            gtl[i] += gd * d.abs();
                        }
                    }
                }
            }
        }
        drop(mean);
        self.mean.set_grad(grad_z);
        // tau = |theta| regardless of the declared constraint
        for (gt, th) in grad_tau.iter_mut().zip(self.precision.value.data()) {
            *gt *= sgn(*th);
        }
        self.precision.grad.data_mut().copy_from_slice(&grad_tau);
        col2im(&grad_patches)
    }

    fn kink_signature(&self, hash: &mut Fnv) {
        self.mean.sign_signature(hash);
        for v in self.precision.value.data() {
            hash.write(&[(sgn(*v) + 1.0) as u8]);
        }
        if let (Norm::L1, Some(patches)) = (self.norm, &self.patches) {
            let n = patches.cols();
            let mean = self.mean.effective();
            for x in patches.data().chunks_exact(n) {
                for zl in mean.data().chunks_exact(n) {
                    for (a, b) in x.iter().zip(zl) {
                        hash.write(&[(sgn(a - b) + 1.0) as u8]);
                    }
                }
            }
        }
    }
}

#[inline]
fn wl2_row(x: &[f64], z: &[f64], t: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        let d = x[i] - z[i];
        acc += t[i] * d * d;
    }
    acc
}

#[inline]
fn wl1_row(x: &[f64], z: &[f64], t: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..x.len() {
        acc += t[i] * (x[i] - z[i]).abs();
    }
    acc
}

/// Per-channel affine map `y = a_c · x + b_c`.
#[derive(Debug, Clone)]
pub struct AdaptiveLinear {
    pub channels: usize,
    pub slope: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl AdaptiveLinear {
    pub fn new(channels: usize) -> Self {
        AdaptiveLinear {
            channels,
            slope: Param::new("slope", Tensor::full(&[channels], 1.0), 1.0, Constraint::None),
            bias: Param::new("bias", Tensor::zeros(&[channels]), 1.0, Constraint::None),
            input: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        if input.len() < 2 || input[1] != self.channels {
            return Err(Error::shape(format!(
                "AdaptiveLinear expects {} channels, got shape {input:?}",
                self.channels
            )));
        }
        Ok(input.to_vec())
    }

    fn inner(shape: &[usize]) -> usize {
        shape[2..].iter().product()
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        self.output_shape(input.shape())?;
        let inner = Self::inner(input.shape());
        let slope = self.slope.effective();
        let (a, b) = (slope.data(), self.bias.value.data());
        let mut out = input.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let c = (i / inner) % self.channels;
            *v = a[c] * *v + b[c];
        }
        drop(slope);
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.input.as_ref().ok_or_else(missing_cache)?;
        check_grad_shape(grad_out, input.shape())?;
        let inner = Self::inner(input.shape());
        let slope = self.slope.effective().into_owned();
        let a = slope.data();
        let mut grad_a = vec![0.0; self.channels];
        let mut grad_b = vec![0.0; self.channels];
        let mut grad_in = grad_out.clone();
        for (i, (gi, x)) in grad_in.data_mut().iter_mut().zip(input.data()).enumerate() {
            let c = (i / inner) % self.channels;
            grad_a[c] += *gi * x;
            grad_b[c] += *gi;
            *gi *= a[c];
        }
        self.slope.set_grad(grad_a);
        self.bias.set_grad(grad_b);
        Ok(grad_in)
    }
}

#[derive(Debug, Clone)]
pub struct Activation {
    pub kind: ActivationKind,
    input: Option<Tensor>,
}

impl Activation {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind, input: None }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let out = input.map(|x| self.kind.apply(x));
        self.input = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.input.as_ref().ok_or_else(missing_cache)?;
        activation_backward(grad_out, input, self.kind)
    }
}

/// `grad_out ⊙ f'(input)`.
pub fn activation_backward(grad_out: &Tensor, input: &Tensor, kind: ActivationKind) -> Result<Tensor> {
    check_grad_shape(grad_out, input.shape())?;
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data_mut().iter_mut().zip(input.data()) {
        *g *= kind.derivative(x);
    }
    Ok(grad)
}

/// Spatial max pooling; ties go to the first maximum in row-major scan order.
#[derive(Debug, Clone)]
pub struct MaxPool {
    pub window: usize,
    pub stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool {
    pub fn new(window: usize, stride: usize) -> Self {
        MaxPool {
            window,
            stride,
            cache: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let &[n, c, h, w] = input else {
            return Err(Error::shape(format!("expected a 4-D signal, got {input:?}")));
        };
        if self.window == 0 || self.stride == 0 {
            return Err(Error::invalid("pooling window and stride must be positive"));
        }
        if self.window > h || self.window > w {
            return Err(Error::WindowExceedsInput {
                window: self.window,
                extent: h.min(w),
            });
        }
        Ok(vec![n, c, (h - self.window) / self.stride + 1, (w - self.window) / self.stride + 1])
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(input.shape())?;
        let [n, c, h, w] = input.dims4()?;
        let (oh, ow) = (shape[2], shape[3]);
        let src = input.data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * self.stride * w + j * self.stride;
                    for ki in 0..self.window {
                        for kj in 0..self.window {
                            let idx = base + (i * self.stride + ki) * w + j * self.stride + kj;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        self.cache = Some((input.shape().to_vec(), argmax));
        Tensor::new(shape, out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let (shape, argmax) = self.cache.as_ref().ok_or_else(missing_cache)?;
        if grad_out.len() != argmax.len() {
            return Err(Error::shape("pooling gradient does not match the cached output"));
        }
        let mut grad = Tensor::zeros(shape);
        let dst = grad.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
            dst[idx] += g;
        }
        Ok(grad)
    }

    pub fn argmax(&self) -> Option<&[usize]> {
        self.cache.as_ref().map(|(_, a)| a.as_slice())
    }
}

/// `y = W · flatten(x) + b`.
#[derive(Debug, Clone)]
pub struct FullyConnected {
    pub inputs: usize,
    pub outputs: usize,
    /// `[outputs, inputs]`
    pub weight: Param,
    pub bias: Param,
    input: Option<Tensor>,
}

impl FullyConnected {
    pub fn new(inputs: usize, outputs: usize) -> Self {
        FullyConnected {
            inputs,
            outputs,
            weight: Param::new("weight", Tensor::zeros(&[outputs, inputs]), 1.0, Constraint::None),
            bias: Param::new("bias", Tensor::zeros(&[outputs]), 1.0, Constraint::None),
            input: None,
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let flat: usize = input[1..].iter().product();
        if input.len() < 2 || flat != self.inputs {
            return Err(Error::shape(format!(
                "fully connected layer expects {} inputs per sample, got shape {input:?}",
                self.inputs
            )));
        }
        Ok(vec![input[0], self.outputs])
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        let shape = self.output_shape(input.shape())?;
        let batch = shape[0];
        let weight = self.weight.effective();
        let mut out = vec![0.0; batch * self.outputs];
        for row in out.chunks_exact_mut(self.outputs) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(batch, self.inputs, self.outputs, 1.0, input.data(), false, weight.data(), true, 1.0, &mut out);
        drop(weight);
        self.input = Some(input.clone());
        Tensor::new(shape, out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let input = self.input.as_ref().ok_or_else(missing_cache)?;
        let batch = input.shape()[0];
        check_grad_shape(grad_out, &[batch, self.outputs])?;
        let g = grad_out.data();
        let mut grad_w = vec![0.0; self.outputs * self.inputs];
        gemm(self.outputs, batch, self.inputs, 1.0, g, true, input.data(), false, 0.0, &mut grad_w);
        let mut grad_b = vec![0.0; self.outputs];
        for row in g.chunks_exact(self.outputs) {
            for (gb, v) in grad_b.iter_mut().zip(row) {
                *gb += v;
            }
        }
        let weight = self.weight.effective();
        let mut grad_in = vec![0.0; batch * self.inputs];
        gemm(batch, self.outputs, self.inputs, 1.0, g, false, weight.data(), false, 0.0, &mut grad_in);
        drop(weight);
        self.weight.set_grad(grad_w);
        self.bias.set_grad(grad_b);
        Tensor::new(input.shape().to_vec(), grad_in)
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Tensor,
    pub accuracy: f64,
    /// Argmax class per sample (first index on ties).
    pub predictions: Vec<usize>,
}

/// Mean multinomial cross-entropy of softmax(logits); the gradient is
/// `(softmax − onehot) / batch`.
pub fn softmax_loss(input: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::shape(format!("softmax needs a batch axis, got {shape:?}")));
    }
    let batch = shape[0];
    let classes = input.len() / batch;
    if labels.len() != batch {
        return Err(Error::shape(format!(
            "{} labels for a batch of {batch}",
            labels.len()
        )));
    }
    let mut grad = vec![0.0; input.len()];
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut predictions = Vec::with_capacity(batch);
    for (s, (logits, &label)) in input.data().chunks_exact(classes).zip(labels).enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let (arg, max) = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
        predictions.push(arg);
        if arg == label {
            correct += 1;
        }
        let denom: f64 = logits.iter().map(|v| (v - max).exp()).sum();
        let log_denom = denom.ln();
        loss += log_denom - (logits[label] - max);
        let g = &mut grad[s * classes..(s + 1) * classes];
        for (gi, v) in g.iter_mut().zip(logits) {
            *gi = (v - max).exp() / denom / batch as f64;
        }
        g[label] -= 1.0 / batch as f64;
    }
    Ok(LossOutput {
        loss: loss / batch as f64,
        grad: Tensor::new(shape.to_vec(), grad)?,
        accuracy: correct as f64 / batch as f64,
        predictions,
    })
}

/// Any layer of a network stack.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv),
    GenConv(GenConv),
    AdaptiveLinear(AdaptiveLinear),
    Activation(Activation),
    MaxPool(MaxPool),
    FullyConnected(FullyConnected),
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::GenConv(l) => l.kind(),
            Layer::AdaptiveLinear(_) => LayerKind::AdaptiveLinear,
            Layer::Activation(l) => LayerKind::Activation(l.kind),
            Layer::MaxPool(_) => LayerKind::MaxPool,
            Layer::FullyConnected(_) => LayerKind::FullyConnected,
        }
    }

    pub fn forward(&mut self, input: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.forward(input),
            Layer::GenConv(l) => l.forward(input),
            Layer::AdaptiveLinear(l) => l.forward(input),
            Layer::Activation(l) => l.forward(input),
            Layer::MaxPool(l) => l.forward(input),
            Layer::FullyConnected(l) => l.forward(input),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Conv(l) => l.backward(grad_out),
            Layer::GenConv(l) => l.backward(grad_out),
            Layer::AdaptiveLinear(l) => l.backward(grad_out),
            Layer::Activation(l) => l.backward(grad_out),
            Layer::MaxPool(l) => l.backward(grad_out),
            Layer::FullyConnected(l) => l.backward(grad_out),
        }
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Conv(l) => l.output_shape(input),
            Layer::GenConv(l) => l.output_shape(input),
            Layer::AdaptiveLinear(l) => l.output_shape(input),
            Layer::Activation(_) => Ok(input.to_vec()),
            Layer::MaxPool(l) => l.output_shape(input),
            Layer::FullyConnected(l) => l.output_shape(input),
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        match self {
            Layer::Conv(l) => vec![&l.weight, &l.bias],
            Layer::GenConv(l) => vec![&l.mean, &l.precision],
            Layer::AdaptiveLinear(l) => vec![&l.slope, &l.bias],
            Layer::FullyConnected(l) => vec![&l.weight, &l.bias],
            Layer::Activation(_) | Layer::MaxPool(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Layer::Conv(l) => vec![&mut l.weight, &mut l.bias],
            Layer::GenConv(l) => vec![&mut l.mean, &mut l.precision],
            Layer::AdaptiveLinear(l) => vec![&mut l.slope, &mut l.bias],
            Layer::FullyConnected(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Activation(_) | Layer::MaxPool(_) => Vec::new(),
        }
    }

    /// Hash of the piecewise-linear region every kinked operation is in after
    /// the last forward pass. Two forward passes with equal signatures are on
    /// the same smooth piece, so finite differences between them are valid.
    pub fn kink_signature(&self) -> u64 {
        let mut hash = Fnv::default();
        match self {
            Layer::Conv(l) => l.weight.sign_signature(&mut hash),
            Layer::GenConv(l) => l.kink_signature(&mut hash),
            Layer::AdaptiveLinear(l) => l.slope.sign_signature(&mut hash),
            Layer::FullyConnected(l) => l.weight.sign_signature(&mut hash),
            Layer::Activation(l) => {
                if let (true, Some(input)) = (l.kind.has_kinks(), &l.input) {
                    for &x in input.data() {
                        hash.write(&[l.kind.region(x)]);
                    }
                }
            }
            Layer::MaxPool(l) => {
                if let Some(arg) = l.argmax() {
                    for &i in arg {
                        hash.write(&(i as u64).to_le_bytes());
                    }
                }
            }
        }
        hash.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_layer, CheckOptions};
    use crate::kernels::{gaussian_sim, laplacian_sim, wl1_dist, wl2_dist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
    }

    fn randomize(layer: &mut Layer, rng: &mut ChaCha8Rng) {
        for p in layer.params_mut() {
            let t = random_tensor(p.value.shape(), rng, -1.0, 1.0);
            p.value = t;
        }
    }

    /// Six nested loops, no im2col.
    fn naive_conv(x: &Tensor, w: &Tensor, bias: &[f64], stride: usize) -> Tensor {
        let [n, c, h, wd] = x.dims4().unwrap();
        let [planes, _, k, _] = w.dims4().unwrap();
        let (oh, ow) = ((h - k) / stride + 1, (wd - k) / stride + 1);
        let xv = |b: usize, ch: usize, i: usize, j: usize| x.data()[((b * c + ch) * h + i) * wd + j];
        let wv = |l: usize, ch: usize, i: usize, j: usize| w.data()[((l * c + ch) * k + i) * k + j];
        let mut out = Tensor::zeros(&[n, planes, oh, ow]);
        for b in 0..n {
            for l in 0..planes {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bias[l];
                        for ch in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    acc += xv(b, ch, i * stride + ki, j * stride + kj) * wv(l, ch, ki, kj);
                                }
                            }
                        }
                        out.data_mut()[((b * planes + l) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        out
    }

    fn rel_close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
        a.shape() == b.shape()
            && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-12))
    }

    #[test]
    fn conv_zero_weights_give_zero() {
        let mut conv = Conv::new(1, 1, 3, 1, 0);
        let x = Tensor::from_fn(&[1, 1, 5, 5], |i| i as f64);
        let y = conv.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_delta_filter_picks_center() {
        let mut conv = Conv::new(1, 1, 3, 1, 0);
        conv.weight.value.data_mut()[4] = 1.0;
        let x = Tensor::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f64);
        assert_eq!(conv.forward(&x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &stride in &[1, 2] {
            let mut layer = Layer::Conv(Conv::new(3, 4, 5, stride, 0));
            randomize(&mut layer, &mut rng);
            let x = random_tensor(&[2, 3, 8, 8], &mut rng, -1.0, 1.0);
            let Layer::Conv(conv) = &mut layer else { unreachable!() };
            let y = conv.forward(&x).unwrap();
            let expected = naive_conv(&x, &conv.weight.value, conv.bias.value.data(), stride);
            assert!(rel_close(&y, &expected, 1e-10));
        }
    }

    #[test]
    fn conv_abs_constraint_equals_preabsolute_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = Conv::new(2, 3, 3, 1, 0);
        a.weight.value = random_tensor(&[3, 2, 3, 3], &mut rng, -1.0, 1.0);
        a.weight.constraint = Constraint::Abs;
        let mut b = a.clone();
        b.weight.constraint = Constraint::None;
        b.weight.value = a.weight.value.map(f64::abs);
        let x = random_tensor(&[2, 2, 6, 6], &mut rng, 0.0, 1.0);
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }

    #[test]
    fn conv_backward_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut conv = Conv::new(2, 3, 3, 1, 0);
        conv.weight.value = random_tensor(&[3, 2, 3, 3], &mut rng, -1.0, 1.0);
        let x = random_tensor(&[2, 2, 6, 6], &mut rng, -1.0, 1.0);
        let y = conv.forward(&x).unwrap();
        let gi = conv.backward(&Tensor::zeros_like(&y)).unwrap();
        assert!(gi.data().iter().chain(conv.weight.grad.data()).chain(conv.bias.grad.data()).all(|&v| v == 0.0));
        let go = random_tensor(y.shape(), &mut rng, -1.0, 1.0);
        conv.backward(&go).unwrap();
        for l in 0..3 {
            let expected: f64 = (0..2).map(|b| go.data()[(b * 3 + l) * 16..(b * 3 + l + 1) * 16].iter().sum::<f64>()).sum();
            assert!((conv.bias.grad.data()[l] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut conv = Conv::new(1, 1, 1, 1, 0);
        assert!(matches!(conv.backward(&Tensor::zeros(&[1, 1, 1, 1])), Err(Error::BackwardBeforeForward)));
        let mut act = Activation::new(ActivationKind::ReLU);
        assert!(act.backward(&Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let mut conv = Conv::new(2, 1, 3, 1, 0);
        assert!(conv.forward(&Tensor::zeros(&[1, 1, 5, 5])).is_err());
    }

    #[test]
    fn genconv_scalar_examples() {
        for (norm, expected) in [(Norm::L2, 4.0), (Norm::L1, 2.0)] {
            let mut g = GenConv::new(norm, 1, 1, 1, 1, 0);
            g.mean.value = Tensor::zeros(&[1, 1, 1, 1]);
            g.precision.value = Tensor::full(&[1, 1, 1, 1], 1.0);
            let y = g.forward(&Tensor::full(&[1, 1, 1, 1], 2.0)).unwrap();
            assert_eq!(y.data(), &[expected]);
        }
    }

    #[test]
    fn genconv_zero_where_patch_equals_pattern() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| (i as f64 * 0.37).sin());
        let mut g = GenConv::new(Norm::L2, 1, 2, 2, 1, 0);
        let patch = im2col(&x, 2, 1, 0).unwrap().row(5).to_vec();
        g.mean.value.data_mut()[..4].copy_from_slice(&patch);
        let y = g.forward(&x).unwrap();
        assert_eq!(y.data()[5], 0.0);
        assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    fn naive_genconv(x: &Tensor, g: &GenConv) -> Tensor {
        let [n, c, h, w] = x.dims4().unwrap();
        let k = g.window;
        let s = g.stride;
        let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
        let plen = c * k * k;
        let mut out = Tensor::zeros(&[n, g.planes, oh, ow]);
        for b in 0..n {
            for l in 0..g.planes {
                let z = &g.mean.value.data()[l * plen..(l + 1) * plen];
                let tau: Vec<f64> = g.precision.value.data()[l * plen..(l + 1) * plen].iter().map(|t| t.abs()).collect();
                for i in 0..oh {
                    for j in 0..ow {
                        let mut patch = Vec::with_capacity(plen);
                        for ch in 0..c {
                            for ki in 0..k {
                                for kj in 0..k {
                                    patch.push(x.data()[((b * c + ch) * h + i * s + ki) * w + j * s + kj]);
                                }
                            }
                        }
                        let d = match g.norm {
                            Norm::L2 => wl2_dist(&patch, z, &tau).unwrap(),
                            Norm::L1 => wl1_dist(&patch, z, &tau).unwrap(),
                        };
                        out.data_mut()[((b * g.planes + l) * oh + i) * ow + j] = d;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn genconv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for norm in [Norm::L1, Norm::L2] {
            let mut g = GenConv::new(norm, 3, 4, 3, 1, 0);
            g.mean.value = random_tensor(&[4, 3, 3, 3], &mut rng, 0.0, 1.0);
            g.precision.value = random_tensor(&[4, 3, 3, 3], &mut rng, -2.0, 2.0);
            let x = random_tensor(&[2, 3, 7, 7], &mut rng, 0.0, 1.0);
            let y = g.forward(&x).unwrap();
            assert!(rel_close(&y, &naive_genconv(&x, &g), 1e-10));
        }
    }

    #[test]
    fn genconv_invariant_to_precision_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = GenConv::new(Norm::L2, 2, 3, 3, 1, 0);
        g.mean.value = random_tensor(&[3, 2, 3, 3], &mut rng, 0.0, 1.0);
        g.precision.value = random_tensor(&[3, 2, 3, 3], &mut rng, 0.1, 2.0);
        let x = random_tensor(&[1, 2, 5, 5], &mut rng, 0.0, 1.0);
        let before = g.forward(&x).unwrap();
        for i in (0..g.precision.value.len()).step_by(3) {
            g.precision.value.data_mut()[i] *= -1.0;
        }
        assert_eq!(before, g.forward(&x).unwrap());
    }

    #[test]
    fn genconv_single_position_reduces_to_kernel_backward() {
        use crate::kernels::{wl1_dist_backward, wl2_dist_backward};
        let x = Tensor::new(vec![1, 2, 1, 1], vec![2.0, 0.0]).unwrap();
        for norm in [Norm::L1, Norm::L2] {
            let mut g = GenConv::new(norm, 2, 1, 1, 1, 0);
            g.mean.value = Tensor::new(vec![1, 2, 1, 1], vec![0.0, 1.0]).unwrap();
            g.precision.value = Tensor::new(vec![1, 2, 1, 1], vec![1.0, -2.0]).unwrap();
            g.forward(&x).unwrap();
            let gi = g.backward(&Tensor::full(&[1, 1, 1, 1], 1.0)).unwrap();
            let k = match norm {
                Norm::L1 => wl1_dist_backward(&[2.0, 0.0], &[0.0, 1.0], &[1.0, 2.0], 1.0).unwrap(),
                Norm::L2 => wl2_dist_backward(&[2.0, 0.0], &[0.0, 1.0], &[1.0, 2.0], 1.0).unwrap(),
            };
            assert_eq!(gi.data(), &k.gx[..]);
            assert_eq!(g.mean.grad.data(), &k.gz[..]);
            assert_eq!(g.precision.grad.data(), &[k.gtau[0], -k.gtau[1]]);
        }
    }

    #[test]
    fn genconv_zero_gradient() {
        let mut g = GenConv::new(Norm::L1, 1, 2, 2, 1, 0);
        let y = g.forward(&Tensor::full(&[1, 1, 3, 3], 0.5)).unwrap();
        let gi = g.backward(&Tensor::zeros_like(&y)).unwrap();
        assert!(gi.data().iter().chain(g.mean.grad.data()).chain(g.precision.grad.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn genconv_composes_into_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_tensor(&[2, 2, 5, 5], &mut rng, 0.0, 1.0);
        for (norm, slope) in [(Norm::L2, -0.5), (Norm::L1, -1.0)] {
            let mut g = GenConv::new(norm, 2, 3, 3, 1, 0);
            g.mean.value = random_tensor(&[3, 2, 3, 3], &mut rng, 0.0, 1.0);
            g.precision.value = random_tensor(&[3, 2, 3, 3], &mut rng, 0.0, 0.5);
            let mut al = AdaptiveLinear::new(3);
            al.slope.value.fill(slope);
            let mut exp = Activation::new(ActivationKind::Exp);
            let y = exp.forward(&al.forward(&g.forward(&x).unwrap()).unwrap()).unwrap();
            let patches = im2col(&x, 3, 1, 0).unwrap();
            for r in 0..patches.rows() {
                let (b, p) = (r / 9, r % 9);
                for l in 0..3 {
                    let z = &g.mean.value.data()[l * 18..(l + 1) * 18];
                    let tau: Vec<f64> = g.precision.value.data()[l * 18..(l + 1) * 18].iter().map(|t| t.abs()).collect();
                    let k = match norm {
                        Norm::L2 => gaussian_sim(patches.row(r), z, &tau).unwrap(),
                        Norm::L1 => laplacian_sim(patches.row(r), z, &tau).unwrap(),
                    };
                    let got = y.data()[(b * 3 + l) * 9 + p];
                    assert!((got - k).abs() <= 1e-12 * k.max(1e-300), "{got} vs {k}");
                }
            }
        }
    }

    #[test]
    fn adaptive_linear_examples() {
        let mut al = AdaptiveLinear::new(2);
        let x = Tensor::from_fn(&[1, 2, 2, 2], |i| i as f64);
        assert_eq!(al.forward(&x).unwrap(), x);
        al.slope.value.fill(-1.0);
        al.bias.value.fill(3.0);
        let y = al.forward(&Tensor::full(&[1, 2, 1, 1], 5.0)).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0]);
        assert!(al.forward(&Tensor::zeros(&[1, 3, 1, 1])).is_err());
    }

    #[test]
    fn adaptive_linear_gradients() {
        let mut al = AdaptiveLinear::new(2);
        al.slope.value = Tensor::new(vec![2], vec![0.5, -2.0]).unwrap();
        let x = Tensor::from_fn(&[2, 2, 1, 2], |i| i as f64 + 1.0);
        al.forward(&x).unwrap();
        let go = Tensor::from_fn(&[2, 2, 1, 2], |i| (i as f64) - 3.0);
        let gi = al.backward(&go).unwrap();
        let (g, xv) = (go.data(), x.data());
        let ga0 = g[0] * xv[0] + g[1] * xv[1] + g[4] * xv[4] + g[5] * xv[5];
        let gb1 = g[2] + g[3] + g[6] + g[7];
        assert_eq!(al.slope.grad.data()[0], ga0);
        assert_eq!(al.bias.grad.data()[1], gb1);
        assert_eq!(gi.data()[2], -2.0 * g[2]);
    }

    #[test]
    fn activation_values() {
        use ActivationKind::*;
        assert_eq!(Sine.apply(0.0), 0.0);
        assert!((Sine.apply(std::f64::consts::FRAC_PI_2) - 1.0).abs() < 1e-15);
        assert_eq!(DoubleThreshold.apply(-0.5), 0.0);
        assert_eq!(DoubleThreshold.apply(0.3), 0.3);
        assert_eq!(DoubleThreshold.apply(2.0), 1.0);
        assert_eq!(ScaledTanH.apply(0.0), 0.0);
        assert!((ScaledTanH.apply(50.0) - 1.7159).abs() < 1e-12);
        assert!((ScaledTanH.apply(-50.0) + 1.7159).abs() < 1e-12);
        assert_eq!(ReLU.derivative(0.0), 0.0);
        assert_eq!(DoubleThreshold.derivative(0.0), 0.0);
        assert_eq!(DoubleThreshold.derivative(1.0), 0.0);
        assert_eq!(DoubleThreshold.derivative(0.5), 1.0);
        assert_eq!(ReSine.apply(4.0), 0.0);
        assert_eq!(ReTanH.apply(-1.0), 0.0);
        assert_eq!(None.apply(-3.5), -3.5);
    }

    #[test]
    fn activation_names_round_trip() {
        for k in ActivationKind::ALL {
            assert_eq!(k.name().parse::<ActivationKind>().unwrap(), k);
        }
        assert!("swish".parse::<ActivationKind>().unwrap_err().to_string().contains("unknown activation kind"));
    }

    #[test]
    fn maxpool_examples() {
        let mut pool = MaxPool::new(2, 2);
        let y = pool.forward(&Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[4.0]);

        let x = Tensor::full(&[1, 2, 4, 4], 7.0);
        let y = pool.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        let gi = pool.backward(&Tensor::full(y.shape(), 1.0)).unwrap();
        for plane in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let expected = if i % 2 == 0 && j % 2 == 0 { 1.0 } else { 0.0 };
                    assert_eq!(gi.data()[plane * 16 + i * 4 + j], expected);
                }
            }
        }
    }

    #[test]
    fn maxpool_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&[2, 3, 7, 7], &mut rng, -1.0, 1.0);
        let mut pool = MaxPool::new(3, 2);
        let y = pool.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3, 3]);
        for plane in 0..6 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut m = f64::NEG_INFINITY;
                    for ki in 0..3 {
                        for kj in 0..3 {
                            m = m.max(x.data()[plane * 49 + (2 * i + ki) * 7 + 2 * j + kj]);
                        }
                    }
                    assert_eq!(y.data()[plane * 9 + i * 3 + j], m);
                }
            }
        }
    }

    #[test]
    fn fully_connected_examples() {
        let mut fc = FullyConnected::new(2, 2);
        fc.weight.value = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(fc.forward(&x).unwrap().data(), &[3.0, 4.0]);

        let mut fc = FullyConnected::new(2, 1);
        fc.weight.value = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        fc.bias.value = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert_eq!(fc.forward(&x).unwrap().data(), &[12.0]);
        assert!(fc.forward(&Tensor::zeros(&[1, 3])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let uniform = softmax_loss(&Tensor::zeros(&[3, 10]), &[0, 4, 9]).unwrap();
        assert!((uniform.loss - 10f64.ln()).abs() < 1e-14);
        assert_eq!(uniform.predictions, vec![0, 0, 0]);

        let out = softmax_loss(&Tensor::new(vec![1, 2], vec![10.0, -10.0]).unwrap(), &[0]).unwrap();
        let expected = (1.0 + (-20f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-20);
        assert!((out.loss - 2.06e-9).abs() < 1e-11);
        assert_eq!(out.accuracy, 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = random_tensor(&[4, 5], &mut rng, -30.0, 30.0);
        let out = softmax_loss(&logits, &[0, 1, 2, 3]).unwrap();
        for row in out.grad.data().chunks(5) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
        assert!(matches!(
            softmax_loss(&logits, &[0, 1, 2, 5]),
            Err(Error::LabelOutOfRange { label: 5, classes: 5 })
        ));
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let out = softmax_loss(&Tensor::new(vec![1, 3], vec![1e4, 2e4, -1e4]).unwrap(), &[0]).unwrap();
        assert!(out.loss.is_finite() && out.grad.is_finite());
        assert!((out.loss - 1e4).abs() < 1e-6);
    }

    fn layer_zoo() -> Vec<(Layer, Vec<usize>)> {
        let mut layers = vec![
            (Layer::Conv(Conv::new(2, 3, 3, 1, 0)), vec![1, 2, 6, 6]),
            (Layer::Conv(Conv::new(2, 2, 3, 2, 1)), vec![2, 2, 5, 5]),
            (Layer::GenConv(GenConv::new(Norm::L2, 2, 3, 3, 1, 0)), vec![1, 2, 6, 6]),
            (Layer::GenConv(GenConv::new(Norm::L1, 2, 3, 3, 1, 0)), vec![1, 2, 6, 6]),
            (Layer::AdaptiveLinear(AdaptiveLinear::new(3)), vec![2, 3, 2, 2]),
            (Layer::MaxPool(MaxPool::new(2, 2)), vec![2, 2, 4, 4]),
            (Layer::FullyConnected(FullyConnected::new(12, 4)), vec![3, 3, 2, 2]),
        ];
        let mut abs_conv = Conv::new(2, 2, 3, 1, 0);
        abs_conv.weight.constraint = Constraint::Abs;
        layers.push((Layer::Conv(abs_conv), vec![1, 2, 5, 5]));
        for k in ActivationKind::ALL {
            layers.push((Layer::Activation(Activation::new(k)), vec![2, 3, 2, 2]));
        }
        layers
    }

    #[test]
    fn every_layer_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for (mut layer, shape) in layer_zoo() {
            for _ in 0..3 {
                randomize(&mut layer, &mut rng);
                let x = random_tensor(&shape, &mut rng, -1.5, 1.5);
                let report = check_layer(&mut layer, &x, &mut rng, &CheckOptions::default()).unwrap();
                assert!(report.worst_rel < 1e-5, "{}: {report:?}", layer.kind());
                assert!(report.checked > 0);
            }
        }
    }
}
