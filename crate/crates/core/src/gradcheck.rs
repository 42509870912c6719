//! Central finite-difference gradient checks and naive-loop oracles.
//!
//! A coordinate is skipped when the `±h` perturbation moves any kinked
//! operation (ReLU-like activations, DoubleThreshold, max pooling, WL1 signs,
//! absolute-value constraints) onto a different linear piece; there the
//! central difference does not estimate a derivative.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::{
    softmax_loss, Activation, ActivationKind, AdaptiveLinear, Constraint, Conv, FullyConnected, GenConv, Layer,
    LayerKind, MaxPool, Norm,
};
use crate::network::{ConvType, Network, NetworkSpec};
use crate::{Result, Tensor};

pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const NETWORK_TOLERANCE: f64 = 1e-4;
pub const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    /// Check at most this many coordinates per tensor (0 = all).
    pub max_coords: usize,
    /// Negate every analytic gradient produced by layers of this kind
    /// before comparing. Used to confirm the checks catch a broken backward.
    pub corrupt: Option<LayerKind>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions {
            step: 1e-5,
            floor: 1e-3,
            max_coords: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub worst_rel: f64,
    pub worst_at: String,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckReport {
    fn record(&mut self, analytic: f64, numeric: f64, floor: f64, at: impl FnOnce() -> String) {
        let err = rel_error(analytic, numeric, floor);
        self.checked += 1;
        if err > self.worst_rel || err.is_nan() {
            self.worst_rel = if err.is_nan() { f64::INFINITY } else { err };
            self.worst_at = at();
        }
    }

    fn merge(&mut self, other: CheckReport) {
        self.checked += other.checked;
        self.skipped += other.skipped;
        if other.worst_rel > self.worst_rel {
            self.worst_rel = other.worst_rel;
            self.worst_at = other.worst_at;
        }
    }
}

/// `|a − n| / max(|a|, |n|, floor)`
pub fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn coords<R: Rng>(len: usize, max: usize, rng: &mut R) -> Vec<usize> {
    if max == 0 || len <= max {
        (0..len).collect()
    } else {
        let mut idx = rand::seq::index::sample(rng, len, max).into_vec();
        idx.sort_unstable();
        idx
    }
}

/// Checks input and parameter gradients of one layer under the loss
/// `⟨r, layer(x)⟩` with a random `r`.
pub fn check_layer<R: Rng>(layer: &mut Layer, input: &Tensor, rng: &mut R, opts: &CheckOptions) -> Result<CheckReport> {
    let out = layer.forward(input)?;
    let base_sig = layer.kink_signature();
    let r = Tensor::from_fn(out.shape(), |_| rng.random_range(-1.0..1.0));
    let mut grad_in = layer.backward(&r)?;
    let mut param_grads: Vec<Tensor> = layer.params().iter().map(|p| p.grad.clone()).collect();
    if opts.corrupt == Some(layer.kind()) {
        grad_in = grad_in.map(|g| -g);
        for g in &mut param_grads {
            *g = g.map(|v| -v);
        }
    }

    let loss = |layer: &mut Layer, x: &Tensor| -> Result<(f64, u64)> {
        let y = layer.forward(x)?;
        Ok((y.dot(&r)?, layer.kink_signature()))
    };
    let h = opts.step;
    let mut report = CheckReport::default();

    let mut x = input.clone();
    for i in coords(x.len(), opts.max_coords, rng) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let (lp, sp) = loss(layer, &x)?;
        x.data_mut()[i] = orig - h;
        let (lm, sm) = loss(layer, &x)?;
        x.data_mut()[i] = orig;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        report.record(grad_in.data()[i], (lp - lm) / (2.0 * h), opts.floor, || format!("input[{i}]"));
    }

    for (k, analytic) in param_grads.iter().enumerate() {
        for j in coords(analytic.len(), opts.max_coords, rng) {
            let mut eval = |delta: f64| -> Result<(f64, u64)> {
                let orig = layer.params()[k].value.data()[j];
                layer.params_mut()[k].value.data_mut()[j] = orig + delta;
                let res = loss(layer, input);
                layer.params_mut()[k].value.data_mut()[j] = orig;
                res
            };
            let (lp, sp) = eval(h)?;
            let (lm, sm) = eval(-h)?;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let name = layer.params()[k].name;
            report.record(analytic.data()[j], (lp - lm) / (2.0 * h), opts.floor, || format!("{name}[{j}]"));
        }
    }
    // leave the caches consistent with the unperturbed input
    layer.forward(input)?;
    Ok(report)
}

/// Checks the gradient of the mean softmax loss with respect to the logits.
pub fn check_softmax<R: Rng>(logits: &Tensor, labels: &[usize], rng: &mut R, opts: &CheckOptions) -> Result<CheckReport> {
    let mut grad = softmax_loss(logits, labels)?.grad;
    if opts.corrupt == Some(LayerKind::SoftmaxLoss) {
        grad = grad.map(|g| -g);
    }
    let h = opts.step;
    let mut report = CheckReport::default();
    let mut x = logits.clone();
    for i in coords(x.len(), opts.max_coords, rng) {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let lp = softmax_loss(&x, labels)?.loss;
        x.data_mut()[i] = orig - h;
        let lm = softmax_loss(&x, labels)?.loss;
        x.data_mut()[i] = orig;
        report.record(grad.data()[i], (lp - lm) / (2.0 * h), opts.floor, || format!("logit[{i}]"));
    }
    Ok(report)
}

/// Checks every parameter gradient of a whole network against central
/// differences of its mean loss on one batch.
pub fn check_network<R: Rng>(
    net: &mut Network,
    batch: &Tensor,
    labels: &[usize],
    rng: &mut R,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    net.forward(batch, labels)?;
    let base_sig = net.kink_signature();
    let corrupt = opts.corrupt;
    net.backward_with(|layer, grad| {
        if corrupt == Some(layer.kind()) {
            *grad = grad.map(|g| -g);
            for p in layer.params_mut() {
                p.grad = p.grad.map(|g| -g);
            }
        }
    })?;
    let analytic: Vec<(String, Tensor)> = net.params().into_iter().map(|(k, p)| (k, p.grad.clone())).collect();
    let h = opts.step;
    let mut report = CheckReport::default();
    for (k, (key, grad)) in analytic.iter().enumerate() {
        for j in coords(grad.len(), opts.max_coords, rng) {
            let mut eval = |delta: f64| -> Result<(f64, u64)> {
                let orig = net.params()[k].1.value.data()[j];
                net.params_mut()[k].1.value.data_mut()[j] = orig + delta;
                let res = net.forward(batch, labels).map(|o| o.loss);
                let sig = net.kink_signature();
                net.params_mut()[k].1.value.data_mut()[j] = orig;
                Ok((res?, sig))
            };
            let (lp, sp) = eval(h)?;
            let (lm, sm) = eval(-h)?;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            report.record(grad.data()[j], (lp - lm) / (2.0 * h), opts.floor, || format!("{key}[{j}]"));
        }
    }
    Ok(report)
}

/// Direct nested-loop convolution with zero padding.
pub fn naive_conv(input: &Tensor, weight: &Tensor, bias: &[f64], stride: usize, pad: usize) -> Result<Tensor> {
    naive_sliding(input, weight, stride, pad, |patch, w, l| {
        patch.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + bias[l]
    })
}

/// Direct nested-loop distance convolution, `tau` already nonnegative.
pub fn naive_genconv(
    input: &Tensor,
    mean: &Tensor,
    tau: &Tensor,
    norm: Norm,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let n = tau.len() / tau.shape()[0];
    let t = tau.data();
    naive_sliding(input, mean, stride, pad, |patch, z, l| {
        let tl = &t[l * n..(l + 1) * n];
        (0..n)
            .map(|i| {
                let d = patch[i] - z[i];
                match norm {
                    Norm::L2 => tl[i] * d * d,
                    Norm::L1 => tl[i] * d.abs(),
                }
            })
            .sum()
    })
}

fn naive_sliding(
    input: &Tensor,
    filters: &Tensor,
    stride: usize,
    pad: usize,
    f: impl Fn(&[f64], &[f64], usize) -> f64,
) -> Result<Tensor> {
    let [b, c, h, w] = input.dims4()?;
    let [planes, _, k, _] = filters.dims4()?;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let n = c * k * k;
    let mut out = Tensor::zeros(&[b, planes, oh, ow]);
    let mut patch = vec![0.0; n];
    for s in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                let mut q = 0;
                for ch in 0..c {
                    for ki in 0..k {
                        for kj in 0..k {
                            let (y, x) = ((i * stride + ki) as isize - pad as isize, (j * stride + kj) as isize - pad as isize);
                            patch[q] = if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                input.data()[((s * c + ch) * h + y as usize) * w + x as usize]
                            } else {
                                0.0
                            };
                            q += 1;
                        }
                    }
                }
                for l in 0..planes {
                    let v = f(&patch, &filters.data()[l * n..(l + 1) * n], l);
                    out.data_mut()[((s * planes + l) * oh + i) * ow + j] = v;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteLine {
    pub name: String,
    pub instances: usize,
    pub checked: usize,
    pub skipped: usize,
    pub worst_rel: f64,
    pub worst_at: String,
    pub tolerance: f64,
}

impl SuiteLine {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.worst_rel < self.tolerance
    }
}

impl fmt::Display for SuiteLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<32} worst {:.3e} (tol {:.0e}) over {} instances, {} checked, {} skipped",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.worst_rel,
            self.tolerance,
            self.instances,
            self.checked,
            self.skipped
        )?;
        if !self.passed() && !self.worst_at.is_empty() {
            write!(f, " at {}", self.worst_at)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub instances: usize,
    pub seed: u64,
    pub check: CheckOptions,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            instances: 20,
            seed: 2024,
            check: CheckOptions::default(),
        }
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn randomize_params(layer: &mut Layer, rng: &mut ChaCha8Rng) {
    for p in layer.params_mut() {
        p.value = match p.name {
            "mean" => uniform(p.value.shape(), -0.5, 1.5, rng),
            "precision" => Tensor::from_fn(p.value.shape(), |_| {
                let mag = rng.random_range(0.2..1.5);
                if rng.random_bool(0.3) { -mag } else { mag }
            }),
            _ => uniform(p.value.shape(), -1.0, 1.0, rng),
        };
    }
}

/// Every layer kind, in a fixed order.
pub fn layer_kinds() -> Vec<LayerKind> {
    let mut kinds = vec![
        LayerKind::Conv,
        LayerKind::GenConvWL1,
        LayerKind::GenConvWL2,
        LayerKind::AdaptiveLinear,
    ];
    kinds.extend(ActivationKind::ALL.iter().map(|&k| LayerKind::Activation(k)));
    kinds.extend([LayerKind::MaxPool, LayerKind::FullyConnected, LayerKind::SoftmaxLoss]);
    kinds
}

/// A random small layer of the given kind and an input for it.
fn random_instance(kind: LayerKind, rng: &mut ChaCha8Rng) -> (Layer, Tensor) {
    let batch = rng.random_range(1..=2);
    let channels = rng.random_range(1..=3);
    let side = rng.random_range(5..=8);
    let spatial = [batch, channels, side, side];
    match kind {
        LayerKind::Conv | LayerKind::GenConvWL1 | LayerKind::GenConvWL2 => {
            let window = rng.random_range(2..=4);
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=1);
            let planes = rng.random_range(1..=3);
            let mut layer = match kind {
                LayerKind::Conv => {
                    let mut c = Conv::new(channels, planes, window, stride, pad);
                    if rng.random_bool(0.3) {
                        c.weight.constraint = Constraint::Abs;
                    }
                    Layer::Conv(c)
                }
                LayerKind::GenConvWL1 => Layer::GenConv(GenConv::new(Norm::L1, channels, planes, window, stride, pad)),
                _ => Layer::GenConv(GenConv::new(Norm::L2, channels, planes, window, stride, pad)),
            };
            randomize_params(&mut layer, rng);
            let lo = if kind == LayerKind::Conv { -1.0 } else { 0.0 };
            (layer, uniform(&spatial, lo, 1.0, rng))
        }
        LayerKind::AdaptiveLinear => {
            let mut layer = Layer::AdaptiveLinear(AdaptiveLinear::new(channels));
            for p in layer.params_mut() {
                p.value = uniform(p.value.shape(), -2.0, 2.0, rng);
            }
            (layer, uniform(&spatial, -2.0, 2.0, rng))
        }
        LayerKind::Activation(a) => {
            let (lo, hi) = match a {
                ActivationKind::DoubleThreshold => (-0.5, 1.5),
                ActivationKind::ReSine | ActivationKind::Sine => (-4.0, 4.0),
                _ => (-2.0, 2.0),
            };
            (Layer::Activation(Activation::new(a)), uniform(&spatial, lo, hi, rng))
        }
        LayerKind::MaxPool => {
            let window = rng.random_range(2..=3);
            let stride = rng.random_range(1..=window);
            (Layer::MaxPool(MaxPool::new(window, stride)), uniform(&spatial, -1.0, 1.0, rng))
        }
        LayerKind::FullyConnected | LayerKind::SoftmaxLoss => {
            let outputs = rng.random_range(1..=6);
            let mut layer = Layer::FullyConnected(FullyConnected::new(channels * side * side, outputs));
            randomize_params(&mut layer, rng);
            (layer, uniform(&spatial, -1.0, 1.0, rng))
        }
    }
}

/// Finite-difference check of every layer kind over seeded random instances.
pub fn layer_suites(opts: &SuiteOptions) -> Result<Vec<SuiteLine>> {
    let mut lines = Vec::new();
    for (k, kind) in layer_kinds().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64 * 7919));
        let mut report = CheckReport::default();
        for _ in 0..opts.instances {
            let r = if kind == LayerKind::SoftmaxLoss {
                let batch = rng.random_range(1..=4);
                let classes = rng.random_range(2..=10);
                let logits = uniform(&[batch, classes], -3.0, 3.0, &mut rng);
                let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..classes)).collect();
                check_softmax(&logits, &labels, &mut rng, &opts.check)?
            } else {
                let (mut layer, input) = random_instance(kind, &mut rng);
                check_layer(&mut layer, &input, &mut rng, &opts.check)?
            };
            report.merge(r);
        }
        lines.push(SuiteLine {
            name: kind.to_string(),
            instances: opts.instances,
            checked: report.checked,
            skipped: report.skipped,
            worst_rel: report.worst_rel,
            worst_at: report.worst_at,
            tolerance: LAYER_TOLERANCE,
        });
    }
    Ok(lines)
}

/// Tiny end-to-end networks used by [`network_suites`].
pub fn tiny_networks() -> Vec<(String, NetworkSpec)> {
    let mut out = vec![
        ("cnn/relu".to_string(), NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU)),
        ("wl2/relu".to_string(), NetworkSpec::tiny(ConvType::WL2, ActivationKind::ReLU)),
        ("wl1/relu".to_string(), NetworkSpec::tiny(ConvType::WL1, ActivationKind::ReLU)),
        ("cnn/sine".to_string(), NetworkSpec::tiny(ConvType::Standard, ActivationKind::Sine)),
    ];
    let mut positive = NetworkSpec::tiny(ConvType::Standard, ActivationKind::ReLU);
    for name in ["conv1", "conv2"] {
        positive.conv_mut(name).unwrap().constraint = Constraint::Abs;
    }
    out.push(("cnn-abs/relu".to_string(), positive));
    let mut thresh = NetworkSpec::tiny(ConvType::WL2, ActivationKind::DoubleThreshold);
    for name in ["conv1", "conv2"] {
        let c = thresh.conv_mut(name).unwrap();
        c.p_low = Some(0.001);
        c.p_high = Some(0.999);
    }
    out.push(("wl2/double_threshold".to_string(), thresh));
    out
}

/// End-to-end finite-difference check of the tiny networks.
pub fn network_suites(opts: &SuiteOptions) -> Result<Vec<SuiteLine>> {
    let mut lines = Vec::new();
    for (k, (name, spec)) in tiny_networks().into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1_000_003 * (k as u64 + 1)));
        let mut report = CheckReport::default();
        for _ in 0..opts.instances {
            let mut net = Network::build(&spec, rng.random())?;
            let batch = rng.random_range(2..=4);
            let x = uniform(&[batch, 1, 8, 8], 0.0, 1.0, &mut rng);
            let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..10)).collect();
            if spec.layers.iter().any(|l| matches!(l, crate::LayerSpec::Conv(c) if c.conv_type != ConvType::Standard))
                && !matches!(spec.layers[0], crate::LayerSpec::Conv(ref c) if c.activation == ActivationKind::DoubleThreshold)
            {
                crate::init::precision_adjustment(&mut net, &x, 1.0)?;
            }
            report.merge(check_network(&mut net, &x, &labels, &mut rng, &opts.check)?);
        }
        lines.push(SuiteLine {
            name: format!("network {name}"),
            instances: opts.instances,
            checked: report.checked,
            skipped: report.skipped,
            worst_rel: report.worst_rel,
            worst_at: report.worst_at,
            tolerance: NETWORK_TOLERANCE,
        });
    }
    Ok(lines)
}

/// im2col-based convolution layers against direct nested loops.
pub fn oracle_suites(opts: &SuiteOptions) -> Result<Vec<SuiteLine>> {
    let mut lines = Vec::new();
    for (k, kind) in [LayerKind::Conv, LayerKind::GenConvWL1, LayerKind::GenConvWL2].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (0xabcd + k as u64));
        let mut report = CheckReport::default();
        for _ in 0..opts.instances.max(10) {
            let batch = rng.random_range(1..=2);
            let channels = rng.random_range(1..=3);
            let side = rng.random_range(5..=8);
            let window = rng.random_range(1..=5);
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=1);
            let planes = rng.random_range(1..=4);
            let x = uniform(&[batch, channels, side, side], -1.0, 1.0, &mut rng);
            let (mut layer, expected) = match kind {
                LayerKind::Conv => {
                    let mut c = Conv::new(channels, planes, window, stride, pad);
                    c.weight.value = uniform(c.weight.value.shape(), -1.0, 1.0, &mut rng);
                    c.bias.value = uniform(&[planes], -1.0, 1.0, &mut rng);
                    let e = naive_conv(&x, &c.weight.value, c.bias.value.data(), stride, pad)?;
                    (Layer::Conv(c), e)
                }
                _ => {
                    let norm = if kind == LayerKind::GenConvWL1 { Norm::L1 } else { Norm::L2 };
                    let mut g = GenConv::new(norm, channels, planes, window, stride, pad);
                    g.mean.value = uniform(g.mean.value.shape(), -1.0, 1.0, &mut rng);
                    g.precision.value = uniform(g.precision.value.shape(), -2.0, 2.0, &mut rng);
                    let tau = g.precision.value.map(f64::abs);
                    let e = naive_genconv(&x, &g.mean.value, &tau, norm, stride, pad)?;
                    (Layer::GenConv(g), e)
                }
            };
            let got = layer.forward(&x)?;
            if got.shape() != expected.shape() {
                return Err(crate::Error::shape(format!(
                    "{kind}: layer output {:?} vs oracle {:?}",
                    got.shape(),
                    expected.shape()
                )));
            }
            for (i, (a, b)) in got.data().iter().zip(expected.data()).enumerate() {
                report.record(*a, *b, opts.check.floor, || format!("output[{i}]"));
            }
        }
        lines.push(SuiteLine {
            name: format!("oracle {kind}"),
            instances: opts.instances.max(10),
            checked: report.checked,
            skipped: 0,
            worst_rel: report.worst_rel,
            worst_at: report.worst_at,
            tolerance: ORACLE_TOLERANCE,
        });
    }
    Ok(lines)
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub lines: Vec<SuiteLine>,
    pub seconds: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(SuiteLine::passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in &self.lines {
            writeln!(f, "{line}")?;
        }
        write!(
            f,
            "{} of {} suites passed in {:.1}s",
            self.lines.iter().filter(|l| l.passed()).count(),
            self.lines.len(),
            self.seconds
        )
    }
}

pub fn run_all(opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut lines = layer_suites(opts)?;
    lines.extend(network_suites(opts)?);
    lines.extend(oracle_suites(opts)?);
    Ok(SuiteReport {
        lines,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SuiteOptions {
        SuiteOptions {
            instances: 3,
            ..Default::default()
        }
    }

    #[test]
    fn layer_suites_cover_each_kind_once_and_pass() {
        let lines = layer_suites(&quick()).unwrap();
        assert_eq!(lines.len(), layer_kinds().len());
        for kind in layer_kinds() {
            assert_eq!(lines.iter().filter(|l| l.name == kind.to_string()).count(), 1);
        }
        for l in &lines {
            assert!(l.passed(), "{l}");
        }
    }

    #[test]
    fn network_and_oracle_suites_pass() {
        for l in network_suites(&quick()).unwrap().iter().chain(&oracle_suites(&quick()).unwrap()) {
            assert!(l.passed(), "{l}");
        }
    }

    #[test]
    fn corrupted_backward_is_named() {
        let mut opts = quick();
        opts.check.corrupt = Some(LayerKind::GenConvWL2);
        let lines = layer_suites(&opts).unwrap();
        let failed: Vec<&str> = lines.iter().filter(|l| !l.passed()).map(|l| l.name.as_str()).collect();
        assert_eq!(failed, vec!["GenConvWL2"]);
        let nets = network_suites(&opts).unwrap();
        assert!(nets.iter().any(|l| l.name.contains("wl2") && !l.passed()));
        assert!(nets.iter().filter(|l| l.name.contains("cnn")).all(SuiteLine::passed));
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(1.0, 1.0, 1e-3), 0.0);
        assert_eq!(rel_error(2e-9, 1e-9, 1e-3), 1e-6);
        assert!((rel_error(2.0, 1.0, 1e-3) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn naive_conv_with_padding() {
        let x = Tensor::full(&[1, 1, 2, 2], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = naive_conv(&x, &w, &[0.0], 1, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 4.0, 4.0, 4.0]);
    }
}
