//! Parameter fillers and the two data-dependent initializers.
//!
//! Precision adjustment walks the convolution modules in order and rescales
//! each one so the signal entering its nonlinearity has zero mean and a
//! target standard deviation on an init batch. Whole-network adjustment
//! additionally balances the gradient-to-parameter ratio across layers.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::layers::Layer;
use crate::network::{Network, Unit};
use crate::tensor::moments;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FillerSpec {
    /// `U(−√(3/fan_in), √(3/fan_in))` with `fan_in = len / shape[0]`.
    Xavier,
    Uniform { lo: f64, hi: f64 },
    Constant(f64),
    /// `|N(0, std²)|`
    AbsGaussian { std: f64 },
}

impl FillerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            FillerSpec::Uniform { lo, hi } if !(lo <= hi) => {
                Err(Error::invalid(format!("uniform filler needs lo <= hi, got ({lo}, {hi})")))
            }
            FillerSpec::AbsGaussian { std } if !(std > 0.0) => {
                Err(Error::invalid(format!("abs_gaussian filler needs std > 0, got {std}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FillerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillerSpec::Xavier => f.write_str("xavier"),
            FillerSpec::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
            FillerSpec::Constant(v) => write!(f, "constant({v})"),
            FillerSpec::AbsGaussian { std } => write!(f, "abs_gaussian({std})"),
        }
    }
}

/// Splits `name(a,b,...)` into the name and parsed numeric arguments.
pub(crate) fn parse_call(s: &str) -> Result<(&str, Vec<f64>)> {
    let s = s.trim();
    let Some(open) = s.find('(') else {
        return Ok((s, Vec::new()));
    };
    let inner = s[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| Error::invalid(format!("missing `)` in `{s}`")))?;
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner
            .split(',')
            .map(|a| {
                a.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::invalid(format!("bad number `{}` in `{s}`", a.trim())))
            })
            .collect::<Result<_>>()?
    };
    Ok((s[..open].trim(), args))
}

impl FromStr for FillerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_call(s)?;
        let spec = match (name, args.as_slice()) {
            ("xavier", []) => FillerSpec::Xavier,
            ("uniform", &[lo, hi]) => FillerSpec::Uniform { lo, hi },
            ("constant", &[v]) => FillerSpec::Constant(v),
            ("abs_gaussian", &[std]) => FillerSpec::AbsGaussian { std },
            _ => return Err(Error::invalid(format!("unknown filler `{s}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub fn fill<R: Rng + ?Sized>(param: &mut Tensor, spec: &FillerSpec, rng: &mut R) -> Result<()> {
    spec.validate()?;
    match *spec {
        FillerSpec::Constant(v) => param.fill(v),
        FillerSpec::Uniform { lo, hi } => {
            for v in param.data_mut() {
                *v = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            }
        }
        FillerSpec::Xavier => {
            let fan_in = param.len() / param.shape()[0];
            let limit = (3.0 / fan_in as f64).sqrt();
            for v in param.data_mut() {
                *v = rng.random_range(-limit..=limit);
            }
        }
        FillerSpec::AbsGaussian { std } => {
            let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
            for v in param.data_mut() {
                *v = normal.sample(rng).abs();
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitAlgorithm {
    /// Keep whatever the fillers produced.
    Xavier,
    PrecisionAdjustment { target_std: f64 },
    WholeNetwork(WholeNetworkOptions),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WholeNetworkOptions {
    pub target_std: f64,
    pub ratio_tol: f64,
    pub max_iters: usize,
}

impl Default for WholeNetworkOptions {
    fn default() -> Self {
        WholeNetworkOptions {
            target_std: 1.0,
            ratio_tol: 0.25,
            max_iters: 10,
        }
    }
}

impl fmt::Display for InitAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitAlgorithm::Xavier => f.write_str("xavier"),
            InitAlgorithm::PrecisionAdjustment { target_std } => write!(f, "precision_adjustment({target_std})"),
            InitAlgorithm::WholeNetwork(o) => write!(
                f,
                "whole_network_adjustment({},{},{})",
                o.target_std, o.ratio_tol, o.max_iters
            ),
        }
    }
}

impl FromStr for InitAlgorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = parse_call(s)?;
        let d = WholeNetworkOptions::default();
        let alg = match (name, args.as_slice()) {
            ("xavier", []) => InitAlgorithm::Xavier,
            ("precision_adjustment", []) => InitAlgorithm::PrecisionAdjustment { target_std: 1.0 },
            ("precision_adjustment", &[t]) => InitAlgorithm::PrecisionAdjustment { target_std: t },
            ("whole_network_adjustment", []) => InitAlgorithm::WholeNetwork(d),
            ("whole_network_adjustment", &[t]) => InitAlgorithm::WholeNetwork(WholeNetworkOptions { target_std: t, ..d }),
            ("whole_network_adjustment", &[t, tol]) => {
                InitAlgorithm::WholeNetwork(WholeNetworkOptions { target_std: t, ratio_tol: tol, ..d })
            }
            ("whole_network_adjustment", &[t, tol, iters]) if iters >= 0.0 && iters.fract() == 0.0 => {
                InitAlgorithm::WholeNetwork(WholeNetworkOptions {
                    target_std: t,
                    ratio_tol: tol,
                    max_iters: iters as usize,
                })
            }
            _ => return Err(Error::invalid(format!("unknown init algorithm `{s}`"))),
        };
        match alg {
            InitAlgorithm::PrecisionAdjustment { target_std } | InitAlgorithm::WholeNetwork(WholeNetworkOptions { target_std, .. })
                if !(target_std > 0.0) =>
            {
                Err(Error::invalid(format!("target std must be positive in `{s}`")))
            }
            _ => Ok(alg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleReport {
    pub module: String,
    pub pre_mean: f64,
    pub pre_std: f64,
    pub post_mean: f64,
    pub post_std: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitReport {
    pub algorithm: String,
    pub modules: Vec<ModuleReport>,
    /// Gradient-to-parameter ratios, one row per between-layer iteration.
    pub ratios: Vec<Vec<(String, f64)>>,
    pub converged: Option<bool>,
    pub warnings: Vec<String>,
}

impl fmt::Display for InitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "init: {}", self.algorithm)?;
        if !self.modules.is_empty() {
            writeln!(
                f,
                "{:<10} {:>12} {:>12} {:>12} {:>12} {:>12}",
                "module", "pre_mean", "pre_std", "post_mean", "post_std", "scale"
            )?;
            for m in &self.modules {
                writeln!(
                    f,
                    "{:<10} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                    m.module, m.pre_mean, m.pre_std, m.post_mean, m.post_std, m.scale
                )?;
            }
        }
        if let Some(first) = self.ratios.first() {
            write!(f, "{:<6}", "iter")?;
            for (name, _) in first {
                write!(f, " {name:>12}")?;
            }
            writeln!(f)?;
            for (i, row) in self.ratios.iter().enumerate() {
                write!(f, "{i:<6}")?;
                for (_, r) in row {
                    write!(f, " {r:>12.4e}")?;
                }
                writeln!(f)?;
            }
        }
        if let Some(c) = self.converged {
            writeln!(f, "converged: {c}")?;
        }
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    /// Rescale to the target std and center.
    Normalize(f64),
    /// Only center.
    Center,
}

fn set_adaptive(net: &mut Network, index: Option<usize>, slope: f64, bias: f64) {
    if let Some(Layer::AdaptiveLinear(al)) = index.map(|i| &mut net.layers_mut()[i]) {
        al.slope.value.fill(slope);
        al.bias.value.fill(bias);
    }
}

fn scale_like(layer: &mut Layer) -> Option<&mut Tensor> {
    match layer {
        Layer::Conv(c) => Some(&mut c.weight.value),
        Layer::FullyConnected(f) => Some(&mut f.weight.value),
        Layer::GenConv(g) => Some(&mut g.precision.value),
        _ => None,
    }
}

fn scale_like_param(layer: &Layer) -> Option<&crate::layers::Param> {
    match layer {
        Layer::Conv(c) => Some(&c.weight),
        Layer::FullyConnected(f) => Some(&f.weight),
        Layer::GenConv(g) => Some(&g.precision),
        _ => None,
    }
}

fn adjust_unit(net: &mut Network, unit: &Unit, batch: &Tensor, mode: Mode) -> Result<ModuleReport> {
    let degenerate = || Error::DegenerateSignal {
        module: unit.name.clone(),
    };
    let is_distance = matches!(net.layers()[unit.main], Layer::GenConv(_));
    if is_distance && unit.adaptive.is_none() {
        return Err(Error::invalid(format!(
            "{}: a distance convolution needs an AdaptiveLinear layer to be adjusted",
            unit.name
        )));
    }
    let pre = moments(&net.forward_to(batch, unit.signal)?);

    let scale;
    if is_distance {
        let (m, s) = moments(&net.forward_to(batch, unit.main)?);
        if !(s > 0.0) {
            return Err(degenerate());
        }
        scale = match mode {
            Mode::Normalize(target) => target / s,
            Mode::Center => 1.0,
        };
        if let Some(t) = scale_like(&mut net.layers_mut()[unit.main]) {
            t.scale(scale);
        }
        set_adaptive(net, unit.adaptive, -1.0, m * scale);
    } else {
        set_adaptive(net, unit.adaptive, 1.0, 0.0);
        match &mut net.layers_mut()[unit.main] {
            Layer::Conv(c) => c.bias.value.fill(0.0),
            Layer::FullyConnected(f) => f.bias.value.fill(0.0),
            _ => unreachable!("units only reference parameterized layers"),
        }
        let (m, s) = moments(&net.forward_to(batch, unit.main)?);
        if !(s > 0.0) {
            return Err(degenerate());
        }
        scale = match mode {
            Mode::Normalize(target) => target / s,
            Mode::Center => 1.0,
        };
        match &mut net.layers_mut()[unit.main] {
            Layer::Conv(c) => {
                c.weight.value.scale(scale);
                c.bias.value.fill(-m * scale);
            }
            Layer::FullyConnected(f) => {
                f.weight.value.scale(scale);
                f.bias.value.fill(-m * scale);
            }
            _ => unreachable!(),
        }
    }
    let post = moments(&net.forward_to(batch, unit.signal)?);
    Ok(ModuleReport {
        module: unit.name.clone(),
        pre_mean: pre.0,
        pre_std: pre.1,
        post_mean: post.0,
        post_std: post.1,
        scale,
    })
}

/// Rescales every convolution module, in order, so the signal entering its
/// nonlinearity has mean 0 and standard deviation `target_std` on `batch`.
///
/// Distance modules get their precisions scaled and the following
/// AdaptiveLinear set to `a = −1, b = mean(D)`; ordinary modules get their
/// weights scaled and the bias set to cancel the mean.
pub fn precision_adjustment(net: &mut Network, batch: &Tensor, target_std: f64) -> Result<InitReport> {
    if !(target_std > 0.0) {
        return Err(Error::invalid(format!("target std must be positive, got {target_std}")));
    }
    let mut report = InitReport {
        algorithm: InitAlgorithm::PrecisionAdjustment { target_std }.to_string(),
        ..Default::default()
    };
    let units: Vec<Unit> = net.units().iter().filter(|u| u.is_conv).cloned().collect();
    for unit in &units {
        report.modules.push(adjust_unit(net, unit, batch, Mode::Normalize(target_std))?);
    }
    Ok(report)
}

/// `mean|grad| / mean|param|` over the scale-like parameter of every unit,
/// after one forward/backward on the batch.
pub fn layer_ratios(net: &mut Network, batch: &Tensor, labels: &[usize]) -> Result<Vec<(String, f64)>> {
    net.forward(batch, labels)?;
    net.backward()?;
    let units = net.units().to_vec();
    Ok(units
        .iter()
        .map(|u| {
            let p = scale_like_param(&net.layers()[u.main]).expect("unit without a scale parameter");
            (u.name.clone(), p.grad.abs_mean() / p.value.abs_mean())
        })
        .collect())
}

pub fn geometric_mean(values: &[f64]) -> f64 {
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Largest factor by which any ratio deviates from the geometric mean.
pub fn ratio_spread(ratios: &[(String, f64)]) -> f64 {
    let values: Vec<f64> = ratios.iter().map(|r| r.1).collect();
    let geo = geometric_mean(&values);
    values.iter().map(|&r| (r / geo).max(geo / r)).fold(1.0, f64::max)
}

/// Iterative data-dependent initialization over all parameterized units.
///
/// First every unit is normalized in order. Then, repeatedly, the
/// gradient-to-parameter ratio `ρ_l` of each unit is measured on the next
/// batch; units are scaled by `(ρ_l / geomean ρ)^½` and re-centered, until all
/// ratios are within a factor `1 + ratio_tol` of their geometric mean.
/// Non-convergence is reported as a warning. `batches` is cycled.
pub fn whole_network_adjustment(
    net: &mut Network,
    batches: &[(Tensor, Vec<usize>)],
    opts: &WholeNetworkOptions,
) -> Result<InitReport> {
    if batches.is_empty() {
        return Err(Error::invalid("whole-network adjustment needs at least one batch"));
    }
    if !(opts.target_std > 0.0) || !(opts.ratio_tol >= 0.0) {
        return Err(Error::invalid("target std must be positive and ratio tolerance nonnegative"));
    }
    let mut report = InitReport {
        algorithm: InitAlgorithm::WholeNetwork(*opts).to_string(),
        ..Default::default()
    };
    let units = net.units().to_vec();
    for unit in &units {
        report.modules.push(adjust_unit(net, unit, &batches[0].0, Mode::Normalize(opts.target_std))?);
    }

    let mut converged = false;
    for iter in 0..=opts.max_iters {
        let (batch, labels) = &batches[iter % batches.len()];
        let ratios = layer_ratios(net, batch, labels)?;
        let values: Vec<f64> = ratios.iter().map(|r| r.1).collect();
        report.ratios.push(ratios);
        if values.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            report.warnings.push(format!("iteration {iter}: non-positive or non-finite ratio, stopping"));
            break;
        }
        let geo = geometric_mean(&values);
        if values.iter().all(|&r| (r / geo).max(geo / r) <= 1.0 + opts.ratio_tol) {
            converged = true;
            break;
        }
        if iter == opts.max_iters {
            break;
        }
        for (unit, &r) in units.iter().zip(&values) {
            let zeta = (r / geo).sqrt();
            if let Some(t) = scale_like(&mut net.layers_mut()[unit.main]) {
                t.scale(zeta);
            }
        }
        for unit in &units {
            adjust_unit(net, unit, batch, Mode::Center)?;
        }
    }
    if !converged {
        report.warnings.push(format!(
            "ratios did not balance within {} iterations",
            opts.max_iters
        ));
    }
    report.converged = Some(converged);
    Ok(report)
}
