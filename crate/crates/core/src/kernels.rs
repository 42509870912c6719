//! Weighted distances, the similarities built on them, and the chi-squared
//! threshold construction behind the DoubleThreshold activation.
//!
//! Precisions are stored unconstrained and used through their absolute value,
//! so every effective precision is nonnegative. Gradients with respect to the
//! stored value pick up `sgn(theta)`, with `sgn(0) = 0`.

use crate::special::{gamma_p, ln_gamma};
use crate::{Error, Result};

/// Sign with `sgn(0) = 0`; the subgradient choice used at every kink.
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Stored precision parameters; the effective precision is `|theta|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Precisions {
    theta: Vec<f64>,
}

impl Precisions {
    pub fn new(theta: Vec<f64>) -> Self {
        Precisions { theta }
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn effective(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t.abs()).collect()
    }

    /// Chain rule through `tau = |theta|`.
    pub fn stored_grad(&self, gtau: &[f64]) -> Vec<f64> {
        self.theta.iter().zip(gtau).map(|(t, g)| g * sgn(*t)).collect()
    }
}

/// Gradients of a distance with respect to the patch, the pattern and the
/// effective precisions.
#[derive(Debug, Clone, PartialEq)]
pub struct DistGrads {
    pub gx: Vec<f64>,
    pub gz: Vec<f64>,
    pub gtau: Vec<f64>,
}

fn check_lengths(x: &[f64], z: &[f64], tau: &[f64]) -> Result<()> {
    if x.len() != z.len() || x.len() != tau.len() {
        return Err(Error::shape(format!(
            "distance operands have lengths {}, {}, {}",
            x.len(),
            z.len(),
            tau.len()
        )));
    }
    Ok(())
}

/// Squared weighted L2 distance `Σ tau_i (x_i − z_i)²`.
pub fn wl2_dist(x: &[f64], z: &[f64], tau: &[f64]) -> Result<f64> {
    check_lengths(x, z, tau)?;
    Ok(x.iter()
        .zip(z)
        .zip(tau)
        .map(|((a, b), t)| t * (a - b) * (a - b))
        .sum())
}

/// Weighted L1 distance `Σ tau_i |x_i − z_i|`.
pub fn wl1_dist(x: &[f64], z: &[f64], tau: &[f64]) -> Result<f64> {
    check_lengths(x, z, tau)?;
    Ok(x.iter()
        .zip(z)
        .zip(tau)
        .map(|((a, b), t)| t * (a - b).abs())
        .sum())
}

pub fn wl2_dist_backward(x: &[f64], z: &[f64], tau: &[f64], g: f64) -> Result<DistGrads> {
    check_lengths(x, z, tau)?;
    let mut out = DistGrads {
        gx: Vec::with_capacity(x.len()),
        gz: Vec::with_capacity(x.len()),
        gtau: Vec::with_capacity(x.len()),
    };
    for ((a, b), t) in x.iter().zip(z).zip(tau) {
        let d = a - b;
        let gx = g * 2.0 * t * d;
        out.gx.push(gx);
        out.gz.push(-gx);
        out.gtau.push(g * d * d);
    }
    Ok(out)
}

pub fn wl1_dist_backward(x: &[f64], z: &[f64], tau: &[f64], g: f64) -> Result<DistGrads> {
    check_lengths(x, z, tau)?;
    let mut out = DistGrads {
        gx: Vec::with_capacity(x.len()),
        gz: Vec::with_capacity(x.len()),
        gtau: Vec::with_capacity(x.len()),
    };
    for ((a, b), t) in x.iter().zip(z).zip(tau) {
        let d = a - b;
        let gx = g * t * sgn(d);
        out.gx.push(gx);
        out.gz.push(-gx);
        out.gtau.push(g * d.abs());
    }
    Ok(out)
}

/// Non-isotropic Gaussian kernel `exp(−½ Σ tau_i (x_i − z_i)²)`.
pub fn gaussian_sim(x: &[f64], z: &[f64], tau: &[f64]) -> Result<f64> {
    Ok((-0.5 * wl2_dist(x, z, tau)?).exp())
}

/// Non-isotropic Laplacian kernel `exp(−Σ tau_i |x_i − z_i|)`.
pub fn laplacian_sim(x: &[f64], z: &[f64], tau: &[f64]) -> Result<f64> {
    Ok((-wl1_dist(x, z, tau)?).exp())
}

/// Cosine kernel `cos(wᵀ(x − z))`.
pub fn cosine_kernel(x: &[f64], z: &[f64], w: &[f64]) -> Result<f64> {
    check_lengths(x, z, w)?;
    Ok(w.iter().zip(x.iter().zip(z)).map(|(wi, (a, b))| wi * (a - b)).sum::<f64>().cos())
}

/// The pattern `z` hidden in a sine unit `sin(wᵀx + b)`: the minimum-norm
/// solution of `b = −wᵀz + π/2`, so that `sin(wᵀx + b) = cos(wᵀ(x − z))`.
pub fn sine_implicit_pattern(w: &[f64], b: f64) -> Result<Vec<f64>> {
    let norm2: f64 = w.iter().map(|v| v * v).sum();
    if norm2 == 0.0 {
        return Err(Error::invalid("sine unit with zero weight vector"));
    }
    let k = (std::f64::consts::FRAC_PI_2 - b) / norm2;
    Ok(w.iter().map(|v| k * v).collect())
}

/// CDF of the chi-squared distribution with `dof` degrees of freedom.
pub fn chi2_cdf(d: f64, dof: usize) -> f64 {
    gamma_p(dof as f64 / 2.0, d / 2.0)
}

fn chi2_pdf(d: f64, dof: usize) -> f64 {
    if d <= 0.0 {
        return 0.0;
    }
    let k = dof as f64 / 2.0;
    ((k - 1.0) * d.ln() - d / 2.0 - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// Inverse CDF of the chi-squared distribution: bracket, then safeguarded
/// Newton steps (bisection whenever Newton leaves the bracket).
pub fn chi2_inv_cdf(p: f64, dof: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1)")));
    }
    if dof == 0 {
        return Err(Error::invalid("chi-squared needs at least one degree of freedom"));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = dof as f64;
    while chi2_cdf(hi, dof) < p {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::invalid(format!("cannot bracket chi-squared quantile {p}")));
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = chi2_cdf(x, dof) - p;
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let pdf = chi2_pdf(x, dof);
        let newton = if pdf > 0.0 { x - f / pdf } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        let step = (next - x).abs();
        x = next;
        if step <= 1e-13 * x || hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(x)
}

/// Affine map sending `d_low ↦ 1` and `d_high ↦ 0`; composed with the
/// DoubleThreshold activation it gives the piecewise-linear similarity
/// derived from chi-squared thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdAffine {
    pub slope: f64,
    pub bias: f64,
    pub d_low: f64,
    pub d_high: f64,
}

impl ThresholdAffine {
    pub fn from_thresholds(d_low: f64, d_high: f64) -> Result<Self> {
        if !(d_low >= 0.0 && d_high > d_low) {
            return Err(Error::invalid(format!(
                "degenerate thresholds d_low = {d_low}, d_high = {d_high}"
            )));
        }
        let span = d_high - d_low;
        Ok(ThresholdAffine {
            slope: -1.0 / span,
            bias: d_high / span,
            d_low,
            d_high,
        })
    }

    pub fn apply(&self, d: f64) -> f64 {
        self.slope * d + self.bias
    }
}

/// Thresholds at the `p_low` and `p_high` quantiles of chi-squared with `dof`
/// degrees of freedom.
pub fn threshold_affine(dof: usize, p_low: f64, p_high: f64) -> Result<ThresholdAffine> {
    if !(p_low < p_high) {
        return Err(Error::invalid(format!(
            "p_low ({p_low}) must be below p_high ({p_high})"
        )));
    }
    let d_low = chi2_inv_cdf(p_low, dof)?;
    let d_high = chi2_inv_cdf(p_high, dof)?;
    ThresholdAffine::from_thresholds(d_low, d_high)
}
