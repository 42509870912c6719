//! Summaries of repeated runs and Welch's unequal-variance t-test.

use crate::special::beta_inc;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    /// `(m1 − m2) / sqrt(s1²/n1 + s2²/n2)`
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub dof: f64,
    /// Two-sided p-value.
    pub p: f64,
}

pub fn welch_t_test(m1: f64, s1: f64, n1: usize, m2: f64, s2: f64, n2: usize) -> Result<WelchTest> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::invalid(format!("Welch's test needs at least 2 samples per group, got {n1} and {n2}")));
    }
    let (v1, v2) = (s1 * s1 / n1 as f64, s2 * s2 / n2 as f64);
    let se2 = v1 + v2;
    if se2 == 0.0 {
        return Ok(if m1 == m2 {
            WelchTest { t: 0.0, dof: f64::INFINITY, p: 1.0 }
        } else {
            WelchTest {
                t: (m1 - m2).signum() * f64::INFINITY,
                dof: f64::INFINITY,
                p: 0.0,
            }
        });
    }
    let t = (m1 - m2) / se2.sqrt();
    let dof = se2 * se2 / (v1 * v1 / (n1 - 1) as f64 + v2 * v2 / (n2 - 1) as f64);
    Ok(WelchTest { t, dof, p: student_two_sided(t, dof) })
}

/// `P(|T| ≥ |t|)` for Student's t with `dof` degrees of freedom.
pub fn student_two_sided(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    beta_inc(dof / 2.0, 0.5, dof / (dof + t * t))
}

/// Final accuracies (fractions in `[0, 1]`) of repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub accuracies: Vec<f64>,
}

impl RunSummary {
    pub fn new(accuracies: Vec<f64>) -> Self {
        RunSummary { accuracies }
    }

    pub fn count(&self) -> usize {
        self.accuracies.len()
    }

    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.count() as f64
    }

    /// Sample standard deviation; zero for a single run.
    pub fn std(&self) -> f64 {
        let n = self.count();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        (self.accuracies.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1) as f64).sqrt()
    }

    /// `mean±std%` with three decimals, e.g. `99.138±0.058%`.
    pub fn format_percent(&self) -> String {
        format_percent(100.0 * self.mean(), 100.0 * self.std())
    }

    pub fn welch(&self, other: &RunSummary) -> Result<WelchTest> {
        welch_t_test(
            100.0 * self.mean(),
            100.0 * self.std(),
            self.count(),
            100.0 * other.mean(),
            100.0 * other.std(),
            other.count(),
        )
    }
}

pub fn format_percent(mean: f64, std: f64) -> String {
    format!("{mean:.3}±{std:.3}%")
}

/// Parses `NN.NNN±N.NNN%` back into (mean, std) in percent.
pub fn parse_percent(s: &str) -> Option<(f64, f64)> {
    let (m, rest) = s.trim().split_once('±')?;
    let s = rest.strip_suffix('%')?;
    Some((m.parse().ok()?, s.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn table_example() {
        let w = welch_t_test(99.138, 0.058, 25, 99.180, 0.070, 25).unwrap();
        assert!((w.t.abs() - 2.310).abs() < 1e-3, "{}", w.t);
        assert!(w.t < 0.0);
        let se2: f64 = 0.058f64.powi(2) / 25.0 + 0.070f64.powi(2) / 25.0;
        let expected = se2 * se2 / ((0.058f64.powi(2) / 25.0).powi(2) / 24.0 + (0.070f64.powi(2) / 25.0).powi(2) / 24.0);
        assert!((w.dof - expected).abs() < 1e-9);
        let reference = StudentsT::new(0.0, 1.0, w.dof).unwrap();
        let p = 2.0 * reference.cdf(-w.t.abs());
        assert!((w.p - p).abs() < 1e-10, "{} vs {p}", w.p);
        assert!(w.p < 0.05);
    }

    #[test]
    fn identical_groups() {
        let w = welch_t_test(99.0, 0.1, 5, 99.0, 0.1, 5).unwrap();
        assert_eq!(w.t, 0.0);
        assert!((w.p - 1.0).abs() < 1e-12);
        let w = welch_t_test(99.0, 0.0, 5, 99.0, 0.0, 5).unwrap();
        assert_eq!(w.p, 1.0);
    }

    #[test]
    fn p_shrinks_with_separation() {
        let mut last = 1.0;
        for k in 1..20 {
            let p = welch_t_test(0.0, 1.0, 10, 0.1 * k as f64, 1.0, 10).unwrap().p;
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn needs_two_samples() {
        assert!(welch_t_test(1.0, 0.1, 1, 1.0, 0.1, 5).is_err());
    }

    #[test]
    fn summary_format() {
        assert_eq!(format_percent(99.138, 0.058), "99.138±0.058%");
        assert_eq!(format_percent(99.18, 0.07), "99.180±0.070%");
        let s = RunSummary::new(vec![0.99]);
        assert_eq!(s.std(), 0.0);
        assert_eq!(s.format_percent(), "99.000±0.000%");
        let s = RunSummary::new(vec![0.98, 0.99, 1.0]);
        assert!((s.std() - 0.01).abs() < 1e-15);
        assert_eq!(s.format_percent(), "99.000±1.000%");
        assert_eq!(parse_percent("99.244±0.060%"), Some((99.244, 0.060)));
        assert_eq!(parse_percent("99.244"), None);
    }
}
