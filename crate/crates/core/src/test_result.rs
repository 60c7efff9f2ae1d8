//! Relative statistics and the normal-threshold decision shared by all tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Plug-in variances below this are treated as degenerate: the normal
/// approximation does not hold and the test does not reject.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Default regulariser in the power criterion `S / (gamma + sqrt(nu))`.
pub const DEFAULT_GAMMA: f64 = 1e-4;

/// Decomposition of the asymptotic variance `nu = 4 (p - 2 pq + q)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceTerms {
    pub p: f64,
    pub pq: f64,
    pub q: f64,
}

impl VarianceTerms {
    pub fn nu(&self) -> f64 {
        4.0 * (self.p - 2.0 * self.pq + self.q)
    }
}

/// Difference of two discrepancy estimates together with the plug-in
/// variance of `sqrt(n)` times that difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeStatistic {
    /// `D(P, R) - D(Q, R)` estimate; positive favours `Q`.
    pub estimate: f64,
    /// Plug-in variance, clamped at zero.
    pub variance: f64,
    pub n: usize,
    pub terms: Option<VarianceTerms>,
}

impl RelativeStatistic {
    pub(crate) fn new(estimate: f64, raw_variance: f64, n: usize, terms: Option<VarianceTerms>) -> Self {
        Self {
            estimate,
            variance: raw_variance.max(0.0),
            n,
            terms,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.variance >= VARIANCE_FLOOR)
    }

    /// `estimate / (gamma + sqrt(variance))`.
    pub fn power_criterion(&self, gamma: f64) -> f64 {
        self.estimate / (gamma + self.variance.sqrt())
    }

    /// Level-`alpha` decision with the adjusted threshold `sqrt(nu) z_{1-alpha}`.
    pub fn test(&self, alpha: f64) -> Result<TestResult> {
        check_alpha(alpha)?;
        let stat = (self.n as f64).sqrt() * self.estimate;
        let sd = self.variance.sqrt();
        let threshold = sd * standard_normal().inverse_cdf(1.0 - alpha);
        let degenerate = self.is_degenerate();
        let (p_value, reject) = if degenerate {
            (1.0, false)
        } else {
            let p = standard_normal().sf(stat / sd);
            (p, stat > threshold)
        };
        Ok(TestResult {
            stat,
            variance: self.variance,
            threshold,
            p_value,
            reject,
            alpha,
            n: self.n,
            degenerate,
        })
    }
}

/// Outcome of a relative goodness-of-fit test of `H0: D(P,R) <= D(Q,R)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// `sqrt(n) * estimate`.
    pub stat: f64,
    pub variance: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub reject: bool,
    pub alpha: f64,
    pub n: usize,
    /// Variance fell below [`VARIANCE_FLOOR`]; `reject` is forced to false.
    pub degenerate: bool,
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "significance level must lie in (0, 1), got {alpha}"
        )));
    }
    Ok(())
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "regulariser gamma must be finite and non-negative, got {gamma}"
        )));
    }
    Ok(())
}

pub(crate) fn standard_normal() -> Normal {
    Normal::standard()
}

/// Population variance (1/n normalisation).
pub(crate) fn var_n(values: &[f64]) -> f64 {
    cov_n(values, values)
}

/// Population covariance (1/n normalisation).
pub(crate) fn cov_n(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n
}
