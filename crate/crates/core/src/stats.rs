//! Statistical machinery for Monte-Carlo verification: mean/variance
//! estimates, z-scores, chi-square goodness of fit, and multiple-testing
//! thresholds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::report::Check;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: u64,
}

impl Estimate {
    /// Mean and standard error of a sample.
    pub fn from_samples(samples: &[f64]) -> Self {
        let n = samples.len() as u64;
        if n == 0 {
            return Estimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                n: 0,
            };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Estimate {
                mean,
                std_error: f64::INFINITY,
                n,
            };
        }
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        Estimate {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        }
    }

    /// z-score of the estimate against a target value.
    ///
    /// A zero standard error is legitimate when the statistic is surely
    /// constant; then the score is 0 for an exact match and infinite
    /// otherwise.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = self.mean - target;
        if self.std_error == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / self.std_error
        }
    }
}

/// Mean difference of paired samples with its standard error.
///
/// Pairing matters: both sides of an identity evaluated on the same draw are
/// strongly correlated, and the paired test exploits that.
pub fn paired_difference(lhs: &[f64], rhs: &[f64]) -> Result<Estimate> {
    if lhs.len() != rhs.len() {
        return Err(Error::InvalidParameter(
            "paired samples differ in length".into(),
        ));
    }
    let diffs: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
    Ok(Estimate::from_samples(&diffs))
}

/// z-score of the difference of two independent estimates.
pub fn two_sample_z(lhs: &Estimate, rhs: &Estimate) -> f64 {
    let se = (lhs.std_error.powi(2) + rhs.std_error.powi(2)).sqrt();
    let diff = lhs.mean - rhs.mean;
    if se == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / se
    }
}

/// Result of a chi-square goodness-of-fit test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: u64,
    pub p_value: f64,
    /// Cells left after pooling low-expectation cells.
    pub cells: usize,
}

/// Chi-square goodness of fit of observed counts against expected counts.
///
/// Cells with expected count below `min_expected` are pooled into their
/// successor (the trailing pool accumulates backwards) so the asymptotic
/// distribution is trustworthy.
pub fn chi_square_gof(
    observed: &[u64],
    expected: &[f64],
    min_expected: f64,
) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() || observed.is_empty() {
        return Err(Error::InvalidParameter(
            "observed and expected cell lists must match and be non-empty".into(),
        ));
    }
    if expected.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::InvalidParameter(
            "expected counts must be finite and nonnegative".into(),
        ));
    }

    // Pool forward: accumulate cells until the expectation clears the floor.
    let mut pooled: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for (&o, &e) in observed.iter().zip(expected) {
        acc_o += o as f64;
        acc_e += e;
        if acc_e >= min_expected {
            pooled.push((acc_o, acc_e));
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0.0 {
        if let Some(last) = pooled.last_mut() {
            last.0 += acc_o;
            last.1 += acc_e;
        } else {
            pooled.push((acc_o, acc_e));
        }
    }
    if pooled.len() < 2 {
        return Err(Error::InvalidParameter(
            "fewer than two cells remain after pooling".into(),
        ));
    }

    let statistic: f64 = pooled
        .iter()
        .map(|(o, e)| {
            if *e == 0.0 {
                if *o == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (o - e).powi(2) / e
            }
        })
        .sum();
    let dof = (pooled.len() - 1) as u64;
    let p_value = if statistic.is_finite() {
        let dist = ChiSquared::new(dof as f64)
            .map_err(|e| Error::InvalidParameter(format!("chi-square dof: {e}")))?;
        1.0 - dist.cdf(statistic)
    } else {
        0.0
    };
    Ok(ChiSquareResult {
        statistic,
        dof,
        p_value,
        cells: pooled.len(),
    })
}

/// Compares two estimates and renders the outcome as a check.
///
/// When both standard errors vanish the quantities are surely constant and
/// the absolute defect is held against `eps_exact`; otherwise a side with
/// zero standard error acts as an exact constant and the difference is
/// scored as a z-statistic against `z_max`.
pub fn compare_estimates(
    name: impl Into<String>,
    lhs: &Estimate,
    rhs: &Estimate,
    eps_exact: f64,
    z_max: f64,
) -> Check {
    if lhs.std_error == 0.0 && rhs.std_error == 0.0 {
        Check::exact(name, lhs.mean, rhs.mean, eps_exact)
    } else {
        let z = two_sample_z(lhs, rhs);
        Check::statistical(name, lhs.mean, rhs.mean, z, z_max)
    }
}

/// Widens a z-threshold for a battery of `tests` simultaneous checks so the
/// family-wise false-alarm rate matches a single test at `z_max`
/// (Bonferroni).
pub fn bonferroni_z(z_max: f64, tests: usize) -> f64 {
    if tests <= 1 {
        return z_max;
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let alpha = 2.0 * normal.cdf(-z_max);
    normal.inverse_cdf(1.0 - alpha / (2.0 * tests as f64))
}
