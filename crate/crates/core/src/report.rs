//! Machine-readable verification reports.

use serde::{Deserialize, Serialize};

/// One checked quantity: the claimed value, the computed/estimated value, and
/// the discrepancy on the scale the tolerance refers to (absolute defect for
/// exact checks, z-score for statistical ones).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: f64,
    pub actual: f64,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn exact(name: impl Into<String>, expected: f64, actual: f64, tol: f64) -> Self {
        let discrepancy = (expected - actual).abs();
        Check {
            name: name.into(),
            expected,
            actual,
            discrepancy,
            tolerance: tol,
            passed: discrepancy <= tol,
        }
    }

    pub fn statistical(name: impl Into<String>, expected: f64, actual: f64, z: f64, z_max: f64) -> Self {
        Check {
            name: name.into(),
            expected,
            actual,
            discrepancy: z.abs(),
            tolerance: z_max,
            passed: z.abs() <= z_max,
        }
    }

    /// A goodness-of-fit check: passes when the p-value clears the floor.
    pub fn p_value(name: impl Into<String>, p: f64, p_min: f64) -> Self {
        Check {
            name: name.into(),
            expected: p_min,
            actual: p,
            discrepancy: (p_min - p).max(0.0),
            tolerance: 0.0,
            passed: p >= p_min,
        }
    }
}

/// Outcome of one verification experiment: a battery of checks plus metadata
/// about how they were produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub experiment: String,
    pub mode: VerificationMode,
    pub seed: u64,
    pub replicas: u64,
    pub checks: Vec<Check>,
    pub passed: bool,
    /// Free-form numeric facts worth keeping (truncation errors, widths, ...).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationMode {
    Exact,
    Statistical,
}

impl VerificationReport {
    pub fn new(
        experiment: impl Into<String>,
        mode: VerificationMode,
        seed: u64,
        replicas: u64,
        checks: Vec<Check>,
    ) -> Self {
        let passed = checks.iter().all(|c| c.passed);
        VerificationReport {
            experiment: experiment.into(),
            mode,
            seed,
            replicas,
            checks,
            passed,
        notes: Vec::new(),
        }
    }

    pub fn with_note(mut self, key: impl Into<String>, value: f64) -> Self {
        self.notes.push((key.into(), value));
        self
    }

    /// The worst discrepancy relative to its tolerance, for summaries.
    pub fn worst_ratio(&self) -> f64 {
        self.checks
            .iter()
            .map(|c| {
                if c.tolerance == 0.0 {
                    if c.discrepancy == 0.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    c.discrepancy / c.tolerance
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn failed_checks(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_aggregates_pass_flag() {
        let good = Check::exact("a", 1.0, 1.0, 1e-12);
        let bad = Check::exact("b", 1.0, 1.1, 1e-12);
        assert!(good.passed);
        assert!(!bad.passed);
        let rep = VerificationReport::new(
            "demo",
            VerificationMode::Exact,
            1,
            0,
            vec![good.clone(), bad],
        );
        assert!(!rep.passed);
        assert_eq!(rep.failed_checks().count(), 1);
        let ok = VerificationReport::new("demo", VerificationMode::Exact, 1, 0, vec![good]);
        assert!(ok.passed);
    }

    #[test]
    fn report_roundtrips_through_json() {
        let rep = VerificationReport::new(
            "demo",
            VerificationMode::Statistical,
            9,
            100,
            vec![Check::statistical("x", 0.5, 0.51, 1.2, 4.0)],
        )
        .with_note("truncation_error", 1e-9);
        let json = serde_json::to_string(&rep).unwrap();
        let back: VerificationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.experiment, "demo");
        assert_eq!(back.checks.len(), 1);
        assert!(back.passed);
        assert_eq!(back.notes.len(), 1);
    }
}
