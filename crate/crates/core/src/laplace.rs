//! Laplace transforms of the three process families: closed forms, Monte
//! Carlo estimates, and the composition rule under branching.
//!
//! All closed forms accumulate in log-space so large atom counts cannot
//! underflow:
//!
//! ```text
//! Poisson:    exp( -sum rho(x) (1 - e^{-f(x)}) )
//! sum:        exp( -sum rho(x) [ln(1 - z e^{-f(x)}) - ln(1 - z)] )
//! difference: exp(  sum rho(x) [ln(1 + z e^{-f(x)}) - ln(1 + z)] )
//! ```
//!
//! A branched process has transform L(f) = L_underlying(g) with
//! g = -ln kappa(e^{-f}).

use crate::branching::{branch_law, BranchingKernel};
use crate::campbell::BranchedProcess;
use crate::error::{Error, Result};
use crate::process::{exact_count_pmf, Family, ProcessSpec};
use crate::report::{Check, VerificationMode, VerificationReport};
use crate::rng::{replicate, Seeder};
use crate::space::{restrict, Space, TestFunction};
use crate::stats::Estimate;

const EPS_EXACT: f64 = 1e-12;

/// Closed-form Laplace transform E[e^{-mu(f)}] of the underlying process.
pub fn laplace_analytic(space: &Space, spec: &ProcessSpec, f: &TestFunction) -> Result<f64> {
    space.check_token(spec.space_token())?;
    space.check_token(f.space_token())?;
    let rho = restrict(space, spec.rho(), spec.region())?;
    let z = spec.z();
    let mut log_lt = 0.0;
    for x in 0..space.n_sites() {
        let r = rho.weight(x);
        let fx = f.value(x);
        if r == 0.0 || fx == 0.0 {
            continue;
        }
        let e = (-fx).exp();
        log_lt += match spec.family() {
            Family::Poisson => -r * (1.0 - e),
            Family::PolyaSum => -r * ((-z * e).ln_1p() - (-z).ln_1p()),
            Family::PolyaDifference => r * ((z * e).ln_1p() - z.ln_1p()),
        };
    }
    Ok(log_lt.exp())
}

/// Monte Carlo Laplace transform of a branched process: the mean of
/// e^{-mu(f)} over fresh draws, with its standard error.
pub fn laplace_empirical(
    space: &Space,
    process: &BranchedProcess,
    f: &TestFunction,
    replicas: u64,
    seeder: &Seeder,
) -> Result<Estimate> {
    space.check_token(f.space_token())?;
    let f = f.clone();
    let samples = replicate(seeder, "laplace-empirical", replicas, |rng, _| {
        let mu = process.sample(space, rng).expect("validated spec");
        (-mu.integrate(&f)).exp()
    });
    Ok(Estimate::from_samples(&samples))
}

/// Closed-form Laplace transform of the branched process: composes the
/// kernel into the test function, g = -ln kappa(e^{-f}), and evaluates the
/// underlying transform at g.
pub fn laplace_branching(
    space: &Space,
    spec: &ProcessSpec,
    kernel: &BranchingKernel,
    f: &TestFunction,
) -> Result<f64> {
    let inner = kernel.apply(space, &f.map(|v| (-v).exp())?)?;
    let rho = restrict(space, spec.rho(), spec.region())?;
    for x in 0..space.n_sites() {
        if rho.weight(x) > 0.0 && inner.value(x) <= 0.0 {
            return Err(Error::InvalidParameter(
                "kappa(e^{-f}) vanishes on the support of rho, so the composed function is unbounded"
                    .into(),
            ));
        }
    }
    let g = inner.map(|v| if v >= 1.0 { 0.0 } else { -v.ln() })?;
    laplace_analytic(space, spec, &g)
}

/// Checks the composition identity for a branched process: the closed-form
/// transform against an independent Monte Carlo estimate, and — whenever the
/// joint law is enumerable — against exact expectation over the enumerated
/// branched law.
pub fn verify_laplace(
    space: &Space,
    process: &BranchedProcess,
    f: &TestFunction,
    replicas: u64,
    seeder: &Seeder,
    z_max: f64,
) -> Result<VerificationReport> {
    let analytic = laplace_branching(space, process.spec(), process.kernel(), f)?;
    let empirical = laplace_empirical(space, process, f, replicas, seeder)?;
    let mut checks = vec![Check::statistical(
        "laplace_composition",
        analytic,
        empirical.mean,
        empirical.z_score(analytic),
        z_max,
    )];

    let mut enumerated = false;
    if let Ok(pmf) = exact_count_pmf(space, process.spec(), process.spec().region()) {
        let mut exact = 0.0;
        let mut terms: u128 = 0;
        let mut feasible = true;
        'outer: for (nu, p) in pmf.iter() {
            match branch_law(space, process.kernel(), nu, 1 << 18) {
                Ok(law) => {
                    terms += law.len() as u128;
                    if terms > (1 << 18) {
                        feasible = false;
                        break 'outer;
                    }
                    for (tau, q) in law {
                        exact += p * q * (-tau.integrate(f)).exp();
                    }
                }
                Err(Error::EnumerationTooLarge { .. }) => {
                    feasible = false;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        if feasible {
            enumerated = true;
            checks.push(Check::exact(
                "laplace_exact_enumeration",
                analytic,
                exact,
                EPS_EXACT + pmf.truncation_error(),
            ));
        }
    }

    Ok(VerificationReport::new(
        "laplace",
        VerificationMode::Statistical,
        seeder.master(),
        replicas,
        checks,
    )
    .with_note("analytic_value", analytic)
    .with_note("empirical_std_error", empirical.std_error)
    .with_note("exact_check_enumerated", enumerated as u64 as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{BaseMeasure, BlockSet};
    use proptest::prelude::*;

    fn three_atoms() -> Space {
        Space::discrete_labelled(&["a", "b", "c"], &[0, 0, 1]).unwrap()
    }

    #[test]
    fn zero_function_normalizes_to_one() {
        let sp = three_atoms();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 0.5]).unwrap();
        let f = TestFunction::zero(&sp);
        let specs = [
            ProcessSpec::poisson(&sp, rho.clone(), sp.all_blocks()).unwrap(),
            ProcessSpec::polya_sum(&sp, 0.7, rho.clone(), sp.all_blocks()).unwrap(),
            ProcessSpec::polya_difference(&sp, 3.0, BaseMeasure::uniform(&sp, 2.0).unwrap(), sp.all_blocks()).unwrap(),
        ];
        for spec in &specs {
            assert_eq!(laplace_analytic(&sp, spec, &f).unwrap(), 1.0);
            let kernel = BranchingKernel::partition_uniform(&sp).unwrap();
            assert_eq!(laplace_branching(&sp, spec, &kernel, &f).unwrap(), 1.0);
        }
    }

    #[test]
    fn difference_single_binomial_atom_void_limit() {
        // rho = delta_a, z = 1: one Binomial(1, 1/2) point; as f(a) grows the
        // transform approaches the void probability 1/2.
        let sp = Space::discrete_labelled(&["a"], &[0]).unwrap();
        let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
        let spec = ProcessSpec::polya_difference(&sp, 1.0, rho, sp.all_blocks()).unwrap();
        let f = TestFunction::from_values(&sp, vec![50.0]).unwrap();
        let lt = laplace_analytic(&sp, &spec, &f).unwrap();
        assert!((lt - 0.5).abs() < 1e-12);
    }

    #[test]
    fn difference_two_unit_atom_closed_value() {
        // rho = 2 delta_a, z = 1, f(a) = ln 2: ((1 + 1/2)/2)^2 = 9/16.
        let sp = Space::discrete_labelled(&["a"], &[0]).unwrap();
        let rho = BaseMeasure::uniform(&sp, 2.0).unwrap();
        let spec = ProcessSpec::polya_difference(&sp, 1.0, rho, sp.all_blocks()).unwrap();
        let f = TestFunction::from_values(&sp, vec![2.0f64.ln()]).unwrap();
        let lt = laplace_analytic(&sp, &spec, &f).unwrap();
        assert!((lt - 9.0 / 16.0).abs() < 1e-15);

        let pmf = exact_count_pmf(&sp, &spec, spec.region()).unwrap();
        let exact = pmf.expect(|cfg| (-cfg.integrate(&f)).exp());
        assert!((lt - exact).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_match_exact_count_law() {
        let sp = three_atoms();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 0.5]).unwrap();
        let f = TestFunction::from_values(&sp, vec![0.3, 0.1, 0.7]).unwrap();
        let rho_int = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 3.0]).unwrap();
        let specs = [
            ProcessSpec::poisson(&sp, rho.clone(), sp.all_blocks()).unwrap(),
            ProcessSpec::polya_sum(&sp, 0.4, rho.clone(), sp.all_blocks()).unwrap(),
            ProcessSpec::polya_difference(&sp, 1.5, rho_int, sp.all_blocks()).unwrap(),
        ];
        for spec in &specs {
            let lt = laplace_analytic(&sp, spec, &f).unwrap();
            let pmf = exact_count_pmf(&sp, spec, spec.region()).unwrap();
            let exact = pmf.expect(|cfg| (-cfg.integrate(&f)).exp());
            assert!(
                (lt - exact).abs() < EPS_EXACT + pmf.truncation_error(),
                "{:?}: {lt} vs {exact}",
                spec.family()
            );
        }
    }

    #[test]
    fn identity_kernel_composes_trivially() {
        let sp = three_atoms();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 0.5, 2.0]).unwrap();
        let spec = ProcessSpec::polya_sum(&sp, 0.6, rho, sp.all_blocks()).unwrap();
        let f = TestFunction::from_values(&sp, vec![0.2, 0.9, 0.4]).unwrap();
        let direct = laplace_analytic(&sp, &spec, &f).unwrap();
        let composed =
            laplace_branching(&sp, &spec, &BranchingKernel::identity(&sp), &f).unwrap();
        assert!((direct - composed).abs() < 1e-15);
    }

    #[test]
    fn vanishing_relocated_exponential_is_rejected() {
        // f so large that e^{-f} underflows to zero on a whole block.
        let sp = three_atoms();
        let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
        let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, sp.all_blocks()).unwrap();
        let kernel = BranchingKernel::partition_uniform(&sp).unwrap();
        let f = TestFunction::from_values(&sp, vec![1e5, 1e5, 0.0]).unwrap();
        assert!(laplace_branching(&sp, &spec, &kernel, &f).is_err());
    }

    #[test]
    fn analytic_monotone_in_the_test_function() {
        let sp = three_atoms();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 1.0, 2.0]).unwrap();
        let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, sp.all_blocks()).unwrap();
        let small = TestFunction::from_values(&sp, vec![0.1, 0.2, 0.3]).unwrap();
        let large = TestFunction::from_values(&sp, vec![0.5, 0.2, 0.9]).unwrap();
        let lt_small = laplace_analytic(&sp, &spec, &small).unwrap();
        let lt_large = laplace_analytic(&sp, &spec, &large).unwrap();
        assert!(lt_small > lt_large);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// f supported on disjoint blocks factorizes the transform.
        #[test]
        fn transform_factorizes_over_blocks(
            w in proptest::collection::vec(0.1f64..3.0, 3),
            z in 0.05f64..0.9,
            fa in 0.0f64..2.0,
            fc in 0.0f64..2.0,
        ) {
            let sp = three_atoms();
            let rho = BaseMeasure::from_weights(&sp, w).unwrap();
            let spec = ProcessSpec::polya_sum(&sp, z, rho, sp.all_blocks()).unwrap();
            let f1 = TestFunction::from_values(&sp, vec![fa, fa / 2.0, 0.0]).unwrap();
            let f2 = TestFunction::from_values(&sp, vec![0.0, 0.0, fc]).unwrap();
            let joint = TestFunction::from_values(&sp, vec![fa, fa / 2.0, fc]).unwrap();
            prop_assert!(f1.support().is_subset(&BlockSet::from([0])));
            prop_assert!(f2.support().is_subset(&BlockSet::from([1])));
            let lhs = laplace_analytic(&sp, &spec, &joint).unwrap();
            let rhs = laplace_analytic(&sp, &spec, &f1).unwrap()
                * laplace_analytic(&sp, &spec, &f2).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
