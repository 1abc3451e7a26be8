//! Conditional laws along an exhaustion, exact conditioned Laplace
//! transforms for the difference family, density statistics, limit-parameter
//! estimation, and partial integration for mixed processes.
//!
//! Conditioning the difference process on the count over a region A gives a
//! multivariate-hypergeometric-shaped law: the probability of placing k of
//! the m points on a subregion B carries the coefficient
//!
//! ```text
//! C_{A,m,k} = C(rho(A\B), m-k) / C(rho(A), m)
//! ```
//!
//! and within B the configuration nu weighs prod_x C(rho(x), nu(x)). As the
//! exhaustion grows with density u = k_n/rho(B_n), the conditional law
//! approaches the unconditioned process at the limit parameter z' = u/(1-u)
//! (difference) or z' = u/(1+u) (sum).

use rand::Rng;
use serde::Serialize;
use statrs::function::factorial::ln_binomial;

use crate::branching::{branch_configuration, BranchingKernel};
use crate::campbell::ProductFunctional;
use crate::error::{Error, Result};
use crate::laplace::laplace_analytic;
use crate::point::PointConfiguration;
use crate::process::{sample, Family, ProcessSpec};
use crate::report::{Check, VerificationMode, VerificationReport};
use crate::rng::{replicate, Seeder};
use crate::space::{restrict, BaseMeasure, BlockSet, Exhaustion, SiteId, Space, TestFunction};
use crate::stats::Estimate;

fn integral_mass(m: f64) -> Result<u64> {
    let rounded = m.round();
    if (m - rounded).abs() > 1e-9 || rounded < 0.0 {
        return Err(Error::NonIntegerMeasure);
    }
    Ok(rounded as u64)
}

/// One draw from the conditional law given the count over `region` equals
/// `total`, with the configuration outside `region` kept from `outside`,
/// then branched by the kernel.
///
/// Difference family: `total` units drawn without replacement from an urn
/// holding rho(x) units per site (law proportional to prod C(rho(x), nu(x))).
/// Sum family: `total` sequential urn placements reinforced by the points
/// already placed.
pub fn conditioned_sampler(
    space: &Space,
    spec: &ProcessSpec,
    kernel: &BranchingKernel,
    region: &BlockSet,
    total: u64,
    outside: &PointConfiguration,
    rng: &mut impl Rng,
) -> Result<PointConfiguration> {
    space.check_token(spec.space_token())?;
    space.check_token(kernel.space_token())?;
    if !region.is_subset(spec.region()) {
        return Err(Error::InvalidParameter(
            "conditioning region must lie inside the process region".into(),
        ));
    }
    let rho = restrict(space, spec.rho(), region)?;
    let sites: Vec<SiteId> = space.sites_in(region);

    let mut inside = PointConfiguration::empty();
    match spec.family() {
        Family::Poisson => {
            return Err(Error::Unsupported(
                "conditioned sampling for the Poisson family".into(),
            ))
        }
        Family::PolyaDifference => {
            let mass = integral_mass(rho.total())?;
            if total > mass {
                return Err(Error::Infeasible(format!(
                    "conditioned count {total} exceeds the region mass {mass}"
                )));
            }
            let mut remaining: Vec<f64> = sites.iter().map(|&x| rho.weight(x)).collect();
            let mut pool = mass as f64;
            for _ in 0..total {
                let mut t = rng.random::<f64>() * pool;
                let mut pick = sites.len() - 1;
                for (i, w) in remaining.iter().enumerate() {
                    if t < *w {
                        pick = i;
                        break;
                    }
                    t -= *w;
                }
                remaining[pick] -= 1.0;
                pool -= 1.0;
                inside.add(sites[pick], 1);
            }
        }
        Family::PolyaSum => {
            let mut weights: Vec<f64> = sites.iter().map(|&x| rho.weight(x)).collect();
            let mut pool: f64 = weights.iter().sum();
            if pool <= 0.0 && total > 0 {
                return Err(Error::Infeasible(
                    "conditioned count is positive but the region has no mass".into(),
                ));
            }
            for _ in 0..total {
                let mut t = rng.random::<f64>() * pool;
                let mut pick = sites.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if t < *w {
                        pick = i;
                        break;
                    }
                    t -= *w;
                }
                weights[pick] += 1.0;
                pool += 1.0;
                inside.add(sites[pick], 1);
            }
        }
    }

    let complement: BlockSet = spec.region().difference(region).copied().collect();
    let merged = outside.restrict(space, &complement).merge(&inside);
    branch_configuration(space, kernel, &merged, rng)
}

/// Exact conditioned Laplace transform of the difference process given the
/// count over `region_a` equals `total`, for f supported inside `region_a`.
///
/// The inner sum over configurations on the support of f is computed by a
/// product of per-site binomial generating polynomials; the hypergeometric
/// coefficients are evaluated as log-space binomial ratios. The value does
/// not depend on spec's z: the conditional law is z-free.
pub fn conditional_lt_exact_difference(
    space: &Space,
    spec: &ProcessSpec,
    f: &TestFunction,
    region_a: &BlockSet,
    total: u64,
) -> Result<f64> {
    spec.expect_family(Family::PolyaDifference)?;
    space.check_token(spec.space_token())?;
    space.check_token(f.space_token())?;
    if !region_a.is_subset(spec.region()) {
        return Err(Error::InvalidParameter(
            "conditioning region must lie inside the process region".into(),
        ));
    }
    if !f.support().is_subset(region_a) {
        return Err(Error::InvalidParameter(
            "the test function must be supported inside the conditioning region".into(),
        ));
    }
    let rho_a = restrict(space, spec.rho(), region_a)?;
    let mass_a = integral_mass(rho_a.total())?;
    if total > mass_a {
        return Err(Error::Infeasible(format!(
            "conditioned count {total} exceeds the region mass {mass_a}"
        )));
    }
    if total == 0 {
        return Ok(1.0);
    }

    // Product of per-site polynomials sum_j C(rho(x), j) e^{-j f(x)} t^j
    // over the sites of B = supp f.
    let b_sites: Vec<SiteId> = space.sites_in(f.support());
    let mut mass_b = 0u64;
    let mut coeffs = vec![1.0f64];
    for &x in &b_sites {
        let rx = integral_mass(rho_a.weight(x))?;
        if rx == 0 {
            continue;
        }
        mass_b += rx;
        let e = (-f.value(x)).exp();
        let mut next = vec![0.0; coeffs.len() + rx as usize];
        let mut site_term = 1.0f64;
        let mut binom = 1.0f64;
        for j in 0..=rx {
            if j > 0 {
                binom *= (rx - j + 1) as f64 / j as f64;
                site_term *= e;
            }
            let w = binom * site_term;
            for (i, c) in coeffs.iter().enumerate() {
                next[i + j as usize] += c * w;
            }
        }
        coeffs = next;
    }

    let mass_rest = mass_a - mass_b;
    let ln_denom = ln_binomial(mass_a, total);
    let mut lt = 0.0;
    for (k, c) in coeffs.iter().enumerate() {
        let k = k as u64;
        if k > total || total - k > mass_rest {
            continue;
        }
        let ratio = (ln_binomial(mass_rest, total - k) - ln_denom).exp();
        lt += ratio * c;
    }
    Ok(lt)
}

/// The density statistic U_n = mu(B_n) / rho(B_n) at one exhaustion level.
pub fn u_statistic(
    space: &Space,
    mu: &PointConfiguration,
    rho: &BaseMeasure,
    exhaustion: &Exhaustion,
    level: usize,
) -> Result<f64> {
    space.check_token(exhaustion.space_token())?;
    let region = exhaustion.level(level);
    let mass = rho.mass_on(space, region)?;
    if mass <= 0.0 {
        return Err(Error::InvalidParameter(
            "exhaustion level carries no reference mass".into(),
        ));
    }
    Ok(mu.count_in(space, region) as f64 / mass)
}

/// Maps a density u to the limit parameter: u/(1+u) for the sum family,
/// u/(1-u) for the difference family (requires u < 1).
pub fn z_parameter(u: f64, family: Family) -> Result<f64> {
    if !u.is_finite() || u < 0.0 {
        return Err(Error::InvalidParameter("density must be finite and nonnegative".into()));
    }
    match family {
        Family::PolyaSum => Ok(u / (1.0 + u)),
        Family::PolyaDifference => {
            if u >= 1.0 {
                return Err(Error::InvalidParameter(
                    "difference-family density must be below 1".into(),
                ));
            }
            Ok(u / (1.0 - u))
        }
        Family::Poisson => Err(Error::Unsupported(
            "limit parameter for the Poisson family".into(),
        )),
    }
}

/// Plug-in estimate of the mixing parameter from one realized configuration:
/// the density at the deepest exhaustion level mapped through `z_parameter`.
/// Requires at least `min_mass` reference mass at the deepest level.
pub fn estimate_z_from_sample(
    space: &Space,
    mu: &PointConfiguration,
    rho: &BaseMeasure,
    exhaustion: &Exhaustion,
    family: Family,
    min_mass: f64,
) -> Result<f64> {
    let deepest = exhaustion.n_levels() - 1;
    let mass = rho.mass_on(space, exhaustion.deepest())?;
    if mass < min_mass {
        return Err(Error::Infeasible(format!(
            "deepest exhaustion level has mass {mass}, below the configured floor {min_mass}"
        )));
    }
    let u = u_statistic(space, mu, rho, exhaustion, deepest)?;
    z_parameter(u, family)
}

/// One row of a convergence experiment.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub region_mass: f64,
    pub total: u64,
    pub u: f64,
    pub z_limit: f64,
    pub conditional_lt: f64,
    pub limit_lt: f64,
    pub error: f64,
}

/// Evaluates the exact conditioned transform against the unconditioned
/// transform at the limit parameter, level by level. The report requires the
/// last three errors to be strictly decreasing and the final error to fall
/// below `final_bound`.
pub fn convergence_experiment(
    space: &Space,
    spec: &ProcessSpec,
    f: &TestFunction,
    exhaustion: &Exhaustion,
    totals: &[u64],
    final_bound: f64,
) -> Result<(Vec<ConvergenceRow>, VerificationReport)> {
    spec.expect_family(Family::PolyaDifference)?;
    space.check_token(exhaustion.space_token())?;
    if totals.len() != exhaustion.n_levels() {
        return Err(Error::InvalidParameter(
            "one conditioned total is required per exhaustion level".into(),
        ));
    }
    if exhaustion.n_levels() < 3 {
        return Err(Error::InvalidParameter(
            "the trend test needs at least three exhaustion levels".into(),
        ));
    }
    if !f.support().is_subset(exhaustion.level(0)) {
        return Err(Error::InvalidParameter(
            "the test function must be supported inside the first exhaustion level".into(),
        ));
    }

    let mut rows = Vec::with_capacity(totals.len());
    for (level, &k) in totals.iter().enumerate() {
        let region = exhaustion.level(level);
        let mass = restrict(space, spec.rho(), region)?.total();
        let u = k as f64 / mass;
        let z_limit = z_parameter(u, Family::PolyaDifference)?;
        let conditional_lt = conditional_lt_exact_difference(space, spec, f, region, k)?;
        let limit_lt = if z_limit == 0.0 {
            1.0
        } else {
            let limit_spec = ProcessSpec::polya_difference(
                space,
                z_limit,
                spec.rho().clone(),
                spec.region().clone(),
            )?;
            laplace_analytic(space, &limit_spec, f)?
        };
        rows.push(ConvergenceRow {
            level,
            region_mass: mass,
            total: k,
            u,
            z_limit,
            conditional_lt,
            limit_lt,
            error: (conditional_lt - limit_lt).abs(),
        });
    }

    let n = rows.len();
    let tail_decreasing =
        rows[n - 3].error > rows[n - 2].error && rows[n - 2].error > rows[n - 1].error;
    let checks = vec![
        Check::exact(
            "tail_strictly_decreasing",
            1.0,
            tail_decreasing as u64 as f64,
            0.0,
        ),
        Check::exact("final_error", 0.0, rows[n - 1].error, final_bound),
    ];
    let report = VerificationReport::new(
        "boundary-convergence",
        VerificationMode::Exact,
        0,
        0,
        checks,
    )
    .with_note("levels", n as f64)
    .with_note("deepest_mass", rows[n - 1].region_mass);
    Ok((rows, report))
}

/// A mixture of one Polya family over finitely many z values, with a fixed
/// reference measure and branching kernel.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    family: Family,
    rho: BaseMeasure,
    region: BlockSet,
    kernel: BranchingKernel,
    components: Vec<(f64, f64)>,
}

impl MixtureSpec {
    pub fn new(
        space: &Space,
        family: Family,
        rho: BaseMeasure,
        region: BlockSet,
        kernel: BranchingKernel,
        components: Vec<(f64, f64)>,
    ) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidParameter("mixture needs components".into()));
        }
        let weight_sum: f64 = components.iter().map(|(_, w)| w).sum();
        if components.iter().any(|(_, w)| *w <= 0.0) || (weight_sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(
                "mixture weights must be positive and sum to one".into(),
            ));
        }
        // Each component must yield a valid spec; this also pins the family.
        for &(z, _) in &components {
            Self::component_spec(space, family, &rho, &region, z)?;
        }
        Ok(MixtureSpec {
            family,
            rho,
            region,
            kernel,
            components,
        })
    }

    fn component_spec(
        space: &Space,
        family: Family,
        rho: &BaseMeasure,
        region: &BlockSet,
        z: f64,
    ) -> Result<ProcessSpec> {
        match family {
            Family::PolyaSum => ProcessSpec::polya_sum(space, z, rho.clone(), region.clone()),
            Family::PolyaDifference => {
                ProcessSpec::polya_difference(space, z, rho.clone(), region.clone())
            }
            Family::Poisson => Err(Error::InvalidParameter(
                "mixtures are defined over the Polya families".into(),
            )),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn rho(&self) -> &BaseMeasure {
        &self.rho
    }

    pub fn region(&self) -> &BlockSet {
        &self.region
    }

    pub fn kernel(&self) -> &BranchingKernel {
        &self.kernel
    }

    pub fn components(&self) -> &[(f64, f64)] {
        &self.components
    }

    pub fn spec_for(&self, space: &Space, z: f64) -> Result<ProcessSpec> {
        Self::component_spec(space, self.family, &self.rho, &self.region, z)
    }

    pub fn sample_z(&self, rng: &mut impl Rng) -> f64 {
        let mut t = rng.random::<f64>();
        for &(z, w) in &self.components {
            if t < w {
                return z;
            }
            t -= w;
        }
        self.components.last().unwrap().0
    }
}

/// Second-order (Jensen) bias bound of the plug-in parameter estimate at
/// true parameter z over reference mass m: |Z''(u*)| Var(U) / 2, where u* is
/// the density corresponding to z. With the estimation window disjoint from
/// the functional this is the only systematic error of the plug-in.
fn z_estimate_bias(family: Family, z: f64, mass: f64) -> f64 {
    match family {
        Family::PolyaSum => {
            let u = z / (1.0 - z);
            let var_u = z / ((1.0 - z).powi(2) * mass);
            var_u / (1.0 + u).powi(3)
        }
        Family::PolyaDifference => {
            let u = z / (1.0 + z);
            let var_u = z / ((1.0 + z).powi(2) * mass);
            var_u / (1.0 - u).powi(3)
        }
        Family::Poisson => 0.0,
    }
}

/// Checks the partial-integration identity for a mixed process, where the
/// conditional-intensity weights use the per-draw plug-in estimate of the
/// mixing parameter. The estimate reads counts on the deepest exhaustion
/// level with the blocks touched by h removed — the finite stand-in for
/// tail-measurability — so it is independent of the integrand given the
/// component, and the comparison budget is widened only by the second-order
/// plug-in bias. Degenerate mixtures use the known parameter directly and
/// reduce to the pure-process check.
pub fn verify_mixed_ibp(
    space: &Space,
    mixture: &MixtureSpec,
    h: &ProductFunctional,
    exhaustion: &Exhaustion,
    replicas: u64,
    seeder: &Seeder,
    z_max: f64,
) -> Result<VerificationReport> {
    space.check_token(exhaustion.space_token())?;
    let krho = mixture
        .kernel
        .push_measure(space, &restrict(space, &mixture.rho, &mixture.region)?)?;
    let sign = match mixture.family {
        Family::PolyaSum => 1.0,
        Family::PolyaDifference => -1.0,
        Family::Poisson => {
            return Err(Error::InvalidParameter(
                "mixtures are defined over the Polya families".into(),
            ))
        }
    };
    let specs: Vec<ProcessSpec> = mixture
        .components
        .iter()
        .map(|&(z, _)| mixture.spec_for(space, z))
        .collect::<Result<_>>()?;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> (usize, PointConfiguration) {
        let mut t = rng.random::<f64>();
        let mut idx = mixture.components.len() - 1;
        for (i, &(_, w)) in mixture.components.iter().enumerate() {
            if t < w {
                idx = i;
                break;
            }
            t -= w;
        }
        let mu = sample(space, &specs[idx], rng).expect("validated spec");
        let branched =
            branch_configuration(space, &mixture.kernel, &mu, rng).expect("validated kernel");
        (idx, branched)
    };

    let lhs_samples = replicate(seeder, "mixed-lhs", replicas, |rng, _| {
        let (_, branched) = draw(rng);
        h.campbell_sum(space, &branched)
    });
    let lhs = Estimate::from_samples(&lhs_samples);

    let degenerate = mixture.components.len() == 1;
    let est_region: BlockSet = exhaustion
        .deepest()
        .difference(&h.touched_blocks())
        .copied()
        .collect();
    let est_mass = mixture.rho.mass_on(space, &est_region)?;
    if !degenerate && est_mass <= 0.0 {
        return Err(Error::Infeasible(
            "no reference mass is left for parameter estimation once the functional's blocks are removed"
                .into(),
        ));
    }
    let rhs_pairs = replicate(seeder, "mixed-rhs", replicas, |rng, _| {
        let (idx, branched) = draw(rng);
        let z_true = mixture.components[idx].0;
        let z_hat = if degenerate {
            z_true
        } else {
            let u = branched.count_in(space, &est_region) as f64 / est_mass;
            // Only the difference-family map has a pole at u = 1; its density
            // rarely but possibly saturates the bounded support.
            let u = match mixture.family {
                Family::PolyaDifference => u.min(1.0 - 0.5 / est_mass),
                _ => u,
            };
            z_parameter(u, mixture.family).expect("bounded density")
        };
        let kmu = mixture.kernel.push_counts(space, &branched);
        let mut base = 0.0;
        for x in 0..space.n_sites() {
            let gx = h.g().value(x);
            if gx == 0.0 {
                continue;
            }
            let w = krho.weight(x) + sign * kmu[x];
            if w == 0.0 {
                continue;
            }
            let mut plus = branched.clone();
            plus.add(x, 1);
            base += w * gx * h.phi().eval(space, &plus);
        }
        let allowance = if degenerate {
            0.0
        } else {
            base.abs() * z_estimate_bias(mixture.family, z_true, est_mass)
        };
        (z_hat * base, allowance)
    });
    let rhs = Estimate::from_samples(&rhs_pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let allowance =
        rhs_pairs.iter().map(|p| p.1).sum::<f64>() / rhs_pairs.len().max(1) as f64;

    let se = (lhs.std_error.powi(2) + rhs.std_error.powi(2)).sqrt();
    let gap = ((lhs.mean - rhs.mean).abs() - allowance).max(0.0);
    let z_eff = if gap == 0.0 {
        0.0
    } else if se == 0.0 {
        f64::INFINITY
    } else {
        gap / se
    };
    let checks = vec![Check::statistical(
        "mixed_ibp",
        lhs.mean,
        rhs.mean,
        z_eff,
        z_max,
    )];
    Ok(VerificationReport::new(
        "mixed-ibp",
        VerificationMode::Statistical,
        seeder.master(),
        replicas,
        checks,
    )
    .with_note("z_allowance", allowance)
    .with_note("estimation_mass", est_mass)
    .with_note("degenerate", degenerate as u64 as f64))
}
