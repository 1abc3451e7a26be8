//! Campbell measures, conditional-intensity identities, superposition into
//! independent block factors, Palm kernels, and intensity measures for
//! branched processes.
//!
//! A branched process is an underlying process plus a relocation kernel. Its
//! conditional intensity at configuration mu puts weight z(kappa rho +/-
//! kappa mu) on each site (kappa rho alone for Poisson). The central identity
//! checked here is the partial integration of the Campbell measure:
//!
//! ```text
//! E[ sum_x mu({x}) h(x, mu) ] = E[ sum_x w_mu(x) h(x, mu + delta_x) ]
//! ```
//!
//! with w_mu the conditional-intensity weights — exactly on enumerable
//! difference instances, by Monte Carlo elsewhere.

use std::collections::BTreeMap;

use rand::Rng;

use crate::branching::{branch_configuration, branch_law, BranchingKernel, Sign};
use crate::error::{Error, Result};
use crate::point::PointConfiguration;
use crate::process::{
    exact_count_pmf, sample, total_count_pmf, CountPmf, Family, ProcessSpec, ENUMERATION_LIMIT,
};
use crate::report::{Check, VerificationMode, VerificationReport};
use crate::rng::{replicate, Seeder};
use crate::space::{restrict, BaseMeasure, BlockId, BlockSet, SiteId, Space, TestFunction};
use crate::stats::{chi_square_gof, two_sample_z, Estimate};

const EPS_EXACT: f64 = 1e-12;
const P_MIN: f64 = 1e-3;

/// An underlying process together with a branching kernel.
#[derive(Debug, Clone)]
pub struct BranchedProcess {
    spec: ProcessSpec,
    kernel: BranchingKernel,
    /// rho restricted to the process region.
    rho_region: BaseMeasure,
    /// kappa(rho restricted to the region), cached as site weights.
    krho: Vec<f64>,
}

impl BranchedProcess {
    pub fn new(space: &Space, spec: ProcessSpec, kernel: BranchingKernel) -> Result<Self> {
        space.check_token(spec.space_token())?;
        space.check_token(kernel.space_token())?;
        let rho_region = restrict(space, spec.rho(), spec.region())?;
        let krho = kernel.push_measure(space, &rho_region)?.weights().to_vec();
        Ok(BranchedProcess {
            spec,
            kernel,
            rho_region,
            krho,
        })
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn kernel(&self) -> &BranchingKernel {
        &self.kernel
    }

    /// Sign of the configuration term in the conditional intensity; none for
    /// the Poisson family, whose intensity is configuration-free.
    pub fn sign(&self) -> Option<Sign> {
        match self.spec.family() {
            Family::PolyaSum => Some(Sign::Plus),
            Family::PolyaDifference => Some(Sign::Minus),
            Family::Poisson => None,
        }
    }

    /// The pushed reference measure kappa(rho) on the region, as weights.
    pub fn pushed_reference(&self) -> &[f64] {
        &self.krho
    }

    pub fn rho_region(&self) -> &BaseMeasure {
        &self.rho_region
    }

    /// One draw: underlying sample, then independent relocation.
    pub fn sample(&self, space: &Space, rng: &mut impl Rng) -> Result<PointConfiguration> {
        let mu = sample(space, &self.spec, rng)?;
        branch_configuration(space, &self.kernel, &mu, rng)
    }

    /// Conditional-intensity site weights at a branched configuration:
    /// z(kappa rho + kappa mu), z(kappa rho - kappa mu) evaluated as a signed
    /// measure, or kappa rho for Poisson.
    pub fn papangelou_weights(&self, space: &Space, branched: &PointConfiguration) -> Vec<f64> {
        match self.sign() {
            None => self.krho.clone(),
            Some(sign) => {
                let kmu = self.kernel.push_counts(space, branched);
                let z = self.spec.z();
                self.krho
                    .iter()
                    .zip(&kmu)
                    .map(|(r, m)| z * (r + sign.factor() * m))
                    .collect()
            }
        }
    }
}

/// phi(mu) factors usable in product functionals h(x, mu) = g(x) phi(mu).
#[derive(Debug, Clone)]
pub enum Phi {
    One,
    /// exp(-mu(f)).
    ExpNeg(TestFunction),
    /// Indicator of the count in a block union being exactly k.
    CountEq { region: BlockSet, k: u64 },
    /// Count in a block union raised to a power.
    CountPoly { region: BlockSet, degree: u32 },
}

impl Phi {
    /// Blocks this factor can see.
    pub fn touched_blocks(&self) -> BlockSet {
        match self {
            Phi::One => BlockSet::new(),
            Phi::ExpNeg(f) => f.support().clone(),
            Phi::CountEq { region, .. } | Phi::CountPoly { region, .. } => region.clone(),
        }
    }

    pub fn eval(&self, space: &Space, mu: &PointConfiguration) -> f64 {
        match self {
            Phi::One => 1.0,
            Phi::ExpNeg(f) => (-mu.integrate(f)).exp(),
            Phi::CountEq { region, k } => {
                if mu.count_in(space, region) == *k {
                    1.0
                } else {
                    0.0
                }
            }
            Phi::CountPoly { region, degree } => {
                (mu.count_in(space, region) as f64).powi(*degree as i32)
            }
        }
    }
}

/// h(x, mu) = g(x) * phi(mu) with g of bounded support.
#[derive(Debug, Clone)]
pub struct ProductFunctional {
    g: TestFunction,
    phi: Phi,
}

impl ProductFunctional {
    pub fn new(g: TestFunction, phi: Phi) -> Self {
        ProductFunctional { g, phi }
    }

    pub fn g(&self) -> &TestFunction {
        &self.g
    }

    pub fn phi(&self) -> &Phi {
        &self.phi
    }

    /// Blocks the functional can see: the support of g and whatever phi
    /// touches.
    pub fn touched_blocks(&self) -> BlockSet {
        self.g
            .support()
            .union(&self.phi.touched_blocks())
            .copied()
            .collect()
    }

    pub fn eval(&self, space: &Space, x: SiteId, mu: &PointConfiguration) -> f64 {
        self.g.value(x) * self.phi.eval(space, mu)
    }

    /// The Campbell summand: sum of h(., mu) over the points of mu, which
    /// factorizes as mu(g) * phi(mu).
    pub fn campbell_sum(&self, space: &Space, mu: &PointConfiguration) -> f64 {
        mu.integrate(&self.g) * self.phi.eval(space, mu)
    }
}

/// Monte Carlo estimate of the Campbell functional E[sum_x mu(x) h(x, mu)].
pub fn estimate_campbell(
    space: &Space,
    process: &BranchedProcess,
    h: &ProductFunctional,
    replicas: u64,
    seeder: &Seeder,
) -> Result<Estimate> {
    space.check_token(process.spec.space_token())?;
    let samples = replicate(seeder, "campbell-lhs", replicas, |rng, _| {
        let mu = process.sample(space, rng).expect("validated spec");
        h.campbell_sum(space, &mu)
    });
    Ok(Estimate::from_samples(&samples))
}

/// Conditional intensity mass z(rho +/- mu)(kappa f) of the branched process
/// at an underlying configuration mu. The difference family requires
/// mu <= rho.
pub fn evaluate_papangelou(
    space: &Space,
    process: &BranchedProcess,
    mu: &PointConfiguration,
    f: &TestFunction,
) -> Result<f64> {
    let kf = process.kernel.apply(space, f)?;
    let rho = &process.rho_region;
    match process.sign() {
        None => Ok((0..space.n_sites())
            .map(|i| rho.weight(i) * kf.value(i))
            .sum()),
        Some(sign) => {
            if sign == Sign::Minus && !mu.dominated_by(rho) {
                return Err(Error::InvalidParameter(
                    "difference-family conditional intensity requires mu <= rho".into(),
                ));
            }
            let z = process.spec.z();
            Ok(z * (0..space.n_sites())
                .map(|i| (rho.weight(i) + sign.factor() * mu.multiplicity(i) as f64) * kf.value(i))
                .sum::<f64>())
        }
    }
}

fn ibp_rhs_integrand(
    space: &Space,
    process: &BranchedProcess,
    h: &ProductFunctional,
    mu: &PointConfiguration,
) -> f64 {
    let weights = process.papangelou_weights(space, mu);
    let mut total = 0.0;
    for x in 0..space.n_sites() {
        let gx = h.g().value(x);
        if gx == 0.0 || weights[x] == 0.0 {
            continue;
        }
        let mut plus = mu.clone();
        plus.add(x, 1);
        total += weights[x] * gx * h.phi().eval(space, &plus);
    }
    total
}

/// Monte Carlo check of the partial-integration identity, with lhs and rhs
/// estimated on independent streams and compared by a two-sample z-test.
pub fn verify_ibp(
    space: &Space,
    process: &BranchedProcess,
    h: &ProductFunctional,
    replicas: u64,
    seeder: &Seeder,
    z_max: f64,
) -> Result<VerificationReport> {
    let lhs = estimate_campbell(space, process, h, replicas, seeder)?;
    let rhs_samples = replicate(seeder, "ibp-rhs", replicas, |rng, _| {
        let mu = process.sample(space, rng).expect("validated spec");
        ibp_rhs_integrand(space, process, h, &mu)
    });
    let rhs = Estimate::from_samples(&rhs_samples);
    let z = two_sample_z(&lhs, &rhs);
    let checks = vec![Check::statistical("ibp", lhs.mean, rhs.mean, z, z_max)];
    Ok(VerificationReport::new(
        "ibp",
        VerificationMode::Statistical,
        seeder.master(),
        replicas,
        checks,
    )
    .with_note("lhs_std_error", lhs.std_error)
    .with_note("rhs_std_error", rhs.std_error)
    .with_note("kernel_conditional", process.kernel.is_conditional() as u64 as f64))
}

/// Exact partial integration for the branched difference process: both sides
/// summed over the full law (underlying count law times relocation law).
/// `term_limit` bounds the number of accumulated terms; `eps` is the defect
/// allowed between the sides.
pub fn exact_ibp_difference(
    space: &Space,
    process: &BranchedProcess,
    h: &ProductFunctional,
    term_limit: u128,
    eps: f64,
) -> Result<VerificationReport> {
    if process.spec.family() != Family::PolyaDifference {
        return Err(Error::InvalidParameter(
            "exact partial integration is implemented for the difference family".into(),
        ));
    }
    let pmf = exact_count_pmf(space, &process.spec, process.spec.region())?;
    let active: Vec<SiteId> = (0..space.n_sites())
        .filter(|&x| h.g().value(x) != 0.0)
        .collect();

    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut terms: u128 = 0;
    for (nu, p) in pmf.iter() {
        let law = branch_law(space, &process.kernel, nu, term_limit)?;
        terms += law.len() as u128 * active.len().max(1) as u128;
        if terms > term_limit {
            return Err(Error::EnumerationTooLarge {
                size: terms,
                limit: term_limit,
            });
        }
        for (tau, q) in &law {
            let w = p * q;
            lhs += w * h.campbell_sum(space, tau);
            let weights = process.papangelou_weights(space, tau);
            for &x in &active {
                let mut plus = tau.clone();
                plus.add(x, 1);
                rhs += w * weights[x] * h.g().value(x) * h.phi().eval(space, &plus);
            }
        }
    }

    let checks = vec![Check::exact("ibp_exact", lhs, rhs, eps)];
    Ok(VerificationReport::new(
        "ibp-exact-difference",
        VerificationMode::Exact,
        0,
        0,
        checks,
    )
    .with_note("terms", terms as f64)
    .with_note("count_law_truncation", pmf.truncation_error()))
}

/// Weight of the branched iterated conditional intensity at the empty
/// configuration on an ordered site tuple: the product over the tuple of
/// z(kappa rho +/- kappa mu_so_far)(x_i), accumulating each placed point.
pub fn iterated_kernel(space: &Space, process: &BranchedProcess, points: &[SiteId]) -> f64 {
    let mut acc = vec![0.0; space.n_sites()];
    let mut weight = 1.0;
    for &x in points {
        let factor = match process.sign() {
            None => process.krho[x],
            Some(sign) => process.spec.z() * (process.krho[x] + sign.factor() * acc[x]),
        };
        weight *= factor;
        if weight == 0.0 {
            return 0.0;
        }
        let row = process.kernel.row(space, x);
        for (a, r) in acc.iter_mut().zip(&row) {
            *a += r;
        }
    }
    weight
}

/// The unbranched iterated weight on a product of functions: the sum over
/// ordered site tuples of prod_i z(rho +/- mu_so_far)(y_i) f_i(y_i).
fn iterated_plain(space: &Space, process: &BranchedProcess, fs: &[&TestFunction]) -> f64 {
    fn rec(
        space: &Space,
        process: &BranchedProcess,
        fs: &[&TestFunction],
        depth: usize,
        acc: &mut Vec<f64>,
        prefix: f64,
    ) -> f64 {
        if depth == fs.len() {
            return prefix;
        }
        let rho = &process.rho_region;
        let mut total = 0.0;
        for y in 0..space.n_sites() {
            let fy = fs[depth].value(y);
            if fy == 0.0 {
                continue;
            }
            let factor = match process.sign() {
                None => rho.weight(y),
                Some(sign) => process.spec.z() * (rho.weight(y) + sign.factor() * acc[y]),
            };
            if factor == 0.0 {
                continue;
            }
            acc[y] += 1.0;
            total += rec(space, process, fs, depth + 1, acc, prefix * factor * fy);
            acc[y] -= 1.0;
        }
        total
    }
    let mut acc = vec![0.0; space.n_sites()];
    rec(space, process, fs, 0, &mut acc, 1.0)
}

/// Exact symmetry audit of the order-n iterated weights: every tuple is
/// compared against its sorted representative, and the branched weights on
/// block products are cross-checked against the unbranched weights on the
/// pushed indicator functions.
pub fn verify_iterated_symmetry(
    space: &Space,
    process: &BranchedProcess,
    n: usize,
) -> Result<VerificationReport> {
    if n == 0 || n > 6 {
        return Err(Error::InvalidParameter(
            "iterated-kernel order must be between 1 and 6".into(),
        ));
    }
    let n_sites = space.n_sites();
    let tuples = (n_sites as u128).pow(n as u32);
    if tuples > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            size: tuples,
            limit: ENUMERATION_LIMIT,
        });
    }

    // Max over tuples of |w(tuple) - w(sorted tuple)|.
    let mut max_defect = 0.0f64;
    let mut scale = 0.0f64;
    let mut tuple = vec![0usize; n];
    loop {
        let w = iterated_kernel(space, process, &tuple);
        scale = scale.max(w.abs());
        let mut sorted = tuple.clone();
        sorted.sort_unstable();
        if sorted != tuple {
            let ws = iterated_kernel(space, process, &sorted);
            max_defect = max_defect.max((w - ws).abs());
        }
        // Odometer.
        let mut pos = 0;
        loop {
            if pos == n {
                break;
            }
            tuple[pos] += 1;
            if tuple[pos] < n_sites {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
        if pos == n {
            break;
        }
    }

    // Dual route on block products: branched weights summed over
    // B_1 x ... x B_n versus unbranched weights on kappa(1_{B_i}).
    let blocks: Vec<BlockId> = (0..n).map(|i| i % space.n_blocks()).collect();
    let mut branched_total = 0.0;
    let mut tuple = vec![0usize; n];
    loop {
        if tuple
            .iter()
            .zip(&blocks)
            .all(|(&y, &b)| space.site(y).block == b)
        {
            branched_total += iterated_kernel(space, process, &tuple);
        }
        let mut pos = 0;
        loop {
            if pos == n {
                break;
            }
            tuple[pos] += 1;
            if tuple[pos] < n_sites {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
        if pos == n {
            break;
        }
    }
    let indicators: Vec<TestFunction> = blocks
        .iter()
        .map(|&b| TestFunction::indicator(space, &BlockSet::from([b])))
        .collect();
    let pushed: Vec<TestFunction> = indicators
        .iter()
        .map(|f| process.kernel.apply(space, f))
        .collect::<Result<_>>()?;
    let plain_total = iterated_plain(space, process, &pushed.iter().collect::<Vec<_>>());

    let tol = EPS_EXACT * scale.max(1.0);
    let checks = vec![
        Check::exact("permutation_symmetry", 0.0, max_defect, tol),
        Check::exact("pushforward_consistency", branched_total, plain_total, tol),
    ];
    Ok(VerificationReport::new(
        "iterated-symmetry",
        VerificationMode::Exact,
        0,
        0,
        checks,
    )
    .with_note("order", n as f64)
    .with_note("weight_scale", scale))
}

/// Exact law of the branched process restricted to one block, computed from
/// the iterated weights at the empty configuration: the weight of a
/// configuration tau is the tuple weight of its units divided by the product
/// of multiplicity factorials, normalized by the closed-form partition sum.
pub fn qj_law(space: &Space, process: &BranchedProcess, block: BlockId) -> Result<CountPmf> {
    if block >= space.n_blocks() {
        return Err(Error::InvalidParameter("block outside the space".into()));
    }
    let sites: Vec<SiteId> = space
        .block_sites(block)
        .iter()
        .copied()
        .filter(|&i| process.spec.region().contains(&space.site(i).block))
        .collect();
    let r: f64 = sites.iter().map(|&i| process.rho_region.weight(i)).sum();
    if sites.is_empty() || r == 0.0 {
        return Ok(CountPmf::from_parts(
            sites,
            vec![(PointConfiguration::empty(), 1.0)],
            0.0,
        ));
    }

    let family = process.spec.family();
    let z = process.spec.z();
    let (total_law, tail) = total_count_pmf(family, z, r)?;
    let n_max = (total_law.len() - 1) as u64;

    let outcomes = multiset_count(sites.len() as u128, n_max as u128);
    if outcomes > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            size: outcomes,
            limit: ENUMERATION_LIMIT,
        });
    }

    let log_xi = match family {
        Family::PolyaSum => -r * (1.0 - z).ln(),
        Family::PolyaDifference => r * (1.0 + z).ln(),
        Family::Poisson => r,
    };
    let norm = (-log_xi).exp();

    let mut probs = Vec::new();
    let mut counts = vec![0u64; sites.len()];
    enumerate_counts(&mut counts, 0, n_max, &mut |counts| {
        let cfg = PointConfiguration::from_atoms(
            counts
                .iter()
                .zip(&sites)
                .filter(|(&k, _)| k > 0)
                .map(|(&k, &s)| (s, k)),
        );
        // Tuple weight with the factorial division interleaved per unit, so
        // magnitudes stay at probability scale.
        let mut acc = vec![0.0; space.n_sites()];
        let mut weight = norm;
        for (site, m) in cfg.atoms() {
            for j in 1..=m {
                let factor = match process.sign() {
                    None => process.krho[site],
                    Some(sign) => z * (process.krho[site] + sign.factor() * acc[site]),
                };
                weight *= factor / j as f64;
                if weight == 0.0 {
                    break;
                }
                let row = process.kernel.row(space, site);
                for (a, rr) in acc.iter_mut().zip(&row) {
                    *a += rr;
                }
            }
            if weight == 0.0 {
                break;
            }
        }
        if weight != 0.0 {
            probs.push((cfg, weight));
        }
    });

    let mass: f64 = probs.iter().map(|(_, p)| p).sum();
    let truncation = (1.0 - mass).max(0.0).max(tail);
    Ok(CountPmf::from_parts(sites, probs, truncation))
}

/// Number of multisets of size at most `n` over `s` sites: C(n + s, s).
fn multiset_count(s: u128, n: u128) -> u128 {
    let mut c: u128 = 1;
    for i in 1..=s {
        c = c.saturating_mul(n + i) / i;
        if c > ENUMERATION_LIMIT {
            return u128::MAX;
        }
    }
    c
}

fn enumerate_counts(counts: &mut Vec<u64>, pos: usize, budget: u64, f: &mut impl FnMut(&[u64])) {
    if pos == counts.len() {
        f(counts);
        return;
    }
    for k in 0..=budget {
        counts[pos] = k;
        enumerate_counts(counts, pos + 1, budget - k, f);
    }
    counts[pos] = 0;
}

/// Verifies that the branched process factorizes over blocks into the laws
/// computed by `qj_law`: exact count-law equality per block, an exact
/// configuration-level convolution check when enumerable, and chi-square
/// fits of both the direct sampler and the superposed block sampler.
pub fn verify_superposition(
    space: &Space,
    process: &BranchedProcess,
    blocks: &[BlockId],
    replicas: u64,
    seeder: &Seeder,
    eps: f64,
) -> Result<VerificationReport> {
    if blocks.is_empty() {
        return Err(Error::InvalidParameter("no blocks to verify".into()));
    }
    let mut checks = Vec::new();
    let mut block_laws = Vec::new();
    let mut block_margs = Vec::new();

    for &j in blocks {
        let qj = qj_law(space, process, j)?;
        let underlying = exact_count_pmf(space, &process.spec, &BlockSet::from([j]))?;
        let marg_q = qj.marginal_total();
        let marg_u = underlying.marginal_total();
        let len = marg_q.len().max(marg_u.len());
        let defect = (0..len)
            .map(|k| {
                let a = marg_q.get(k).copied().unwrap_or(0.0);
                let b = marg_u.get(k).copied().unwrap_or(0.0);
                (a - b).abs()
            })
            .fold(0.0, f64::max);
        let tol = eps + qj.truncation_error() + underlying.truncation_error();
        checks.push(Check::exact(format!("block{j}_count_law"), 0.0, defect, tol));
        block_margs.push(marg_u);
        block_laws.push(qj);
    }

    // Configuration-level law: convolution of the block factors against the
    // direct law (underlying count law composed with the relocation law).
    let union: BlockSet = blocks.iter().copied().collect();
    let underlying_union = exact_count_pmf(space, &process.spec, &union)?;
    let mut direct: BTreeMap<PointConfiguration, f64> = BTreeMap::new();
    let mut direct_terms: u128 = 0;
    let mut config_feasible = true;
    'outer: for (nu, p) in underlying_union.iter() {
        match branch_law(space, &process.kernel, nu, 1 << 18) {
            Ok(law) => {
                direct_terms += law.len() as u128;
                if direct_terms > (1 << 18) {
                    config_feasible = false;
                    break 'outer;
                }
                for (tau, q) in law {
                    *direct.entry(tau.restrict(space, &union)).or_insert(0.0) += p * q;
                }
            }
            Err(Error::EnumerationTooLarge { .. }) => {
                config_feasible = false;
                break 'outer;
            }
            Err(e) => return Err(e),
        }
    }
    if config_feasible {
        let mut conv: BTreeMap<PointConfiguration, f64> =
            BTreeMap::from([(PointConfiguration::empty(), 1.0)]);
        for qj in &block_laws {
            let mut next = BTreeMap::new();
            for (base, p) in &conv {
                for (add, q) in qj.iter() {
                    *next.entry(base.merge(add)).or_insert(0.0) += p * q;
                }
            }
            conv = next;
        }
        let keys: std::collections::BTreeSet<&PointConfiguration> =
            direct.keys().chain(conv.keys()).collect();
        let defect = keys
            .into_iter()
            .map(|k| {
                (direct.get(k).copied().unwrap_or(0.0) - conv.get(k).copied().unwrap_or(0.0)).abs()
            })
            .fold(0.0, f64::max);
        let trunc: f64 = block_laws.iter().map(|q| q.truncation_error()).sum::<f64>()
            + underlying_union.truncation_error();
        checks.push(Check::exact(
            "configuration_law",
            0.0,
            defect,
            eps + trunc,
        ));
    }

    // Sampler fits against the product of the exact per-block count laws.
    let lens: Vec<usize> = block_margs.iter().map(|m| m.len()).collect();
    let cells: usize = lens.iter().product();
    let mut expected = vec![0.0; cells + 1];
    for (idx, e) in expected.iter_mut().enumerate().take(cells) {
        let mut rem = idx;
        let mut p = 1.0;
        for (m, &l) in block_margs.iter().zip(&lens) {
            p *= m[rem % l];
            rem /= l;
        }
        *e = p * replicas as f64;
    }
    expected[cells] =
        (replicas as f64 - expected[..cells].iter().sum::<f64>()).max(0.0);

    let observe = |draws: Vec<PointConfiguration>| -> Vec<u64> {
        let mut obs = vec![0u64; cells + 1];
        for d in draws {
            let mut idx = 0usize;
            let mut stride = 1usize;
            let mut overflow = false;
            for (&j, &l) in blocks.iter().zip(&lens) {
                let c = d.count_in(space, &BlockSet::from([j])) as usize;
                if c >= l {
                    overflow = true;
                    break;
                }
                idx += c * stride;
                stride *= l;
            }
            if overflow {
                obs[cells] += 1;
            } else {
                obs[idx] += 1;
            }
        }
        obs
    };

    let direct_draws = replicate(seeder, "superpos-direct", replicas, |rng, _| {
        process.sample(space, rng).expect("validated spec")
    });
    let obs_direct = observe(direct_draws);
    let p_direct = chi_square_gof(&obs_direct, &expected, 5.0)?.p_value;
    checks.push(Check::p_value("direct_sampler_fit", p_direct, P_MIN));

    let qj_draws = replicate(seeder, "superpos-blocks", replicas, |rng, _| {
        let mut cfg = PointConfiguration::empty();
        for qj in &block_laws {
            cfg = cfg.merge(&qj.sample(rng));
        }
        cfg
    });
    let obs_qj = observe(qj_draws);
    let p_qj = chi_square_gof(&obs_qj, &expected, 5.0)?.p_value;
    checks.push(Check::p_value("superposed_sampler_fit", p_qj, P_MIN));

    Ok(VerificationReport::new(
        "superposition",
        VerificationMode::Statistical,
        seeder.master(),
        replicas,
        checks,
    )
    .with_note("config_check_enumerated", config_feasible as u64 as f64))
}

/// First-moment measure of the branched process: c * kappa(rho) with
/// c = z/(1-z) for the sum family, z/(1+z) for the difference family, and 1
/// for Poisson.
pub fn intensity_measure(space: &Space, process: &BranchedProcess) -> Result<BaseMeasure> {
    let c = match process.spec.family() {
        Family::PolyaSum => process.spec.z() / (1.0 - process.spec.z()),
        Family::PolyaDifference => process.spec.z() / (1.0 + process.spec.z()),
        Family::Poisson => 1.0,
    };
    BaseMeasure::from_weights(space, process.krho.iter().map(|w| c * w).collect())
}

/// One draw from the Palm kernel of the branched process at site x: a fresh
/// branched draw, an extra geometric cluster relocated from x (sum family
/// only), and the literal point at x that the Palm conditioning pins down.
pub fn sample_palm(
    space: &Space,
    process: &BranchedProcess,
    x: SiteId,
    rng: &mut impl Rng,
) -> Result<PointConfiguration> {
    if process.spec.family() == Family::PolyaDifference {
        return Err(Error::Unsupported(
            "Palm factorization for the difference family".into(),
        ));
    }
    if x >= space.n_sites() || process.krho[x] <= 0.0 {
        return Err(Error::Infeasible(
            "Palm point lies outside the support of the pushed reference measure".into(),
        ));
    }
    let mut out = process.sample(space, rng)?;
    if process.spec.family() == Family::PolyaSum {
        let z = process.spec.z();
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let cluster = (u.ln() / z.ln()).floor() as u64;
        for _ in 0..cluster {
            out.add(process.kernel.sample_relocation(space, x, rng), 1);
        }
    }
    out.add(x, 1);
    Ok(out)
}

/// Checks the Palm disintegration E[sum_x mu(x) g(x) phi(mu)] =
/// sum_x g(x) nu1(x) E[phi(Palm_x)] by Monte Carlo on independent streams.
pub fn verify_palm(
    space: &Space,
    process: &BranchedProcess,
    h: &ProductFunctional,
    replicas: u64,
    seeder: &Seeder,
    z_max: f64,
) -> Result<VerificationReport> {
    if process.spec.family() == Family::PolyaDifference {
        return Err(Error::Unsupported(
            "Palm factorization for the difference family".into(),
        ));
    }
    let lhs = estimate_campbell(space, process, h, replicas, seeder)?;
    let nu1 = intensity_measure(space, process)?;
    let active: Vec<(SiteId, f64)> = (0..space.n_sites())
        .filter(|&x| h.g().value(x) != 0.0 && nu1.weight(x) > 0.0)
        .map(|x| (x, h.g().value(x) * nu1.weight(x)))
        .collect();
    let rhs_samples = replicate(seeder, "palm-rhs", replicas, |rng, _| {
        active
            .iter()
            .map(|&(x, w)| {
                let palm = sample_palm(space, process, x, rng).expect("palm point in support");
                w * h.phi().eval(space, &palm)
            })
            .sum::<f64>()
    });
    let rhs = Estimate::from_samples(&rhs_samples);
    let z = two_sample_z(&lhs, &rhs);
    let checks = vec![Check::statistical("palm", lhs.mean, rhs.mean, z, z_max)];
    Ok(VerificationReport::new(
        "palm",
        VerificationMode::Statistical,
        seeder.master(),
        replicas,
        checks,
    )
    .with_note("lhs_std_error", lhs.std_error)
    .with_note("rhs_std_error", rhs.std_error))
}
