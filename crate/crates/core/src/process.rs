//! The three process families, their samplers, and exact count laws.
//!
//! A process is specified by a family, an activity z, a reference measure
//! rho, and a bounded region (block union). Counts per site are independent
//! across sites in every family:
//!
//! * Poisson: multiplicity ~ Poisson(rho(x)).
//! * Pólya sum: multiplicity ~ negative binomial with shape rho(x) and
//!   success probability z; equivalently, total count in a region followed by
//!   sequential urn placement with weights rho + current configuration.
//! * Pólya difference: multiplicity ~ Binomial(rho(x), z/(1+z)); the draw
//!   never exceeds rho.
//!
//! `exact_count_pmf` recomputes the law by a different route — products of
//! per-unit kernel factors, normalized by the enumerated partition sum — so
//! it serves as an independent oracle for the samplers.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::point::PointConfiguration;
use crate::space::{BaseMeasure, BlockSet, SiteId, Space};

/// Largest joint support `exact_count_pmf` will enumerate.
pub const ENUMERATION_LIMIT: u128 = 1 << 21;

/// Per-site tail mass at which unbounded count supports are truncated.
const SITE_TAIL: f64 = 1e-14;

/// Hard cap on a single site's enumerated support.
const SITE_SUPPORT_CAP: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Poisson,
    PolyaSum,
    PolyaDifference,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::PolyaSum => "polya_sum",
            Family::PolyaDifference => "polya_difference",
        }
    }
}

/// A validated process specification.
#[derive(Debug, Clone)]
pub struct ProcessSpec {
    family: Family,
    z: f64,
    rho: BaseMeasure,
    region: BlockSet,
    space_token: u64,
}

impl ProcessSpec {
    pub fn poisson(space: &Space, rho: BaseMeasure, region: BlockSet) -> Result<Self> {
        Self::validated(space, Family::Poisson, 0.0, rho, region)
    }

    pub fn polya_sum(space: &Space, z: f64, rho: BaseMeasure, region: BlockSet) -> Result<Self> {
        if !(z > 0.0 && z < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sum family requires 0 < z < 1, got {z}"
            )));
        }
        Self::validated(space, Family::PolyaSum, z, rho, region)
    }

    pub fn polya_difference(
        space: &Space,
        z: f64,
        rho: BaseMeasure,
        region: BlockSet,
    ) -> Result<Self> {
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "difference family requires z > 0, got {z}"
            )));
        }
        if !rho.is_integral() {
            return Err(Error::NonIntegerMeasure);
        }
        Self::validated(space, Family::PolyaDifference, z, rho, region)
    }

    fn validated(
        space: &Space,
        family: Family,
        z: f64,
        rho: BaseMeasure,
        region: BlockSet,
    ) -> Result<Self> {
        space.check_token(rho.space_token())?;
        if region.iter().any(|&b| b >= space.n_blocks()) {
            return Err(Error::InvalidParameter(
                "region references a block outside the space".into(),
            ));
        }
        Ok(ProcessSpec {
            family,
            z,
            rho,
            region,
            space_token: space.token(),
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Activity parameter; 0 for the Poisson family, which has none.
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn rho(&self) -> &BaseMeasure {
        &self.rho
    }

    pub fn region(&self) -> &BlockSet {
        &self.region
    }

    /// The same process on a different region.
    pub fn with_region(&self, space: &Space, region: BlockSet) -> Result<Self> {
        Self::validated(space, self.family, self.z, self.rho.clone(), region)
    }

    /// rho weights zeroed outside the region, indexed by site.
    pub fn region_weights(&self, space: &Space) -> Result<Vec<f64>> {
        space.check_token(self.space_token)?;
        Ok(space
            .sites()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if self.region.contains(&s.block) {
                    self.rho.weight(i)
                } else {
                    0.0
                }
            })
            .collect())
    }

    pub(crate) fn space_token(&self) -> u64 {
        self.space_token
    }

    pub(crate) fn expect_family(&self, family: Family) -> Result<()> {
        if self.family == family {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "operation requires the {} family, spec is {}",
                family.as_str(),
                self.family.as_str()
            )))
        }
    }
}

fn poisson_count(mean: f64, rng: &mut impl Rng) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    let d = Poisson::new(mean).expect("positive finite mean");
    d.sample(rng) as u64
}

/// Places `n` points one at a time: site probabilities are proportional to
/// the running weights, and each placement adds one unit to its site.
pub(crate) fn urn_place(
    sites: &[SiteId],
    base_weights: &[f64],
    n: u64,
    rng: &mut impl Rng,
) -> PointConfiguration {
    let mut weights = base_weights.to_vec();
    let mut total: f64 = weights.iter().sum();
    let mut cfg = PointConfiguration::empty();
    for _ in 0..n {
        let mut u: f64 = rng.random::<f64>() * total;
        let mut chosen = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if u < *w {
                chosen = i;
                break;
            }
            u -= w;
        }
        cfg.add(sites[chosen], 1);
        weights[chosen] += 1.0;
        total += 1.0;
    }
    cfg
}

/// Number of points in one cluster: P(j) = z^j / (j L) with L = -ln(1-z).
fn logarithmic_count(z: f64, rng: &mut impl Rng) -> u64 {
    let l = -(1.0 - z).ln();
    let u: f64 = rng.random();
    let mut j = 1u64;
    let mut p = z / l;
    let mut cum = p;
    while u > cum {
        p *= z * j as f64 / (j + 1) as f64;
        j += 1;
        cum += p;
        if j >= 1 << 40 {
            break;
        }
    }
    j
}

/// Independent Poisson(rho(x)) multiplicities on the region.
pub fn sample_poisson(
    space: &Space,
    spec: &ProcessSpec,
    rng: &mut impl Rng,
) -> Result<PointConfiguration> {
    spec.expect_family(Family::Poisson)?;
    space.check_token(spec.space_token)?;
    let weights = spec.region_weights(space)?;
    let mut cfg = PointConfiguration::empty();
    for (site, &w) in weights.iter().enumerate() {
        cfg.add(site, poisson_count(w, rng));
    }
    Ok(cfg)
}

/// Pólya sum draw: exact total count, then sequential urn placement.
pub fn sample_polya_sum(
    space: &Space,
    spec: &ProcessSpec,
    rng: &mut impl Rng,
) -> Result<PointConfiguration> {
    spec.expect_family(Family::PolyaSum)?;
    space.check_token(spec.space_token)?;
    let weights = spec.region_weights(space)?;
    let r: f64 = weights.iter().sum();
    if r <= 0.0 {
        return Ok(PointConfiguration::empty());
    }
    // Negative binomial total via its Poisson mixture over a Gamma mean.
    let lambda = Gamma::new(r, spec.z / (1.0 - spec.z))
        .expect("valid gamma parameters")
        .sample(rng);
    let n = poisson_count(lambda, rng);
    let sites: Vec<SiteId> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let site_weights: Vec<f64> = sites.iter().map(|&i| weights[i]).collect();
    Ok(urn_place(&sites, &site_weights, n, rng))
}

/// Pólya sum draw as a cluster process: Poisson cluster sites with intensity
/// ln(1/(1-z)) rho, each cluster holding a logarithmically distributed number
/// of points at its site.
pub fn sample_polya_sum_cluster(
    space: &Space,
    spec: &ProcessSpec,
    rng: &mut impl Rng,
) -> Result<PointConfiguration> {
    spec.expect_family(Family::PolyaSum)?;
    space.check_token(spec.space_token)?;
    let weights = spec.region_weights(space)?;
    let c = -(1.0 - spec.z).ln();
    let mut cfg = PointConfiguration::empty();
    for (site, &w) in weights.iter().enumerate() {
        let clusters = poisson_count(c * w, rng);
        for _ in 0..clusters {
            cfg.add(site, logarithmic_count(spec.z, rng));
        }
    }
    Ok(cfg)
}

/// Pólya difference draw: independent Binomial(rho(x), z/(1+z)) per site.
pub fn sample_polya_difference(
    space: &Space,
    spec: &ProcessSpec,
    rng: &mut impl Rng,
) -> Result<PointConfiguration> {
    spec.expect_family(Family::PolyaDifference)?;
    space.check_token(spec.space_token)?;
    let weights = spec.region_weights(space)?;
    let p = spec.z / (1.0 + spec.z);
    let mut cfg = PointConfiguration::empty();
    for (site, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            let d = Binomial::new(w as u64, p).expect("valid binomial parameters");
            cfg.add(site, d.sample(rng));
        }
    }
    Ok(cfg)
}

/// Draws from whichever family `spec` declares.
pub fn sample(space: &Space, spec: &ProcessSpec, rng: &mut impl Rng) -> Result<PointConfiguration> {
    match spec.family {
        Family::Poisson => sample_poisson(space, spec, rng),
        Family::PolyaSum => sample_polya_sum(space, spec, rng),
        Family::PolyaDifference => sample_polya_difference(space, spec, rng),
    }
}

/// An exact (up to reported truncation) probability mass function over point
/// configurations on a finite site set.
#[derive(Debug, Clone)]
pub struct CountPmf {
    sites: Vec<SiteId>,
    probs: Vec<(PointConfiguration, f64)>,
    truncation_error: f64,
}

impl CountPmf {
    /// Assembles a pmf from enumerated configuration weights.
    pub(crate) fn from_parts(
        sites: Vec<SiteId>,
        mut probs: Vec<(PointConfiguration, f64)>,
        truncation_error: f64,
    ) -> Self {
        probs.sort_by(|(a, _), (b, _)| a.cmp(b));
        CountPmf {
            sites,
            probs,
            truncation_error,
        }
    }

    /// Sites the pmf enumerates over.
    pub fn sites(&self) -> &[SiteId] {
        &self.sites
    }

    /// Inverse-pmf draw. Truncated tail mass falls on the last configuration.
    pub fn sample(&self, rng: &mut impl Rng) -> PointConfiguration {
        let mut u: f64 = rng.random();
        for (cfg, p) in &self.probs {
            if u < *p {
                return cfg.clone();
            }
            u -= p;
        }
        self.probs.last().map(|(c, _)| c.clone()).unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PointConfiguration, f64)> {
        self.probs.iter().map(|(c, p)| (c, *p))
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Mass assigned beyond the enumerated support.
    pub fn truncation_error(&self) -> f64 {
        self.truncation_error
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().map(|(_, p)| p).sum()
    }

    pub fn prob(&self, cfg: &PointConfiguration) -> f64 {
        self.probs
            .binary_search_by(|(c, _)| c.cmp(cfg))
            .map(|i| self.probs[i].1)
            .unwrap_or(0.0)
    }

    /// Expectation of a configuration functional.
    pub fn expect(&self, f: impl Fn(&PointConfiguration) -> f64) -> f64 {
        self.probs.iter().map(|(c, p)| f(c) * p).sum()
    }

    /// pmf of the total count, indexed by count value.
    pub fn marginal_total(&self) -> Vec<f64> {
        let max = self
            .probs
            .iter()
            .map(|(c, _)| c.total())
            .max()
            .unwrap_or(0) as usize;
        let mut out = vec![0.0; max + 1];
        for (c, p) in &self.probs {
            out[c.total() as usize] += p;
        }
        out
    }

    /// pmf of the count inside a block union.
    pub fn marginal_region(&self, space: &Space, region: &BlockSet) -> Vec<f64> {
        let max = self
            .probs
            .iter()
            .map(|(c, _)| c.count_in(space, region))
            .max()
            .unwrap_or(0) as usize;
        let mut out = vec![0.0; max + 1];
        for (c, p) in &self.probs {
            out[c.count_in(space, region) as usize] += p;
        }
        out
    }

    /// Conditional law given total count = n.
    pub fn condition_total(&self, n: u64) -> Result<CountPmf> {
        let kept: Vec<(PointConfiguration, f64)> = self
            .probs
            .iter()
            .filter(|(c, _)| c.total() == n)
            .cloned()
            .collect();
        let mass: f64 = kept.iter().map(|(_, p)| p).sum();
        if mass <= 0.0 {
            return Err(Error::Infeasible(format!(
                "total count {n} has zero probability"
            )));
        }
        Ok(CountPmf {
            sites: self.sites.clone(),
            probs: kept.into_iter().map(|(c, p)| (c, p / mass)).collect(),
            truncation_error: 0.0,
        })
    }
}

/// Count pmf of the process total on a set of mass r, from products of
/// per-unit kernel factors.
///
/// The weight of n points on mass r is the product of the kernel factor for
/// each successive unit divided by n!; normalization is the closed-form
/// partition sum (1/(1-z))^r, (1+z)^r, or e^r. All three families are
/// additive in r, so this serves both per-site and aggregate laws. Returns
/// the pmf vector and the truncated tail mass.
pub(crate) fn total_count_pmf(family: Family, z: f64, r: f64) -> Result<(Vec<f64>, f64)> {
    if r == 0.0 {
        return Ok((vec![1.0], 0.0));
    }
    let log_xi = match family {
        Family::PolyaSum => -r * (1.0 - z).ln(),
        Family::PolyaDifference => r * (1.0 + z).ln(),
        Family::Poisson => r,
    };
    let mut pmf = vec![(-log_xi).exp()];
    let mut cum = pmf[0];
    let mut n = 0usize;
    loop {
        match family {
            Family::PolyaDifference if n as f64 >= r => break,
            Family::PolyaSum | Family::Poisson if 1.0 - cum <= SITE_TAIL => break,
            _ => {}
        }
        let factor = match family {
            Family::PolyaSum => z * (r + n as f64),
            Family::PolyaDifference => z * (r - n as f64),
            Family::Poisson => r,
        };
        let next = pmf[n] * factor / (n as f64 + 1.0);
        pmf.push(next);
        cum += next;
        n += 1;
        if n >= SITE_SUPPORT_CAP {
            return Err(Error::EnumerationTooLarge {
                size: SITE_SUPPORT_CAP as u128,
                limit: SITE_SUPPORT_CAP as u128,
            });
        }
    }
    // The difference family's support is complete; only open-ended supports
    // carry a truncated tail.
    let tail = match family {
        Family::PolyaDifference => 0.0,
        _ => (1.0 - cum).max(0.0),
    };
    Ok((pmf, tail))
}

/// Exact joint count law on the sites of `region`.
///
/// Enumerates the product of per-site supports; unbounded supports are
/// truncated at a tail mass of 1e-14 per site and the joint truncation error
/// is reported on the result.
pub fn exact_count_pmf(space: &Space, spec: &ProcessSpec, region: &BlockSet) -> Result<CountPmf> {
    space.check_token(spec.space_token)?;
    if region.iter().any(|&b| b >= space.n_blocks()) {
        return Err(Error::InvalidParameter(
            "region references a block outside the space".into(),
        ));
    }
    let sites: Vec<SiteId> = space
        .sites_in(region)
        .into_iter()
        .filter(|&i| spec.region().contains(&space.site(i).block))
        .collect();

    let mut site_pmfs = Vec::with_capacity(sites.len());
    let mut kept_mass = 1.0f64;
    let mut support_size: u128 = 1;
    for &i in &sites {
        let (pmf, tail) = total_count_pmf(spec.family, spec.z, spec.rho.weight(i))?;
        kept_mass *= 1.0 - tail;
        support_size = support_size.saturating_mul(pmf.len() as u128);
        if support_size > ENUMERATION_LIMIT {
            return Err(Error::EnumerationTooLarge {
                size: support_size,
                limit: ENUMERATION_LIMIT,
            });
        }
        site_pmfs.push(pmf);
    }

    let mut probs = Vec::with_capacity(support_size as usize);
    let mut counts = vec![0usize; sites.len()];
    loop {
        let p: f64 = counts
            .iter()
            .zip(&site_pmfs)
            .map(|(&k, pmf)| pmf[k])
            .product();
        let cfg = PointConfiguration::from_atoms(
            counts
                .iter()
                .zip(&sites)
                .filter(|(&k, _)| k > 0)
                .map(|(&k, &s)| (s, k as u64)),
        );
        probs.push((cfg, p));

        // Odometer step over the product support.
        let mut pos = 0;
        loop {
            if pos == sites.len() {
                let mut out = CountPmf {
                    sites,
                    probs,
                    truncation_error: 1.0 - kept_mass,
                };
                out.probs.sort_by(|(a, _), (b, _)| a.cmp(b));
                return Ok(out);
            }
            counts[pos] += 1;
            if counts[pos] < site_pmfs[pos].len() {
                break;
            }
            counts[pos] = 0;
            pos += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::TestFunction;
    use proptest::prelude::*;

    fn single_atom() -> (Space, BlockSet) {
        let sp = Space::discrete_labelled(&["a"], &[0]).unwrap();
        let all = sp.all_blocks();
        (sp, all)
    }

    #[test]
    fn sum_single_unit_atom_is_geometric() {
        let (sp, all) = single_atom();
        let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
        let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, all.clone()).unwrap();
        let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
        let marg = pmf.marginal_total();
        for (n, &p) in marg.iter().enumerate().take(12) {
            let geometric = 0.5 * 0.5f64.powi(n as i32);
            assert!((p - geometric).abs() < 1e-13, "n={n}: {p} vs {geometric}");
        }
        assert!(pmf.truncation_error() < 1e-12);
    }

    #[test]
    fn difference_unit_pair_is_uniform_over_subconfigurations() {
        let sp = Space::discrete_labelled(&["a", "b"], &[0, 1]).unwrap();
        let all = sp.all_blocks();
        let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
        let spec = ProcessSpec::polya_difference(&sp, 1.0, rho, all.clone()).unwrap();
        let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
        assert_eq!(pmf.len(), 4);
        for (_, p) in pmf.iter() {
            assert!((p - 0.25).abs() < 1e-15);
        }
        assert_eq!(pmf.truncation_error(), 0.0);
    }

    #[test]
    fn difference_double_atom_counts() {
        let (sp, all) = single_atom();
        let rho = BaseMeasure::uniform(&sp, 2.0).unwrap();
        let spec = ProcessSpec::polya_difference(&sp, 1.0, rho, all.clone()).unwrap();
        let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
        let marg = pmf.marginal_total();
        assert_eq!(marg.len(), 3);
        assert!((marg[0] - 0.25).abs() < 1e-15);
        assert!((marg[1] - 0.5).abs() < 1e-15);
        assert!((marg[2] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn poisson_pmf_matches_closed_form() {
        let (sp, all) = single_atom();
        let rho = BaseMeasure::uniform(&sp, 2.0).unwrap();
        let spec = ProcessSpec::poisson(&sp, rho, all.clone()).unwrap();
        let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
        let marg = pmf.marginal_total();
        let mut expected = (-2.0f64).exp();
        for (n, &p) in marg.iter().enumerate().take(10) {
            assert!((p - expected).abs() < 1e-13);
            expected *= 2.0 / (n as f64 + 1.0);
        }
    }

    #[test]
    fn urn_conditional_law_is_exchangeable_uniform() {
        // Two unit atoms: given total n, the split is uniform on 0..=n.
        let sp = Space::discrete_labelled(&["a", "b"], &[0, 0]).unwrap();
        let all = sp.all_blocks();
        let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
        let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, all.clone()).unwrap();
        let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
        let cond = pmf.condition_total(3).unwrap();
        assert_eq!(cond.len(), 4);
        for (_, p) in cond.iter() {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_guard_trips_on_large_supports() {
        let labels: Vec<String> = (0..8).map(|i| format!("s{i}")).collect();
        let refs: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
        let sp = Space::discrete_labelled(&refs, &[0; 8]).unwrap();
        let all = sp.all_blocks();
        let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
        let spec = ProcessSpec::polya_sum(&sp, 0.9, rho, all.clone()).unwrap();
        match exact_count_pmf(&sp, &spec, &all) {
            Err(Error::EnumerationTooLarge { size, limit }) => {
                assert!(size > limit);
            }
            other => panic!("expected enumeration guard, got {other:?}"),
        }
    }

    #[test]
    fn parameter_validation() {
        let (sp, all) = single_atom();
        let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
        assert!(ProcessSpec::polya_sum(&sp, 1.5, rho.clone(), all.clone()).is_err());
        assert!(ProcessSpec::polya_sum(&sp, 0.0, rho.clone(), all.clone()).is_err());
        assert!(ProcessSpec::polya_difference(&sp, -1.0, rho.clone(), all.clone()).is_err());
        let frac = BaseMeasure::uniform(&sp, 0.5).unwrap();
        assert!(matches!(
            ProcessSpec::polya_difference(&sp, 1.0, frac, all.clone()),
            Err(Error::NonIntegerMeasure)
        ));
        assert!(ProcessSpec::poisson(&sp, rho, BlockSet::from([7])).is_err());
    }

    #[test]
    fn family_mismatch_is_rejected() {
        let (sp, all) = single_atom();
        let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
        let spec = ProcessSpec::poisson(&sp, rho, all).unwrap();
        let mut rng = crate::rng::Seeder::new(1).rng("family", 0);
        assert!(sample_polya_sum(&sp, &spec, &mut rng).is_err());
        assert!(sample_polya_difference(&sp, &spec, &mut rng).is_err());
    }

    #[test]
    fn difference_draws_stay_below_rho() {
        let sp = Space::discrete_labelled(&["a", "b", "c"], &[0, 1, 2]).unwrap();
        let all = sp.all_blocks();
        let rho = BaseMeasure::from_weights(&sp, vec![3.0, 1.0, 2.0]).unwrap();
        let spec = ProcessSpec::polya_difference(&sp, 2.0, rho.clone(), all).unwrap();
        let mut rng = crate::rng::Seeder::new(5).rng("dominated", 0);
        for _ in 0..2000 {
            let cfg = sample_polya_difference(&sp, &spec, &mut rng).unwrap();
            assert!(cfg.dominated_by(&rho));
        }
    }

    #[test]
    fn empty_region_gives_empty_configurations() {
        let (sp, _) = single_atom();
        let rho = BaseMeasure::uniform(&sp, 2.0).unwrap();
        let mut rng = crate::rng::Seeder::new(2).rng("empty", 0);
        let spec = ProcessSpec::polya_sum(&sp, 0.5, rho.clone(), BlockSet::new()).unwrap();
        assert_eq!(sample_polya_sum(&sp, &spec, &mut rng).unwrap().total(), 0);
        let spec = ProcessSpec::poisson(&sp, rho, BlockSet::new()).unwrap();
        assert_eq!(sample_poisson(&sp, &spec, &mut rng).unwrap().total(), 0);
    }

    #[test]
    fn expectation_helper_matches_hand_sum() {
        let (sp, all) = single_atom();
        let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
        let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, all.clone()).unwrap();
        let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
        let f = TestFunction::from_values(&sp, vec![1.0]).unwrap();
        // Mean of geometric(1/2) on 0,1,2,... is z/(1-z) = 1.
        let mean = pmf.expect(|c| c.integrate(&f));
        assert!((mean - 1.0).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pmf_normalizes_for_random_specs(
            weights in proptest::collection::vec(0.25f64..3.0, 1..4),
            z in 0.05f64..0.6,
        ) {
            let labels: Vec<String> = (0..weights.len()).map(|i| format!("s{i}")).collect();
            let refs: Vec<&str> = labels.iter().map(|s| s.as_str()).collect();
            let blocks: Vec<usize> = (0..weights.len()).collect();
            let sp = Space::discrete_labelled(&refs, &blocks).unwrap();
            let all = sp.all_blocks();

            let rho = BaseMeasure::from_weights(&sp, weights.clone()).unwrap();
            let spec = ProcessSpec::polya_sum(&sp, z, rho, all.clone()).unwrap();
            let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
            prop_assert!((pmf.total_mass() + pmf.truncation_error() - 1.0).abs() < 1e-9);

            let int_weights: Vec<f64> = weights.iter().map(|w| w.round().max(1.0)).collect();
            let rho = BaseMeasure::from_weights(&sp, int_weights).unwrap();
            let spec = ProcessSpec::polya_difference(&sp, 4.0 * z, rho, all.clone()).unwrap();
            let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
            prop_assert!((pmf.total_mass() - 1.0).abs() < 1e-10);
            prop_assert_eq!(pmf.truncation_error(), 0.0);
        }

        #[test]
        fn marginals_are_consistent(
            z in 0.1f64..0.7,
        ) {
            let sp = Space::discrete_labelled(&["a", "b", "c"], &[0, 1, 1]).unwrap();
            let all = sp.all_blocks();
            let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 1.0]).unwrap();
            let spec = ProcessSpec::polya_sum(&sp, z, rho, all.clone()).unwrap();
            let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();

            // Region marginal of the full space equals the total marginal.
            let total = pmf.marginal_total();
            let region = pmf.marginal_region(&sp, &all);
            prop_assert_eq!(total.len(), region.len());
            for (a, b) in total.iter().zip(&region) {
                prop_assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
