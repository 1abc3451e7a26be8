//! Branching kernels and independent relocation of configuration points.
//!
//! A branching kernel assigns each site x a probability distribution over
//! relocation targets. Branching a configuration relocates every unit of
//! multiplicity independently. Kernels that are conditional expectations
//! (block averages) commute in the sense kappa(f1 kappa(f2)) =
//! kappa(f2 kappa(f1)); that commutation is exactly what makes the branched
//! process inherit a Papangelou kernel, so it is checked here both pointwise
//! and through the two-point correlation identity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point::PointConfiguration;
use crate::process::{sample, ProcessSpec};
use crate::report::{Check, VerificationMode, VerificationReport};
use crate::rng::{replicate, Seeder};
use crate::space::{BaseMeasure, BlockSet, SiteId, Space, SpaceKind, TestFunction};

/// Tolerance for exact identities.
const EPS_EXACT: f64 = 1e-12;

/// Sign of the configuration term in a Papangelou kernel z(rho +/- mu).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(&self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone)]
enum KernelForm {
    Identity,
    /// Relocation within the site's partition block, with fixed per-site
    /// target weights normalized block by block.
    Partition { weights: Vec<f64> },
    /// Arbitrary row-stochastic matrix over sites.
    Custom { rows: Vec<Vec<f64>> },
}

/// A stochastic relocation kernel over the sites of one space.
#[derive(Debug, Clone)]
pub struct BranchingKernel {
    space_token: u64,
    form: KernelForm,
    conditional: bool,
}

impl BranchingKernel {
    /// The identity kernel: every point stays where it is.
    pub fn identity(space: &Space) -> Self {
        BranchingKernel {
            space_token: space.token(),
            form: KernelForm::Identity,
            conditional: true,
        }
    }

    /// Block-averaging kernel: a point at x relocates within x's block with
    /// probabilities proportional to `h`. Every block needs positive mass.
    pub fn partition(space: &Space, h: &BaseMeasure) -> Result<Self> {
        space.check_token(h.space_token())?;
        let mut weights = h.weights().to_vec();
        for block in 0..space.n_blocks() {
            let mass: f64 = space.block_sites(block).iter().map(|&i| weights[i]).sum();
            if mass <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "partition kernel needs positive mass in every block; block {block} is null"
                )));
            }
            for &i in space.block_sites(block) {
                weights[i] /= mass;
            }
        }
        Ok(BranchingKernel {
            space_token: space.token(),
            form: KernelForm::Partition { weights },
            conditional: true,
        })
    }

    /// Uniform block-averaging kernel (uniform in cell volume).
    pub fn partition_uniform(space: &Space) -> Result<Self> {
        Self::partition(space, &BaseMeasure::volumes(space))
    }

    /// Rotation-averaging kernel on a 2-d grid: uniform over the cells of the
    /// site's annular block.
    pub fn isotropic(space: &Space) -> Result<Self> {
        match space.kind() {
            SpaceKind::GriddedBox { dim: 2, .. } => Self::partition_uniform(space),
            _ => Err(Error::InvalidParameter(
                "isotropic kernel requires a 2-d gridded box with radial blocks".into(),
            )),
        }
    }

    /// Coordinate-permutation kernel: uniform over the cells obtained by
    /// permuting the site's grid indices. Requires the blocks to be
    /// permutation orbits, which is validated via the cell coordinates.
    pub fn permutation(space: &Space) -> Result<Self> {
        if !matches!(space.kind(), SpaceKind::GriddedBox { .. }) {
            return Err(Error::InvalidParameter(
                "permutation kernel requires a gridded box".into(),
            ));
        }
        for block in 0..space.n_blocks() {
            let sites = space.block_sites(block);
            let mut reference: Vec<f64> = space.site(sites[0]).coords.clone();
            reference.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &i in sites {
                let mut coords = space.site(i).coords.clone();
                coords.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if coords
                    .iter()
                    .zip(&reference)
                    .any(|(a, b)| (a - b).abs() > 1e-9)
                {
                    return Err(Error::InvalidParameter(
                        "space blocks are not permutation orbits".into(),
                    ));
                }
            }
        }
        Self::partition_uniform(space)
    }

    /// Explicit row-stochastic matrix. The conditional flag is derived by an
    /// exact scan of the commutation condition over all indicator pairs.
    pub fn custom(space: &Space, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = space.n_sites();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::SpaceMismatch);
        }
        for (i, row) in rows.iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "kernel row {i} has negative or non-finite entries"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > EPS_EXACT {
                return Err(Error::InvalidParameter(format!(
                    "kernel row {i} sums to {sum}, not 1"
                )));
            }
        }
        let conditional = indicator_commutation_defect(&rows).1 <= EPS_EXACT;
        Ok(BranchingKernel {
            space_token: space.token(),
            form: KernelForm::Custom { rows },
            conditional,
        })
    }

    /// Whether the kernel commutes with itself (is a conditional
    /// expectation), which gates all Papangelou-kernel claims.
    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    pub(crate) fn space_token(&self) -> u64 {
        self.space_token
    }

    /// The relocation distribution of a point at `x`, as a dense row.
    pub fn row(&self, space: &Space, x: SiteId) -> Vec<f64> {
        let n = space.n_sites();
        match &self.form {
            KernelForm::Identity => {
                let mut r = vec![0.0; n];
                r[x] = 1.0;
                r
            }
            KernelForm::Partition { weights } => {
                let mut r = vec![0.0; n];
                for &y in space.block_sites(space.site(x).block) {
                    r[y] = weights[y];
                }
                r
            }
            KernelForm::Custom { rows } => rows[x].clone(),
        }
    }

    /// x -> integral of f under the relocation law of x.
    pub fn apply(&self, space: &Space, f: &TestFunction) -> Result<TestFunction> {
        space.check_token(self.space_token)?;
        space.check_token(f.space_token())?;
        let values = match &self.form {
            KernelForm::Identity => return Ok(f.clone()),
            KernelForm::Partition { weights } => {
                let mut block_avg = vec![0.0; space.n_blocks()];
                for (i, site) in space.sites().iter().enumerate() {
                    block_avg[site.block] += weights[i] * f.value(i);
                }
                space
                    .sites()
                    .iter()
                    .map(|s| block_avg[s.block])
                    .collect::<Vec<f64>>()
            }
            KernelForm::Custom { rows } => rows
                .iter()
                .map(|r| r.iter().zip(f.values()).map(|(p, v)| p * v).sum())
                .collect(),
        };
        TestFunction::from_values(space, values)
    }

    /// Pushforward of a measure: (kappa m)(y) = sum_x m(x) kappa_x(y).
    pub fn push_measure(&self, space: &Space, m: &BaseMeasure) -> Result<BaseMeasure> {
        space.check_token(self.space_token)?;
        space.check_token(m.space_token())?;
        match &self.form {
            KernelForm::Identity => Ok(m.clone()),
            KernelForm::Partition { weights } => {
                let mut block_mass = vec![0.0; space.n_blocks()];
                for (i, site) in space.sites().iter().enumerate() {
                    block_mass[site.block] += m.weight(i);
                }
                let out = space
                    .sites()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| weights[i] * block_mass[s.block])
                    .collect();
                BaseMeasure::from_weights(space, out)
            }
            KernelForm::Custom { rows } => {
                let mut out = vec![0.0; space.n_sites()];
                for (x, row) in rows.iter().enumerate() {
                    let w = m.weight(x);
                    if w > 0.0 {
                        for (y, p) in row.iter().enumerate() {
                            out[y] += w * p;
                        }
                    }
                }
                BaseMeasure::from_weights(space, out)
            }
        }
    }

    /// Pushforward of a configuration's counting measure, as site weights.
    pub fn push_counts(&self, space: &Space, mu: &PointConfiguration) -> Vec<f64> {
        let mut out = vec![0.0; space.n_sites()];
        match &self.form {
            KernelForm::Identity => {
                for (x, m) in mu.atoms() {
                    out[x] += m as f64;
                }
            }
            KernelForm::Partition { weights } => {
                let mut block_count = vec![0.0; space.n_blocks()];
                for (x, m) in mu.atoms() {
                    block_count[space.site(x).block] += m as f64;
                }
                for (y, site) in space.sites().iter().enumerate() {
                    out[y] = weights[y] * block_count[site.block];
                }
            }
            KernelForm::Custom { rows } => {
                for (x, m) in mu.atoms() {
                    for (y, p) in rows[x].iter().enumerate() {
                        out[y] += m as f64 * p;
                    }
                }
            }
        }
        out
    }

    /// Draws a relocation target for a point at `x`.
    pub fn sample_relocation(&self, space: &Space, x: SiteId, rng: &mut impl Rng) -> SiteId {
        match &self.form {
            KernelForm::Identity => x,
            KernelForm::Partition { weights } => {
                let sites = space.block_sites(space.site(x).block);
                let mut u: f64 = rng.random();
                for &y in sites {
                    if u < weights[y] {
                        return y;
                    }
                    u -= weights[y];
                }
                *sites.last().unwrap()
            }
            KernelForm::Custom { rows } => {
                let mut u: f64 = rng.random();
                for (y, p) in rows[x].iter().enumerate() {
                    if u < *p {
                        return y;
                    }
                    u -= p;
                }
                rows[x].len() - 1
            }
        }
    }
}

/// Max over indicator pairs of the commutation defect
/// |kappa(1_a kappa(1_b))(x) - kappa(1_b kappa(1_a))(x)|, with its argmax.
fn indicator_commutation_defect(rows: &[Vec<f64>]) -> ((SiteId, SiteId, SiteId), f64) {
    let n = rows.len();
    let mut worst = ((0, 0, 0), 0.0f64);
    for x in 0..n {
        for a in 0..n {
            for b in 0..n {
                let d = (rows[x][a] * rows[a][b] - rows[x][b] * rows[b][a]).abs();
                if d > worst.1 {
                    worst = ((x, a, b), d);
                }
            }
        }
    }
    worst
}

/// An indicator pair witnessing non-commutation, if any exceeds the exact
/// tolerance: evaluating kappa(1_{y1} kappa(1_{y2})) at `at` differs from the
/// swapped order by `defect`.
#[derive(Debug, Clone, Copy)]
pub struct Asymmetry {
    pub at: SiteId,
    pub y1: SiteId,
    pub y2: SiteId,
    pub defect: f64,
}

/// Searches all atom-indicator pairs for a commutation counterexample.
pub fn find_asymmetry(space: &Space, kernel: &BranchingKernel) -> Option<Asymmetry> {
    let rows: Vec<Vec<f64>> = (0..space.n_sites())
        .map(|x| kernel.row(space, x))
        .collect();
    let ((at, y1, y2), defect) = indicator_commutation_defect(&rows);
    if defect > EPS_EXACT {
        Some(Asymmetry { at, y1, y2, defect })
    } else {
        None
    }
}

/// Independently relocates every unit of multiplicity of `mu`.
pub fn branch_configuration(
    space: &Space,
    kernel: &BranchingKernel,
    mu: &PointConfiguration,
    rng: &mut impl Rng,
) -> Result<PointConfiguration> {
    space.check_token(kernel.space_token)?;
    if matches!(kernel.form, KernelForm::Identity) {
        return Ok(mu.clone());
    }
    let mut out = PointConfiguration::empty();
    for (x, m) in mu.atoms() {
        for _ in 0..m {
            out.add(kernel.sample_relocation(space, x, rng), 1);
        }
    }
    Ok(out)
}

/// Exact law of the branched configuration: the convolution, over atoms of
/// `mu`, of multinomial relocations. Errors when the outcome count would
/// exceed `limit`.
pub fn branch_law(
    space: &Space,
    kernel: &BranchingKernel,
    mu: &PointConfiguration,
    limit: u128,
) -> Result<Vec<(PointConfiguration, f64)>> {
    space.check_token(kernel.space_token)?;
    if matches!(kernel.form, KernelForm::Identity) {
        return Ok(vec![(mu.clone(), 1.0)]);
    }
    let mut law: Vec<(PointConfiguration, f64)> = vec![(PointConfiguration::empty(), 1.0)];
    for (x, m) in mu.atoms() {
        let row = kernel.row(space, x);
        let support: Vec<SiteId> = (0..row.len()).filter(|&y| row[y] > 0.0).collect();
        let probs: Vec<f64> = support.iter().map(|&y| row[y]).collect();
        let outcomes = multinomial_outcomes(&support, &probs, m);

        let predicted = (law.len() as u128).saturating_mul(outcomes.len() as u128);
        if predicted > limit {
            return Err(Error::EnumerationTooLarge {
                size: predicted,
                limit,
            });
        }
        let mut next: std::collections::BTreeMap<PointConfiguration, f64> = Default::default();
        for (base, p) in &law {
            for (add, q) in &outcomes {
                *next.entry(base.merge(add)).or_insert(0.0) += p * q;
            }
        }
        law = next.into_iter().collect();
    }
    Ok(law)
}

/// All ways to distribute `m` independent draws over `sites` with the given
/// probabilities, with multinomial weights.
fn multinomial_outcomes(
    sites: &[SiteId],
    probs: &[f64],
    m: u64,
) -> Vec<(PointConfiguration, f64)> {
    let mut out = Vec::new();
    let mut counts = vec![0u64; sites.len()];
    // Factorials up to m for the multinomial coefficient.
    let mut fact = vec![1.0f64; m as usize + 1];
    for i in 1..=m as usize {
        fact[i] = fact[i - 1] * i as f64;
    }
    fn rec(
        sites: &[SiteId],
        probs: &[f64],
        fact: &[f64],
        counts: &mut Vec<u64>,
        pos: usize,
        left: u64,
        out: &mut Vec<(PointConfiguration, f64)>,
    ) {
        if pos == sites.len() - 1 {
            counts[pos] = left;
            let mut p = fact[fact.len() - 1];
            for (i, &k) in counts.iter().enumerate() {
                p = p / fact[k as usize] * probs[i].powi(k as i32);
            }
            out.push((
                PointConfiguration::from_atoms(
                    counts
                        .iter()
                        .enumerate()
                        .filter(|(_, &k)| k > 0)
                        .map(|(i, &k)| (sites[i], k)),
                ),
                p,
            ));
            return;
        }
        for k in 0..=left {
            counts[pos] = k;
            rec(sites, probs, fact, counts, pos + 1, left - k, out);
        }
    }
    rec(sites, probs, &fact, &mut counts, 0, m, &mut out);
    out
}

/// Evaluates the two-point correlation weight of the branched kernel at `mu`
/// on a product pair (f1, f2) through the closed identity
/// z^2 (prod_i (rho +/- mu)(kappa f_i) +/- (rho +/- mu)(kappa(f1 kappa f2))).
fn pair_weight_identity(
    space: &Space,
    kernel: &BranchingKernel,
    rho: &BaseMeasure,
    mu: &PointConfiguration,
    z: f64,
    sign: Sign,
    f1: &TestFunction,
    f2: &TestFunction,
) -> Result<f64> {
    let s = sign.factor();
    let signed = |f: &TestFunction| -> f64 {
        f.values()
            .iter()
            .enumerate()
            .map(|(i, v)| v * (rho.weight(i) + s * mu.multiplicity(i) as f64))
            .sum()
    };
    let kf1 = kernel.apply(space, f1)?;
    let kf2 = kernel.apply(space, f2)?;
    let f1_kf2 = TestFunction::from_values(
        space,
        f1.values()
            .iter()
            .zip(kf2.values())
            .map(|(a, b)| a * b)
            .collect(),
    )?;
    let k_f1_kf2 = kernel.apply(space, &f1_kf2)?;
    Ok(z * z * (signed(&kf1) * signed(&kf2) + s * signed(&k_f1_kf2)))
}

/// The same weight by the direct double sum over ordered point pairs, adding
/// the first point to the configuration before weighting the second.
fn pair_weight_double_sum(
    space: &Space,
    kernel: &BranchingKernel,
    rho: &BaseMeasure,
    mu: &PointConfiguration,
    z: f64,
    sign: Sign,
    f1: &TestFunction,
    f2: &TestFunction,
) -> Result<f64> {
    let s = sign.factor();
    let krho = kernel.push_measure(space, rho)?;
    let kmu = kernel.push_counts(space, mu);
    let mut total = 0.0;
    for y1 in 0..space.n_sites() {
        if f1.value(y1) == 0.0 {
            continue;
        }
        let w1 = z * (krho.weight(y1) + s * kmu[y1]);
        if w1 == 0.0 {
            continue;
        }
        // One branched point now sits at y1.
        let row1 = kernel.row(space, y1);
        let mut inner = 0.0;
        for y2 in 0..space.n_sites() {
            if f2.value(y2) == 0.0 {
                continue;
            }
            let w2 = z * (krho.weight(y2) + s * (kmu[y2] + row1[y2]));
            inner += w2 * f2.value(y2);
        }
        total += w1 * f1.value(y1) * inner;
    }
    Ok(total)
}

/// Exact commutation check: pointwise kernel commutation, symmetry of the
/// two-point weights under swapping (f1, f2) at two base configurations, and
/// agreement of the closed identity with the direct double sum.
pub fn check_cocycle(
    space: &Space,
    kernel: &BranchingKernel,
    f1: &TestFunction,
    f2: &TestFunction,
    rho: &BaseMeasure,
    z: f64,
    sign: Sign,
    eps: f64,
) -> Result<VerificationReport> {
    space.check_token(kernel.space_token)?;
    space.check_token(rho.space_token())?;

    let kf1 = kernel.apply(space, f1)?;
    let kf2 = kernel.apply(space, f2)?;
    let prod =
        |a: &TestFunction, b: &TestFunction| -> Result<TestFunction> {
            TestFunction::from_values(
                space,
                a.values().iter().zip(b.values()).map(|(x, y)| x * y).collect(),
            )
        };
    let lhs = kernel.apply(space, &prod(f1, &kf2)?)?;
    let rhs = kernel.apply(space, &prod(f2, &kf1)?)?;
    let pointwise = lhs
        .values()
        .iter()
        .zip(rhs.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // Base configurations to probe: empty, and one point at the heaviest
    // site (which keeps mu below rho for integer rho).
    let heaviest = (0..space.n_sites())
        .max_by(|&a, &b| rho.weight(a).partial_cmp(&rho.weight(b)).unwrap())
        .unwrap_or(0);
    let mus = [
        PointConfiguration::empty(),
        PointConfiguration::singleton(heaviest),
    ];

    let mut checks = vec![Check::exact("kernel_commutation", 0.0, pointwise, eps)];
    for (tag, mu) in ["empty", "single_point"].iter().zip(&mus) {
        let a = pair_weight_identity(space, kernel, rho, mu, z, sign, f1, f2)?;
        let b = pair_weight_identity(space, kernel, rho, mu, z, sign, f2, f1)?;
        checks.push(Check::exact(
            format!("pair_symmetry_{tag}"),
            a,
            b,
            eps * a.abs().max(1.0),
        ));
        let direct = pair_weight_double_sum(space, kernel, rho, mu, z, sign, f1, f2)?;
        checks.push(Check::exact(
            format!("identity_vs_double_sum_{tag}"),
            a,
            direct,
            eps * a.abs().max(1.0),
        ));
    }

    Ok(VerificationReport::new(
        "cocycle",
        VerificationMode::Exact,
        0,
        0,
        checks,
    ))
}

/// Draws `n_draws` configurations from `spec`, branches each, and requires
/// the count in `region` (a block union) and the total count to be preserved
/// on every draw.
pub fn verify_count_preservation(
    space: &Space,
    kernel: &BranchingKernel,
    spec: &ProcessSpec,
    region: &BlockSet,
    n_draws: u64,
    seeder: &Seeder,
) -> Result<VerificationReport> {
    space.check_token(kernel.space_token)?;
    let violations: u64 = replicate(seeder, "count-preservation", n_draws, |rng, _| {
        let mu = sample(space, spec, rng).expect("sampleable spec");
        let branched = branch_configuration(space, kernel, &mu, rng).expect("branchable");
        let bad = branched.total() != mu.total()
            || branched.count_in(space, region) != mu.count_in(space, region);
        u64::from(bad)
    })
    .into_iter()
    .sum();

    let checks = vec![Check::exact(
        "count_violations",
        0.0,
        violations as f64,
        0.0,
    )];
    Ok(
        VerificationReport::new(
            "count-preservation",
            VerificationMode::Exact,
            seeder.master(),
            n_draws,
            checks,
        )
        .with_note("draws", n_draws as f64),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::GridPartition;

    fn line_space() -> Space {
        Space::discrete_labelled(&["a", "b", "c"], &[0, 0, 1]).unwrap()
    }

    /// Row-stochastic but non-commuting: nearest-neighbor smoothing.
    fn smoothing_kernel(space: &Space) -> BranchingKernel {
        BranchingKernel::custom(
            space,
            vec![
                vec![0.5, 0.5, 0.0],
                vec![0.25, 0.5, 0.25],
                vec![0.0, 0.5, 0.5],
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_apply_is_identity() {
        let sp = line_space();
        let k = BranchingKernel::identity(&sp);
        let f = TestFunction::from_values(&sp, vec![1.0, 3.0, 2.0]).unwrap();
        assert_eq!(k.apply(&sp, &f).unwrap().values(), f.values());
        assert!(k.is_conditional());
    }

    #[test]
    fn partition_apply_averages_within_blocks() {
        let sp = line_space();
        let k = BranchingKernel::partition_uniform(&sp).unwrap();
        let f = TestFunction::from_values(&sp, vec![1.0, 3.0, 2.0]).unwrap();
        let kf = k.apply(&sp, &f).unwrap();
        assert_eq!(kf.values(), &[2.0, 2.0, 2.0]);
        assert!(k.is_conditional());
    }

    #[test]
    fn stochastic_kernels_preserve_constants() {
        let sp = line_space();
        let c = TestFunction::from_values(&sp, vec![0.7; 3]).unwrap();
        for k in [
            BranchingKernel::identity(&sp),
            BranchingKernel::partition_uniform(&sp).unwrap(),
            smoothing_kernel(&sp),
        ] {
            let kc = k.apply(&sp, &c).unwrap();
            for v in kc.values() {
                assert!((v - 0.7).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn custom_rows_must_be_stochastic() {
        let sp = line_space();
        let bad = vec![
            vec![0.5, 0.4, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ];
        assert!(BranchingKernel::custom(&sp, bad).is_err());
    }

    #[test]
    fn partition_kernel_is_idempotent() {
        let sp = line_space();
        let h = BaseMeasure::from_weights(&sp, vec![1.0, 3.0, 2.0]).unwrap();
        let k = BranchingKernel::partition(&sp, &h).unwrap();
        let f = TestFunction::from_values(&sp, vec![0.2, 1.7, 0.9]).unwrap();
        let once = k.apply(&sp, &f).unwrap();
        let twice = k.apply(&sp, &once).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn smoothing_kernel_is_not_conditional() {
        let sp = line_space();
        let k = smoothing_kernel(&sp);
        assert!(!k.is_conditional());
        let asym = find_asymmetry(&sp, &k).expect("counterexample exists");
        assert!(asym.defect > 1e-3);
    }

    #[test]
    fn partition_kernel_has_no_asymmetry() {
        let sp = line_space();
        let h = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 1.0]).unwrap();
        let k = BranchingKernel::partition(&sp, &h).unwrap();
        assert!(find_asymmetry(&sp, &k).is_none());
    }

    #[test]
    fn branch_identity_returns_input() {
        let sp = line_space();
        let k = BranchingKernel::identity(&sp);
        let mu = PointConfiguration::from_atoms([(0, 2), (2, 1)]);
        let mut rng = Seeder::new(1).rng("branch-id", 0);
        assert_eq!(branch_configuration(&sp, &k, &mu, &mut rng).unwrap(), mu);
    }

    #[test]
    fn branch_law_of_pair_under_uniform_kernel() {
        // Two units at `a`, relocated uniformly within the block {a, b}.
        let sp = line_space();
        let k = BranchingKernel::partition_uniform(&sp).unwrap();
        let mu = PointConfiguration::from_atoms([(0, 2)]);
        let law = branch_law(&sp, &k, &mu, 1 << 20).unwrap();
        assert_eq!(law.len(), 3);
        for (cfg, p) in &law {
            let expected = match (cfg.multiplicity(0), cfg.multiplicity(1)) {
                (2, 0) | (0, 2) => 0.25,
                (1, 1) => 0.5,
                _ => panic!("unexpected outcome {cfg:?}"),
            };
            assert!((p - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn branch_law_normalizes_and_respects_limit() {
        let sp = line_space();
        let k = smoothing_kernel(&sp);
        let mu = PointConfiguration::from_atoms([(0, 2), (1, 3)]);
        let law = branch_law(&sp, &k, &mu, 1 << 20).unwrap();
        let total: f64 = law.iter().map(|(_, p)| p).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(matches!(
            branch_law(&sp, &k, &mu, 4),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn cocycle_check_passes_for_conditional_kernels() {
        let sp = line_space();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 1.0]).unwrap();
        let f1 = TestFunction::site_indicator(&sp, 0);
        let f2 = TestFunction::from_values(&sp, vec![0.5, 1.0, 2.0]).unwrap();
        for k in [
            BranchingKernel::identity(&sp),
            BranchingKernel::partition_uniform(&sp).unwrap(),
        ] {
            for sign in [Sign::Plus, Sign::Minus] {
                let rep = check_cocycle(&sp, &k, &f1, &f2, &rho, 0.5, sign, EPS_EXACT).unwrap();
                assert!(rep.passed, "{:?}", rep.failed_checks().collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn cocycle_check_fails_for_smoothing_kernel() {
        let sp = line_space();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 1.0]).unwrap();
        let k = smoothing_kernel(&sp);
        let asym = find_asymmetry(&sp, &k).unwrap();
        let f1 = TestFunction::site_indicator(&sp, asym.y1);
        let f2 = TestFunction::site_indicator(&sp, asym.y2);
        let rep = check_cocycle(&sp, &k, &f1, &f2, &rho, 0.5, Sign::Plus, EPS_EXACT).unwrap();
        assert!(!rep.passed);
        let worst = rep
            .checks
            .iter()
            .map(|c| c.discrepancy)
            .fold(0.0, f64::max);
        assert!(worst > 1e-3);
    }

    #[test]
    fn permutation_kernel_on_symmetric_grid() {
        let sp =
            Space::gridded_box(2, vec![1.0, 1.0], 3, GridPartition::PermutationOrbits).unwrap();
        let k = BranchingKernel::permutation(&sp).unwrap();
        assert!(k.is_conditional());
        // Constant functions are preserved; off-diagonal orbits average.
        let mut vals = vec![0.0; sp.n_sites()];
        let c01 = sp.site_by_label("c1").unwrap();
        let c10 = sp.site_by_label("c3").unwrap();
        vals[c01] = 2.0;
        let f = TestFunction::from_values(&sp, vals).unwrap();
        let kf = k.apply(&sp, &f).unwrap();
        assert!((kf.value(c01) - 1.0).abs() < 1e-15);
        assert!((kf.value(c10) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn isotropic_kernel_requires_planar_grid() {
        let sp = line_space();
        assert!(BranchingKernel::isotropic(&sp).is_err());
        let grid =
            Space::gridded_box(2, vec![2.0, 2.0], 4, GridPartition::RadialBins(2)).unwrap();
        let k = BranchingKernel::isotropic(&grid).unwrap();
        assert!(k.is_conditional());
    }

    #[test]
    fn push_measure_partition_redistributes_block_mass() {
        let sp = line_space();
        let h = BaseMeasure::from_weights(&sp, vec![3.0, 1.0, 1.0]).unwrap();
        let k = BranchingKernel::partition(&sp, &h).unwrap();
        let rho = BaseMeasure::from_weights(&sp, vec![0.0, 4.0, 2.0]).unwrap();
        let pushed = k.push_measure(&sp, &rho).unwrap();
        assert!((pushed.weight(0) - 3.0).abs() < 1e-12);
        assert!((pushed.weight(1) - 1.0).abs() < 1e-12);
        assert!((pushed.weight(2) - 2.0).abs() < 1e-12);
        assert!((pushed.total() - rho.total()).abs() < 1e-12);
    }
}
