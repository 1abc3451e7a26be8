//! Ground spaces, reference measures, test functions, and exhaustions.
//!
//! Two concrete spaces are supported: a discrete atom list and a gridded box
//! whose cells act as quadrature sites (midpoint rule, cell volume as the
//! quadrature weight). Every site belongs to exactly one partition block;
//! blocks are the invariant sets respected by partition kernels and
//! exhaustions.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};

/// Index of a site (atom or grid cell) within its space.
pub type SiteId = usize;
/// Index of a partition block.
pub type BlockId = usize;
/// A finite union of partition blocks.
pub type BlockSet = BTreeSet<BlockId>;

/// One atom or grid cell.
#[derive(Debug, Clone)]
pub struct Site {
    pub label: String,
    pub coords: Vec<f64>,
    pub block: BlockId,
    /// Quadrature volume: 1 for atoms, the cell volume for grid cells.
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceKind {
    Discrete,
    GriddedBox {
        dim: usize,
        sides: Vec<f64>,
        cells_per_side: usize,
    },
}

/// How a gridded box is carved into invariant blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum GridPartition {
    /// Everything in one block.
    Single,
    /// Concentric annuli around the origin (dimension 2 only).
    RadialBins(usize),
    /// Orbits of cells under coordinate permutations (hypercubic grids only).
    PermutationOrbits,
    /// Explicit block id per cell.
    Explicit(Vec<BlockId>),
}

/// A finite ground space: sites plus a locally finite partition into blocks.
#[derive(Debug, Clone)]
pub struct Space {
    kind: SpaceKind,
    sites: Vec<Site>,
    blocks: Vec<Vec<SiteId>>,
    token: u64,
}

impl Space {
    /// Discrete space from labelled atoms: `(label, coords, block)`.
    pub fn discrete(atoms: Vec<(String, Vec<f64>, BlockId)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidParameter("space has no atoms".into()));
        }
        let sites = atoms
            .into_iter()
            .map(|(label, coords, block)| Site {
                label,
                coords,
                block,
                volume: 1.0,
            })
            .collect();
        Self::from_sites(SpaceKind::Discrete, sites)
    }

    /// Discrete space with unit-spaced 1-d coordinates and the given block ids.
    pub fn discrete_labelled(labels: &[&str], blocks: &[BlockId]) -> Result<Self> {
        if labels.len() != blocks.len() {
            return Err(Error::InvalidParameter(
                "labels and blocks differ in length".into(),
            ));
        }
        Self::discrete(
            labels
                .iter()
                .zip(blocks)
                .enumerate()
                .map(|(i, (l, &b))| (l.to_string(), vec![i as f64], b))
                .collect(),
        )
    }

    /// Gridded box `[-s_1/2, s_1/2] x ... x [-s_d/2, s_d/2]` with
    /// `cells_per_side` cells along every axis. Sites are cell midpoints.
    pub fn gridded_box(
        dim: usize,
        sides: Vec<f64>,
        cells_per_side: usize,
        partition: GridPartition,
    ) -> Result<Self> {
        if dim == 0 || sides.len() != dim || cells_per_side == 0 {
            return Err(Error::InvalidParameter("bad grid geometry".into()));
        }
        if sides.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidParameter("box sides must be positive".into()));
        }
        let n_cells = cells_per_side
            .checked_pow(dim as u32)
            .filter(|&n| n <= 1 << 22)
            .ok_or_else(|| Error::InvalidParameter("grid too large".into()))?;
        let cell_len: Vec<f64> = sides.iter().map(|s| s / cells_per_side as f64).collect();
        let volume: f64 = cell_len.iter().product();

        let mut sites = Vec::with_capacity(n_cells);
        for flat in 0..n_cells {
            let idx = unflatten(flat, dim, cells_per_side);
            let coords: Vec<f64> = idx
                .iter()
                .enumerate()
                .map(|(a, &i)| -sides[a] / 2.0 + (i as f64 + 0.5) * cell_len[a])
                .collect();
            let block = match &partition {
                GridPartition::Single => 0,
                GridPartition::RadialBins(nbins) => {
                    if dim != 2 {
                        return Err(Error::InvalidParameter(
                            "radial bins require dimension 2".into(),
                        ));
                    }
                    radial_bin(&coords, &sides, *nbins)
                }
                GridPartition::PermutationOrbits => {
                    if sides.iter().any(|s| (s - sides[0]).abs() > 1e-12) {
                        return Err(Error::InvalidParameter(
                            "permutation orbits require a hypercubic box".into(),
                        ));
                    }
                    orbit_id(&idx, cells_per_side)
                }
                GridPartition::Explicit(blocks) => {
                    if blocks.len() != n_cells {
                        return Err(Error::InvalidParameter(
                            "explicit partition length mismatch".into(),
                        ));
                    }
                    blocks[flat]
                }
            };
            sites.push(Site {
                label: format!("c{flat}"),
                coords,
                block,
                volume,
            });
        }
        // Orbit ids are sparse; compact them.
        if matches!(partition, GridPartition::PermutationOrbits) {
            compact_blocks(&mut sites);
        }
        Self::from_sites(
            SpaceKind::GriddedBox {
                dim,
                sides,
                cells_per_side,
            },
            sites,
        )
    }

    fn from_sites(kind: SpaceKind, sites: Vec<Site>) -> Result<Self> {
        let n_blocks = sites.iter().map(|s| s.block).max().unwrap_or(0) + 1;
        let mut blocks = vec![Vec::new(); n_blocks];
        for (i, site) in sites.iter().enumerate() {
            blocks[site.block].push(i);
        }
        if blocks.iter().any(|b| b.is_empty()) {
            return Err(Error::InvalidParameter(
                "partition block ids must be contiguous and non-empty".into(),
            ));
        }
        let mut hasher = DefaultHasher::new();
        sites.len().hash(&mut hasher);
        for s in &sites {
            s.label.hash(&mut hasher);
            s.block.hash(&mut hasher);
            s.coords.len().hash(&mut hasher);
        }
        let token = hasher.finish();
        Ok(Space {
            kind,
            sites,
            blocks,
            token,
        })
    }

    pub fn kind(&self) -> &SpaceKind {
        &self.kind
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn site(&self, id: SiteId) -> &Site {
        &self.sites[id]
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn block_sites(&self, block: BlockId) -> &[SiteId] {
        &self.blocks[block]
    }

    /// Sites belonging to any block of `region`, in site order.
    pub fn sites_in(&self, region: &BlockSet) -> Vec<SiteId> {
        (0..self.sites.len())
            .filter(|&i| region.contains(&self.sites[i].block))
            .collect()
    }

    pub fn site_by_label(&self, label: &str) -> Option<SiteId> {
        self.sites.iter().position(|s| s.label == label)
    }

    pub fn all_blocks(&self) -> BlockSet {
        (0..self.blocks.len()).collect()
    }

    pub(crate) fn token(&self) -> u64 {
        self.token
    }

    pub(crate) fn check_token(&self, token: u64) -> Result<()> {
        if self.token == token {
            Ok(())
        } else {
            Err(Error::SpaceMismatch)
        }
    }
}

fn unflatten(mut flat: usize, dim: usize, cells: usize) -> Vec<usize> {
    let mut idx = vec![0; dim];
    for a in (0..dim).rev() {
        idx[a] = flat % cells;
        flat /= cells;
    }
    idx
}

fn radial_bin(coords: &[f64], sides: &[f64], nbins: usize) -> BlockId {
    let r = (coords[0].powi(2) + coords[1].powi(2)).sqrt();
    let r_max = ((sides[0] / 2.0).powi(2) + (sides[1] / 2.0).powi(2)).sqrt();
    (((r / r_max) * nbins as f64) as usize).min(nbins - 1)
}

fn orbit_id(idx: &[usize], cells: usize) -> BlockId {
    // Orbit representative: the sorted index tuple, flattened.
    let mut sorted = idx.to_vec();
    sorted.sort_unstable();
    sorted.iter().fold(0, |acc, &i| acc * cells + i)
}

fn compact_blocks(sites: &mut [Site]) {
    let mut seen: Vec<BlockId> = sites.iter().map(|s| s.block).collect();
    seen.sort_unstable();
    seen.dedup();
    for s in sites.iter_mut() {
        s.block = seen.binary_search(&s.block).unwrap();
    }
}

/// The reference measure rho: a nonnegative weight per site.
///
/// For discrete spaces the weight is the atom mass; for gridded boxes it is
/// density times cell volume, so integration is the midpoint quadrature sum.
#[derive(Debug, Clone)]
pub struct BaseMeasure {
    space_token: u64,
    weights: Vec<f64>,
    integral: bool,
}

impl BaseMeasure {
    pub fn from_weights(space: &Space, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.n_sites() {
            return Err(Error::SpaceMismatch);
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "measure weights must be finite and nonnegative".into(),
            ));
        }
        let integral = weights.iter().all(|&w| w == w.round());
        Ok(BaseMeasure {
            space_token: space.token(),
            weights,
            integral,
        })
    }

    /// Same weight on every site.
    pub fn uniform(space: &Space, weight: f64) -> Result<Self> {
        Self::from_weights(space, vec![weight; space.n_sites()])
    }

    /// Per-cell densities on a gridded box; weights become density * volume.
    pub fn from_density(space: &Space, density: Vec<f64>) -> Result<Self> {
        if density.len() != space.n_sites() {
            return Err(Error::SpaceMismatch);
        }
        let weights = density
            .iter()
            .zip(space.sites())
            .map(|(d, s)| d * s.volume)
            .collect();
        Self::from_weights(space, weights)
    }

    /// Lebesgue-style measure: weight = cell volume (1 per atom on discrete).
    pub fn volumes(space: &Space) -> Self {
        BaseMeasure {
            space_token: space.token(),
            weights: space.sites().iter().map(|s| s.volume).collect(),
            integral: space.sites().iter().all(|s| s.volume == s.volume.round()),
        }
    }

    pub fn weight(&self, site: SiteId) -> f64 {
        self.weights[site]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when every weight is a nonnegative integer (a point measure).
    pub fn is_integral(&self) -> bool {
        self.integral
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Mass of a block union.
    pub fn mass_on(&self, space: &Space, region: &BlockSet) -> Result<f64> {
        space.check_token(self.space_token)?;
        Ok(space
            .sites_in(region)
            .into_iter()
            .map(|i| self.weights[i])
            .sum())
    }

    pub(crate) fn space_token(&self) -> u64 {
        self.space_token
    }
}

/// A nonnegative function with bounded (finite block union) support.
#[derive(Debug, Clone)]
pub struct TestFunction {
    space_token: u64,
    values: Vec<f64>,
    support: BlockSet,
}

impl TestFunction {
    pub fn from_values(space: &Space, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.n_sites() {
            return Err(Error::SpaceMismatch);
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "test function values must be finite and nonnegative".into(),
            ));
        }
        let support = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| space.site(i).block)
            .collect();
        Ok(TestFunction {
            space_token: space.token(),
            values,
            support,
        })
    }

    pub fn zero(space: &Space) -> Self {
        TestFunction {
            space_token: space.token(),
            values: vec![0.0; space.n_sites()],
            support: BlockSet::new(),
        }
    }

    /// Indicator of a block union.
    pub fn indicator(space: &Space, region: &BlockSet) -> Self {
        let values = space
            .sites()
            .iter()
            .map(|s| if region.contains(&s.block) { 1.0 } else { 0.0 })
            .collect();
        TestFunction {
            space_token: space.token(),
            values,
            support: region
                .iter()
                .copied()
                .filter(|b| !space.block_sites(*b).is_empty())
                .collect(),
        }
    }

    /// Indicator of a single site.
    pub fn site_indicator(space: &Space, site: SiteId) -> Self {
        let mut values = vec![0.0; space.n_sites()];
        values[site] = 1.0;
        TestFunction {
            space_token: space.token(),
            values,
            support: BlockSet::from([space.site(site).block]),
        }
    }

    pub fn value(&self, site: SiteId) -> f64 {
        self.values[site]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn support(&self) -> &BlockSet {
        &self.support
    }

    pub(crate) fn space_token(&self) -> u64 {
        self.space_token
    }

    /// Pointwise combination, keeping the nonnegativity invariant.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "mapped values must stay finite and nonnegative".into(),
            ));
        }
        let mut out = self.clone();
        out.values = values;
        Ok(out)
    }
}

/// Integral of f against rho: exact weighted sum over sites.
pub fn integrate(space: &Space, f: &TestFunction, rho: &BaseMeasure) -> Result<f64> {
    space.check_token(f.space_token())?;
    space.check_token(rho.space_token())?;
    Ok(f.values
        .iter()
        .zip(rho.weights())
        .map(|(v, w)| v * w)
        .sum())
}

/// Restriction of rho to a block union: weights outside become zero.
pub fn restrict(space: &Space, rho: &BaseMeasure, region: &BlockSet) -> Result<BaseMeasure> {
    space.check_token(rho.space_token())?;
    let weights = rho
        .weights()
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            if region.contains(&space.site(i).block) {
                w
            } else {
                0.0
            }
        })
        .collect();
    BaseMeasure::from_weights(space, weights)
}

/// An increasing sequence of block unions exhausting the space.
#[derive(Debug, Clone)]
pub struct Exhaustion {
    space_token: u64,
    levels: Vec<BlockSet>,
}

impl Exhaustion {
    pub fn new(space: &Space, levels: Vec<BlockSet>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidParameter("exhaustion has no levels".into()));
        }
        for w in levels.windows(2) {
            if !w[0].is_subset(&w[1]) {
                return Err(Error::InvalidParameter(
                    "exhaustion levels must be increasing".into(),
                ));
            }
        }
        let last = levels.last().unwrap();
        if *last != space.all_blocks() {
            return Err(Error::InvalidParameter(
                "exhaustion must end at the full block set".into(),
            ));
        }
        Ok(Exhaustion {
            space_token: space.token(),
            levels,
        })
    }

    /// Geometric exhaustion: levels of 1, 2, 4, ... blocks in id order.
    pub fn geometric(space: &Space) -> Result<Self> {
        let n = space.n_blocks();
        let mut levels = Vec::new();
        let mut k = 1usize;
        loop {
            levels.push((0..k.min(n)).collect());
            if k >= n {
                break;
            }
            k *= 2;
        }
        Self::new(space, levels)
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// Blocks of B_level (levels are 0-based).
    pub fn level(&self, level: usize) -> &BlockSet {
        &self.levels[level]
    }

    pub fn deepest(&self) -> &BlockSet {
        self.levels.last().unwrap()
    }

    pub(crate) fn space_token(&self) -> u64 {
        self.space_token
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_blocks() -> Space {
        Space::discrete_labelled(&["a", "b", "c"], &[0, 0, 1]).unwrap()
    }

    #[test]
    fn integrate_zero_function() {
        let sp = two_blocks();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 3.0]).unwrap();
        let f = TestFunction::zero(&sp);
        assert_eq!(integrate(&sp, &f, &rho).unwrap(), 0.0);
    }

    #[test]
    fn integrate_block_indicator_gives_block_mass() {
        let sp = two_blocks();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 5.0]).unwrap();
        let f = TestFunction::indicator(&sp, &BlockSet::from([0]));
        assert_eq!(integrate(&sp, &f, &rho).unwrap(), 3.0);
    }

    #[test]
    fn integrate_hand_sum() {
        let sp = Space::discrete_labelled(&["a", "b"], &[0, 0]).unwrap();
        let rho = BaseMeasure::from_weights(&sp, vec![0.5, 0.25]).unwrap();
        let f = TestFunction::from_values(&sp, vec![1.0, 2.0]).unwrap();
        assert_eq!(integrate(&sp, &f, &rho).unwrap(), 1.0);
    }

    #[test]
    fn integrate_rejects_other_space() {
        let sp = two_blocks();
        let other = Space::discrete_labelled(&["x", "y", "z"], &[0, 1, 1]).unwrap();
        let rho = BaseMeasure::uniform(&other, 1.0).unwrap();
        let f = TestFunction::zero(&sp);
        assert!(matches!(
            integrate(&sp, &f, &rho),
            Err(Error::SpaceMismatch)
        ));
    }

    #[test]
    fn restrict_full_empty_and_partial() {
        let sp = two_blocks();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 3.0]).unwrap();
        let full = restrict(&sp, &rho, &sp.all_blocks()).unwrap();
        assert_eq!(full.weights(), rho.weights());
        let none = restrict(&sp, &rho, &BlockSet::new()).unwrap();
        assert!(none.weights().iter().all(|&w| w == 0.0));
        let part = restrict(&sp, &rho, &BlockSet::from([0])).unwrap();
        assert_eq!(part.weights(), &[1.0, 2.0, 0.0]);
    }

    #[test]
    fn exhaustion_must_be_nested_and_complete() {
        let sp = two_blocks();
        assert!(Exhaustion::new(
            &sp,
            vec![BlockSet::from([0]), BlockSet::from([0, 1])]
        )
        .is_ok());
        assert!(Exhaustion::new(
            &sp,
            vec![BlockSet::from([1]), BlockSet::from([0])]
        )
        .is_err());
        assert!(Exhaustion::new(&sp, vec![BlockSet::from([0])]).is_err());
    }

    #[test]
    fn exhaustion_restriction_stabilizes() {
        // restrict(rho, B_n) agrees with rho on any fixed block union once
        // the level contains it.
        let sp = Space::discrete_labelled(&["a", "b", "c", "d"], &[0, 1, 2, 3]).unwrap();
        let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let exh = Exhaustion::geometric(&sp).unwrap();
        let target = BlockSet::from([0, 1]);
        let level = (0..exh.n_levels())
            .find(|&n| target.is_subset(exh.level(n)))
            .unwrap();
        let restricted = restrict(&sp, &rho, exh.level(level)).unwrap();
        for i in sp.sites_in(&target) {
            assert_eq!(restricted.weight(i), rho.weight(i));
        }
    }

    #[test]
    fn grid_radial_partition_is_annular() {
        let sp = Space::gridded_box(2, vec![2.0, 2.0], 8, GridPartition::RadialBins(4)).unwrap();
        assert_eq!(sp.n_sites(), 64);
        assert_eq!(sp.n_blocks(), 4);
        // Block id grows with radius.
        let center = sp
            .sites()
            .iter()
            .min_by(|a, b| {
                norm2(&a.coords)
                    .partial_cmp(&norm2(&b.coords))
                    .unwrap()
            })
            .unwrap();
        let corner = sp
            .sites()
            .iter()
            .max_by(|a, b| {
                norm2(&a.coords)
                    .partial_cmp(&norm2(&b.coords))
                    .unwrap()
            })
            .unwrap();
        assert!(center.block < corner.block);
    }

    #[test]
    fn grid_orbit_partition_groups_permuted_cells() {
        let sp =
            Space::gridded_box(2, vec![1.0, 1.0], 3, GridPartition::PermutationOrbits).unwrap();
        // 3x3 grid: 3 diagonal singleton orbits + 3 off-diagonal pairs.
        assert_eq!(sp.n_blocks(), 6);
        let b01 = sp.site_by_label("c1").map(|i| sp.site(i).block).unwrap();
        let b10 = sp.site_by_label("c3").map(|i| sp.site(i).block).unwrap();
        assert_eq!(b01, b10);
    }

    #[test]
    fn integral_flag_tracks_weights() {
        let sp = two_blocks();
        assert!(BaseMeasure::from_weights(&sp, vec![1.0, 2.0, 0.0])
            .unwrap()
            .is_integral());
        assert!(!BaseMeasure::from_weights(&sp, vec![1.0, 0.5, 0.0])
            .unwrap()
            .is_integral());
    }

    fn norm2(c: &[f64]) -> f64 {
        c.iter().map(|x| x * x).sum()
    }
}
