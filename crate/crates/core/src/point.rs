//! Finite point configurations: integer multiplicities on sites.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::space::{BaseMeasure, BlockSet, SiteId, Space, TestFunction};

/// A finite point configuration, stored as site -> multiplicity.
///
/// Configurations are simple data: they do not carry a space token, and all
/// operations that need geometry take the space explicitly.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct PointConfiguration {
    atoms: BTreeMap<SiteId, u64>,
}

impl PointConfiguration {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_atoms(atoms: impl IntoIterator<Item = (SiteId, u64)>) -> Self {
        let mut cfg = Self::empty();
        for (site, mult) in atoms {
            cfg.add(site, mult);
        }
        cfg
    }

    /// A single point at `site`.
    pub fn singleton(site: SiteId) -> Self {
        Self::from_atoms([(site, 1)])
    }

    pub fn add(&mut self, site: SiteId, mult: u64) {
        if mult > 0 {
            *self.atoms.entry(site).or_insert(0) += mult;
        }
    }

    /// Removes one unit at `site`; errors if none is present.
    pub fn remove_one(&mut self, site: SiteId) -> Result<()> {
        match self.atoms.get_mut(&site) {
            Some(m) if *m > 1 => {
                *m -= 1;
                Ok(())
            }
            Some(_) => {
                self.atoms.remove(&site);
                Ok(())
            }
            None => Err(Error::InvalidParameter(format!(
                "no point at site {site} to remove"
            ))),
        }
    }

    pub fn multiplicity(&self, site: SiteId) -> u64 {
        self.atoms.get(&site).copied().unwrap_or(0)
    }

    /// Occupied sites with their multiplicities, in site order.
    pub fn atoms(&self) -> impl Iterator<Item = (SiteId, u64)> + '_ {
        self.atoms.iter().map(|(&s, &m)| (s, m))
    }

    /// Total number of points.
    pub fn total(&self) -> u64 {
        self.atoms.values().sum()
    }

    /// Number of points in a block union.
    pub fn count_in(&self, space: &Space, region: &BlockSet) -> u64 {
        self.atoms
            .iter()
            .filter(|(&s, _)| region.contains(&space.site(s).block))
            .map(|(_, &m)| m)
            .sum()
    }

    /// Sum of f over the points (with multiplicity): the integral mu(f).
    pub fn integrate(&self, f: &TestFunction) -> f64 {
        self.atoms
            .iter()
            .map(|(&s, &m)| m as f64 * f.value(s))
            .sum()
    }

    /// Superposition mu + nu.
    pub fn merge(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (site, mult) in other.atoms() {
            out.add(site, mult);
        }
        out
    }

    /// The configuration restricted to a block union.
    pub fn restrict(&self, space: &Space, region: &BlockSet) -> Self {
        Self::from_atoms(
            self.atoms()
                .filter(|(s, _)| region.contains(&space.site(*s).block)),
        )
    }

    /// True when multiplicity(site) <= bound(site) everywhere; `bound` must be
    /// an integer point measure.
    pub fn dominated_by(&self, bound: &BaseMeasure) -> bool {
        self.atoms
            .iter()
            .all(|(&s, &m)| m as f64 <= bound.weight(s))
    }

    /// Expands to one site id per point (multiplicities unrolled), site order.
    pub fn to_units(&self) -> Vec<SiteId> {
        let mut units = Vec::with_capacity(self.total() as usize);
        for (site, mult) in self.atoms() {
            units.extend(std::iter::repeat(site).take(mult as usize));
        }
        units
    }

    /// The configuration as a point measure on the space.
    pub fn to_measure(&self, space: &Space) -> Result<BaseMeasure> {
        let mut weights = vec![0.0; space.n_sites()];
        for (site, mult) in self.atoms() {
            if site >= space.n_sites() {
                return Err(Error::SpaceMismatch);
            }
            weights[site] = mult as f64;
        }
        BaseMeasure::from_weights(space, weights)
    }
}

impl FromIterator<SiteId> for PointConfiguration {
    fn from_iter<I: IntoIterator<Item = SiteId>>(iter: I) -> Self {
        let mut cfg = Self::empty();
        for site in iter {
            cfg.add(site, 1);
        }
        cfg
    }
}
