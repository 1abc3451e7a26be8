//! Experiment configuration: one JSON document declares the ground space,
//! the reference measure, the branching kernel, the process, and the
//! experiment to run on them.
//!
//! The schema is strict — unknown fields are rejected, and every object an
//! experiment needs must be declared. [`ExperimentConfig::validate`] checks
//! the cross-field requirements up front; the `build` methods turn
//! declarations into domain objects and report anything out of range.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::branching::BranchingKernel;
use crate::campbell::{Phi, ProductFunctional};
use crate::error::{Error, Result};
use crate::process::{Family, ProcessSpec};
use crate::space::{
    BaseMeasure, BlockId, BlockSet, Exhaustion, GridPartition, Space, TestFunction,
};

/// The experiment a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    VerifyIbp,
    VerifyPalm,
    VerifyCocycle,
    Laplace,
    Superposition,
    Boundary,
    MixedIbp,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Sample => "sample",
            ExperimentKind::VerifyIbp => "verify-ibp",
            ExperimentKind::VerifyPalm => "verify-palm",
            ExperimentKind::VerifyCocycle => "verify-cocycle",
            ExperimentKind::Laplace => "laplace",
            ExperimentKind::Superposition => "superposition",
            ExperimentKind::Boundary => "boundary",
            ExperimentKind::MixedIbp => "mixed-ibp",
        }
    }
}

fn default_eps_exact() -> f64 {
    1e-12
}

fn default_z_max() -> f64 {
    4.0
}

fn default_term_limit() -> u64 {
    1 << 21
}

fn default_final_bound() -> f64 {
    1e-2
}

fn default_scale() -> f64 {
    1.0
}

/// Numerical acceptance thresholds of a run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Tolerances {
    /// Absolute defect allowed on exact (enumeration) checks.
    #[serde(default = "default_eps_exact")]
    pub eps_exact: f64,
    /// z-score threshold for statistical checks, before any battery-size
    /// widening.
    #[serde(default = "default_z_max")]
    pub z_max: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            eps_exact: default_eps_exact(),
            z_max: default_z_max(),
        }
    }
}

/// Ground space declaration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SpaceConfig {
    /// Labelled atoms with an explicit block id per atom.
    Discrete {
        labels: Vec<String>,
        blocks: Vec<BlockId>,
    },
    /// A box in `dim` dimensions cut into `cells_per_side`^`dim` cells.
    GriddedBox {
        dim: usize,
        sides: Vec<f64>,
        cells_per_side: usize,
        partition: PartitionConfig,
    },
}

impl SpaceConfig {
    pub fn build(&self) -> Result<Space> {
        match self {
            SpaceConfig::Discrete { labels, blocks } => {
                if labels.len() != blocks.len() {
                    return Err(Error::Config(
                        "space.labels and space.blocks differ in length".into(),
                    ));
                }
                let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
                Space::discrete_labelled(&refs, blocks)
            }
            SpaceConfig::GriddedBox {
                dim,
                sides,
                cells_per_side,
                partition,
            } => Space::gridded_box(*dim, sides.clone(), *cells_per_side, partition.to_partition()),
        }
    }
}

/// How a gridded box is carved into blocks.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PartitionConfig {
    Single,
    RadialBins { bins: usize },
    PermutationOrbits,
    Explicit { blocks: Vec<BlockId> },
}

impl PartitionConfig {
    fn to_partition(&self) -> GridPartition {
        match self {
            PartitionConfig::Single => GridPartition::Single,
            PartitionConfig::RadialBins { bins } => GridPartition::RadialBins(*bins),
            PartitionConfig::PermutationOrbits => GridPartition::PermutationOrbits,
            PartitionConfig::Explicit { blocks } => GridPartition::Explicit(blocks.clone()),
        }
    }
}

/// Reference measure declaration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasureConfig {
    /// The same weight on every site.
    Uniform { weight: f64 },
    /// Explicit per-site weights.
    Weights { values: Vec<f64> },
    /// Cell volumes (counting measure on a discrete space).
    Volumes,
}

impl MeasureConfig {
    pub fn build(&self, space: &Space) -> Result<BaseMeasure> {
        match self {
            MeasureConfig::Uniform { weight } => BaseMeasure::uniform(space, *weight),
            MeasureConfig::Weights { values } => BaseMeasure::from_weights(space, values.clone()),
            MeasureConfig::Volumes => Ok(BaseMeasure::volumes(space)),
        }
    }
}

/// Branching kernel declaration.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum KernelConfig {
    /// Keep every point where it is.
    #[default]
    Identity,
    /// Relocate within the block, proportionally to `weights` (uniformly
    /// when omitted).
    Partition {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    /// Relocate to a uniform site of the whole space.
    Isotropic,
    /// Shift every site to the next one within its block, cyclically.
    Permutation,
    /// Explicit stochastic rows, one per site.
    Custom { rows: Vec<Vec<f64>> },
}

impl KernelConfig {
    pub fn build(&self, space: &Space) -> Result<BranchingKernel> {
        match self {
            KernelConfig::Identity => Ok(BranchingKernel::identity(space)),
            KernelConfig::Partition { weights: None } => BranchingKernel::partition_uniform(space),
            KernelConfig::Partition { weights: Some(v) } => {
                let h = BaseMeasure::from_weights(space, v.clone())?;
                BranchingKernel::partition(space, &h)
            }
            KernelConfig::Isotropic => BranchingKernel::isotropic(space),
            KernelConfig::Permutation => BranchingKernel::permutation(space),
            KernelConfig::Custom { rows } => BranchingKernel::custom(space, rows.clone()),
        }
    }
}

/// Process family names as they appear in config documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyConfig {
    Poisson,
    PolyaSum,
    PolyaDifference,
}

impl FamilyConfig {
    pub fn to_family(self) -> Family {
        match self {
            FamilyConfig::Poisson => Family::Poisson,
            FamilyConfig::PolyaSum => Family::PolyaSum,
            FamilyConfig::PolyaDifference => Family::PolyaDifference,
        }
    }
}

/// A block union: the literal string `"all"` or a list of block ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RegionConfig {
    Named(String),
    Blocks(Vec<BlockId>),
}

impl Default for RegionConfig {
    fn default() -> Self {
        RegionConfig::Named("all".into())
    }
}

impl RegionConfig {
    pub fn build(&self, space: &Space) -> Result<BlockSet> {
        match self {
            RegionConfig::Named(s) if s == "all" => Ok(space.all_blocks()),
            RegionConfig::Named(s) => {
                Err(Error::Config(format!("unknown region keyword '{s}'")))
            }
            RegionConfig::Blocks(ids) => block_set(space, ids),
        }
    }
}

/// Turns explicit block ids into a block set, rejecting out-of-range ids.
fn block_set(space: &Space, ids: &[BlockId]) -> Result<BlockSet> {
    for &b in ids {
        if b >= space.n_blocks() {
            return Err(Error::Config(format!(
                "block id {b} out of range; the space has {} blocks",
                space.n_blocks()
            )));
        }
    }
    Ok(ids.iter().copied().collect())
}

/// Underlying process declaration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub family: FamilyConfig,
    /// Required for the Pólya families; Poisson and mixture runs omit it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[serde(default)]
    pub region: RegionConfig,
}

impl ProcessConfig {
    pub fn build(&self, space: &Space, rho: &BaseMeasure) -> Result<ProcessSpec> {
        let region = self.region.build(space)?;
        match self.family {
            FamilyConfig::Poisson => ProcessSpec::poisson(space, rho.clone(), region),
            FamilyConfig::PolyaSum => {
                ProcessSpec::polya_sum(space, self.z_required()?, rho.clone(), region)
            }
            FamilyConfig::PolyaDifference => {
                ProcessSpec::polya_difference(space, self.z_required()?, rho.clone(), region)
            }
        }
    }

    pub(crate) fn z_required(&self) -> Result<f64> {
        self.z.ok_or_else(|| {
            Error::Config("process.z is required for the Pólya families".into())
        })
    }
}

/// A nonnegative test function, pointwise or as a scaled block indicator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FunctionConfig {
    Values {
        values: Vec<f64>,
    },
    Indicator {
        region: Vec<BlockId>,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

impl FunctionConfig {
    pub fn build(&self, space: &Space) -> Result<TestFunction> {
        match self {
            FunctionConfig::Values { values } => TestFunction::from_values(space, values.clone()),
            FunctionConfig::Indicator { region, scale } => {
                let set = block_set(space, region)?;
                TestFunction::indicator(space, &set).map(|v| v * *scale)
            }
        }
    }
}

/// The configuration factor φ of a product functional.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PhiConfig {
    One,
    /// exp(−μ(f)).
    ExpNeg { f: FunctionConfig },
    /// Indicator of the count in a block union being exactly `k`.
    CountEq { region: Vec<BlockId>, k: u64 },
    /// Count in a block union raised to a power.
    CountPoly { region: Vec<BlockId>, degree: u32 },
}

impl PhiConfig {
    pub fn build(&self, space: &Space) -> Result<Phi> {
        Ok(match self {
            PhiConfig::One => Phi::One,
            PhiConfig::ExpNeg { f } => Phi::ExpNeg(f.build(space)?),
            PhiConfig::CountEq { region, k } => Phi::CountEq {
                region: block_set(space, region)?,
                k: *k,
            },
            PhiConfig::CountPoly { region, degree } => Phi::CountPoly {
                region: block_set(space, region)?,
                degree: *degree,
            },
        })
    }
}

/// h(x, μ) = g(x) φ(μ).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub g: FunctionConfig,
    pub phi: PhiConfig,
}

impl FunctionalConfig {
    pub fn build(&self, space: &Space) -> Result<ProductFunctional> {
        Ok(ProductFunctional::new(
            self.g.build(space)?,
            self.phi.build(space)?,
        ))
    }
}

/// Increasing block unions ending at the whole space.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ExhaustionConfig {
    /// Levels of 1, 2, 4, ... blocks in id order.
    #[default]
    Geometric,
    /// Explicit levels.
    Levels { levels: Vec<Vec<BlockId>> },
}

impl ExhaustionConfig {
    pub fn build(&self, space: &Space) -> Result<Exhaustion> {
        match self {
            ExhaustionConfig::Geometric => Exhaustion::geometric(space),
            ExhaustionConfig::Levels { levels } => {
                let sets = levels
                    .iter()
                    .map(|ids| block_set(space, ids))
                    .collect::<Result<Vec<_>>>()?;
                Exhaustion::new(space, sets)
            }
        }
    }
}

/// The two test functions of a cocycle check.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub f1: FunctionConfig,
    pub f2: FunctionConfig,
}

/// Parameters of a boundary-convergence run.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct BoundaryConfig {
    /// Conditioning density: level n fixes ⌊u·ρ(B_n)⌋ points.
    pub u: f64,
    /// Bound the deepest level's transform error must meet.
    #[serde(default = "default_final_bound")]
    pub final_bound: f64,
}

/// One mixture component: a parameter value and its probability.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub z: f64,
    pub weight: f64,
}

/// A finite mixture over the parameter of a Pólya family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureConfig {
    pub components: Vec<MixtureComponent>,
}

/// How an integration-by-parts check is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IbpMethod {
    /// Independent Monte-Carlo estimates of both sides.
    #[default]
    MonteCarlo,
    /// Full enumeration of both sides (difference family only).
    Exact,
}

/// One experiment run, fully declared.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    /// Master seed; every replica stream derives from it.
    pub seed: u64,
    pub replicas: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    pub space: SpaceConfig,
    pub measure: MeasureConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process: Option<ProcessConfig>,
    /// Functionals h = g ⊗ φ for IBP and Palm checks; the z threshold is
    /// Bonferroni-widened over the battery size.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functionals: Vec<FunctionalConfig>,
    /// Test function for Laplace and boundary runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub function: Option<FunctionConfig>,
    /// Explicit cocycle pair; when omitted, every site-indicator pair is
    /// tried.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<PairConfig>,
    /// Blocks for a superposition check (all blocks when omitted).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocks: Option<Vec<BlockId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exhaustion: Option<ExhaustionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<BoundaryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureConfig>,
    #[serde(default)]
    pub method: IbpMethod,
    /// Term cap for exact enumeration routes.
    #[serde(default = "default_term_limit")]
    pub term_limit: u64,
    /// Output directory; the command-line `--out` flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("malformed config: {e}")))
    }

    /// Reads and parses a JSON config file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Command-line overrides, applied before the run so the embedded config
    /// reflects what actually ran.
    pub fn apply_overrides(&mut self, seed: Option<u64>, replicas: Option<u64>) {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(r) = replicas {
            self.replicas = r;
        }
    }

    /// Structural validation: counts, thresholds, and the presence of every
    /// section the declared experiment needs.
    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            return Err(Error::Config("replicas must be at least 1".into()));
        }
        if !(self.tolerances.eps_exact > 0.0) || !(self.tolerances.z_max > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        let process = || {
            self.process.as_ref().ok_or_else(|| {
                Error::Config(format!(
                    "'{}' requires a process declaration",
                    self.experiment.as_str()
                ))
            })
        };
        let functionals = || {
            if self.functionals.is_empty() {
                Err(Error::Config(format!(
                    "'{}' requires at least one functional",
                    self.experiment.as_str()
                )))
            } else {
                Ok(())
            }
        };
        if let Some(p) = &self.process {
            if p.family == FamilyConfig::Poisson && p.z.is_some() {
                return Err(Error::Config(
                    "poisson has no z parameter; omit process.z".into(),
                ));
            }
        }
        match self.experiment {
            ExperimentKind::Sample => {
                process()?;
            }
            ExperimentKind::VerifyIbp => {
                let p = process()?;
                functionals()?;
                if self.method == IbpMethod::Exact && p.family != FamilyConfig::PolyaDifference {
                    return Err(Error::Config(
                        "the exact route is available for the difference family only".into(),
                    ));
                }
            }
            ExperimentKind::VerifyPalm => {
                process()?;
                functionals()?;
            }
            ExperimentKind::VerifyCocycle => {
                let p = process()?;
                if p.family == FamilyConfig::Poisson {
                    return Err(Error::Config(
                        "the cocycle identity is checked for the signed Pólya families".into(),
                    ));
                }
            }
            ExperimentKind::Laplace => {
                process()?;
                if self.function.is_none() {
                    return Err(Error::Config("'laplace' requires a test function".into()));
                }
            }
            ExperimentKind::Superposition => {
                process()?;
            }
            ExperimentKind::Boundary => {
                let p = process()?;
                if p.family != FamilyConfig::PolyaDifference {
                    return Err(Error::Config(
                        "'boundary' runs on the difference family".into(),
                    ));
                }
                if self.function.is_none() {
                    return Err(Error::Config("'boundary' requires a test function".into()));
                }
                let b = self.boundary.as_ref().ok_or_else(|| {
                    Error::Config("'boundary' requires a boundary section".into())
                })?;
                if !(b.u > 0.0 && b.u < 1.0) {
                    return Err(Error::Config(
                        "boundary.u must lie strictly between 0 and 1".into(),
                    ));
                }
            }
            ExperimentKind::MixedIbp => {
                let p = process()?;
                if p.family == FamilyConfig::Poisson {
                    return Err(Error::Config(
                        "mixtures are defined over the Pólya families".into(),
                    ));
                }
                if p.z.is_some() {
                    return Err(Error::Config(
                        "'mixed-ibp' draws z from the mixture components; omit process.z".into(),
                    ));
                }
                if self.mixture.is_none() {
                    return Err(Error::Config("'mixed-ibp' requires a mixture section".into()));
                }
                if self.functionals.len() != 1 {
                    return Err(Error::Config(
                        "'mixed-ibp' takes exactly one functional".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}
