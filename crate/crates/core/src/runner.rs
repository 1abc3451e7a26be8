//! Executes a declared experiment and writes its verdict document plus CSV
//! tables.
//!
//! A run is a pure function of the (config, seed) pair: replica streams are
//! indexed, not shared, so the emitted documents are byte-identical no matter
//! how many workers execute them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary::{convergence_experiment, verify_mixed_ibp, MixtureSpec};
use crate::branching::{check_cocycle, BranchingKernel, Sign};
use crate::campbell::{
    exact_ibp_difference, intensity_measure, qj_law, verify_ibp, verify_palm,
    verify_superposition, BranchedProcess, ProductFunctional,
};
use crate::config::{ExperimentConfig, ExperimentKind, FamilyConfig, IbpMethod};
use crate::error::{Error, Result};
use crate::laplace::verify_laplace;
use crate::point::PointConfiguration;
use crate::report::{Check, VerificationMode, VerificationReport};
use crate::rng::{replicate, Seeder};
use crate::space::{BaseMeasure, Space, TestFunction};
use crate::stats::{bonferroni_z, Estimate};

/// The verdict document a run writes: the resolved configuration next to the
/// report, so a result is audit-complete on its own.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunDocument {
    pub config: ExperimentConfig,
    pub report: VerificationReport,
}

/// Where a finished run left its outputs.
#[derive(Debug)]
pub struct RunArtifacts {
    pub report: VerificationReport,
    pub report_path: PathBuf,
    pub table_paths: Vec<PathBuf>,
}

/// A named CSV table rendered in memory.
type Table = (String, Vec<u8>);

/// Runs the configured experiment and writes `report.json` and `tables/*.csv`
/// under `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    config.validate()?;
    let space = config.space.build()?;
    let rho = config.measure.build(&space)?;
    let kernel = config.kernel.build(&space)?;
    let seeder = Seeder::new(config.seed);

    let (report, mut tables) = match config.experiment {
        ExperimentKind::Sample => run_sample(config, &space, &rho, kernel, &seeder)?,
        ExperimentKind::VerifyIbp => run_ibp(config, &space, &rho, kernel, &seeder)?,
        ExperimentKind::VerifyPalm => run_palm(config, &space, &rho, kernel, &seeder)?,
        ExperimentKind::VerifyCocycle => run_cocycle(config, &space, &rho, &kernel)?,
        ExperimentKind::Laplace => run_laplace(config, &space, &rho, kernel, &seeder)?,
        ExperimentKind::Superposition => run_superposition(config, &space, &rho, kernel, &seeder)?,
        ExperimentKind::Boundary => run_boundary(config, &space, &rho)?,
        ExperimentKind::MixedIbp => run_mixed(config, &space, &rho, kernel, &seeder)?,
    };

    tables.push(("checks.csv".into(), csv_bytes(report.checks.iter())?));
    write_artifacts(config, report, tables, out_dir)
}

fn build_process(
    config: &ExperimentConfig,
    space: &Space,
    rho: &BaseMeasure,
    kernel: BranchingKernel,
) -> Result<BranchedProcess> {
    let spec = config
        .process
        .as_ref()
        .expect("validated: process present")
        .build(space, rho)?;
    BranchedProcess::new(space, spec, kernel)
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for row in rows {
        wtr.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.into_inner().map_err(|e| Error::Io(e.to_string()))
}

/// Folds a sub-report into a flat check list, prefixing names when the run
/// spans a battery.
fn absorb(
    checks: &mut Vec<Check>,
    notes: &mut Vec<(String, f64)>,
    prefix: &str,
    sub: VerificationReport,
) {
    for mut c in sub.checks {
        c.name = format!("{prefix}{}", c.name);
        checks.push(c);
    }
    for (k, v) in sub.notes {
        notes.push((format!("{prefix}{k}"), v));
    }
}

fn run_sample(
    config: &ExperimentConfig,
    space: &Space,
    rho: &BaseMeasure,
    kernel: BranchingKernel,
    seeder: &Seeder,
) -> Result<(VerificationReport, Vec<Table>)> {
    let process = build_process(config, space, rho, kernel)?;
    let draws: Vec<PointConfiguration> = replicate(seeder, "sample", config.replicas, |rng, _| {
        process.sample(space, rng).expect("validated spec")
    });

    // Mean count per block against the first-moment measure.
    let nu1 = intensity_measure(space, &process)?;
    let z_adj = bonferroni_z(config.tolerances.z_max, space.n_blocks());
    let mut checks = Vec::new();
    for b in 0..space.n_blocks() {
        let target: f64 = space.block_sites(b).iter().map(|&x| nu1.weight(x)).sum();
        let counts: Vec<f64> = draws
            .iter()
            .map(|mu| {
                space
                    .block_sites(b)
                    .iter()
                    .map(|&x| mu.multiplicity(x))
                    .sum::<u64>() as f64
            })
            .collect();
        let est = Estimate::from_samples(&counts);
        checks.push(Check::statistical(
            format!("block{b}_mean_count"),
            target,
            est.mean,
            est.z_score(target),
            z_adj,
        ));
    }
    let mean_total =
        draws.iter().map(|mu| mu.total() as f64).sum::<f64>() / config.replicas as f64;
    let report = VerificationReport::new(
        "sample",
        VerificationMode::Statistical,
        seeder.master(),
        config.replicas,
        checks,
    )
    .with_note("mean_total", mean_total);

    #[derive(Serialize)]
    struct Row<'a> {
        draw: u64,
        site: &'a str,
        block: usize,
        count: u64,
    }
    let mut rows = Vec::new();
    for (i, mu) in draws.iter().enumerate() {
        for (x, m) in mu.atoms() {
            rows.push(Row {
                draw: i as u64,
                site: &space.site(x).label,
                block: space.site(x).block,
                count: m,
            });
        }
    }
    Ok((report, vec![("samples.csv".into(), csv_bytes(rows)?)]))
}

fn run_ibp(
    config: &ExperimentConfig,
    space: &Space,
    rho: &BaseMeasure,
    kernel: BranchingKernel,
    seeder: &Seeder,
) -> Result<(VerificationReport, Vec<Table>)> {
    let process = build_process(config, space, rho, kernel)?;
    let battery: Vec<ProductFunctional> = config
        .functionals
        .iter()
        .map(|f| f.build(space))
        .collect::<Result<_>>()?;
    let z_adj = bonferroni_z(config.tolerances.z_max, battery.len());

    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for (i, h) in battery.iter().enumerate() {
        let sub = match config.method {
            IbpMethod::MonteCarlo => {
                verify_ibp(space, &process, h, config.replicas, seeder, z_adj)?
            }
            IbpMethod::Exact => exact_ibp_difference(
                space,
                &process,
                h,
                config.term_limit as u128,
                config.tolerances.eps_exact,
            )?,
        };
        let prefix = if battery.len() > 1 {
            format!("h{i}_")
        } else {
            String::new()
        };
        absorb(&mut checks, &mut notes, &prefix, sub);
    }
    let mode = match config.method {
        IbpMethod::MonteCarlo => VerificationMode::Statistical,
        IbpMethod::Exact => VerificationMode::Exact,
    };
    let mut report = VerificationReport::new(
        "ibp",
        mode,
        seeder.master(),
        config.replicas,
        checks,
    );
    report.notes = notes;
    let report = report.with_note("battery", battery.len() as f64);
    Ok((report, Vec::new()))
}

fn run_palm(
    config: &ExperimentConfig,
    space: &Space,
    rho: &BaseMeasure,
    kernel: BranchingKernel,
    seeder: &Seeder,
) -> Result<(VerificationReport, Vec<Table>)> {
    let process = build_process(config, space, rho, kernel)?;
    let battery: Vec<ProductFunctional> = config
        .functionals
        .iter()
        .map(|f| f.build(space))
        .collect::<Result<_>>()?;
    let z_adj = bonferroni_z(config.tolerances.z_max, battery.len());

    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for (i, h) in battery.iter().enumerate() {
        let sub = verify_palm(space, &process, h, config.replicas, seeder, z_adj)?;
        let prefix = if battery.len() > 1 {
            format!("h{i}_")
        } else {
            String::new()
        };
        absorb(&mut checks, &mut notes, &prefix, sub);
    }
    let mut report = VerificationReport::new(
        "palm",
        VerificationMode::Statistical,
        seeder.master(),
        config.replicas,
        checks,
    );
    report.notes = notes;
    let report = report.with_note("battery", battery.len() as f64);
    Ok((report, Vec::new()))
}

fn run_cocycle(
    config: &ExperimentConfig,
    space: &Space,
    rho: &BaseMeasure,
    kernel: &BranchingKernel,
) -> Result<(VerificationReport, Vec<Table>)> {
    let p = config.process.as_ref().expect("validated: process present");
    let z = p.z_required()?;
    let sign = match p.family {
        FamilyConfig::PolyaSum => Sign::Plus,
        FamilyConfig::PolyaDifference => Sign::Minus,
        FamilyConfig::Poisson => unreachable!("validated: signed family"),
    };

    let pairs: Vec<(TestFunction, TestFunction, String)> = match &config.pair {
        Some(pc) => vec![(pc.f1.build(space)?, pc.f2.build(space)?, String::new())],
        None => {
            if space.n_sites() > 32 {
                return Err(Error::Config(
                    "the site-indicator battery covers at most 32 sites; declare an explicit pair"
                        .into(),
                ));
            }
            let mut v = Vec::new();
            for i in 0..space.n_sites() {
                for j in (i + 1)..space.n_sites() {
                    v.push((
                        TestFunction::site_indicator(space, i),
                        TestFunction::site_indicator(space, j),
                        format!("f{i}_f{j}_"),
                    ));
                }
            }
            v
        }
    };

    let mut checks = Vec::new();
    let mut notes = Vec::new();
    for (f1, f2, prefix) in &pairs {
        let sub = check_cocycle(
            space,
            kernel,
            f1,
            f2,
            rho,
            z,
            sign,
            config.tolerances.eps_exact,
        )?;
        absorb(&mut checks, &mut notes, prefix, sub);
    }
    let mut report = VerificationReport::new(
        "cocycle",
        VerificationMode::Exact,
        config.seed,
        0,
        checks,
    );
    report.notes = notes;
    let report = report.with_note("pairs", pairs.len() as f64);
    Ok((report, Vec::new()))
}

fn run_laplace(
    config: &ExperimentConfig,
    space: &Space,
    rho: &BaseMeasure,
    kernel: BranchingKernel,
    seeder: &Seeder,
) -> Result<(VerificationReport, Vec<Table>)> {
    let process = build_process(config, space, rho, kernel)?;
    let f = config
        .function
        .as_ref()
        .expect("validated: function present")
        .build(space)?;
    let report = verify_laplace(
        space,
        &process,
        &f,
        config.replicas,
        seeder,
        config.tolerances.z_max,
    )?;
    Ok((report, Vec::new()))
}

fn run_superposition(
    config: &ExperimentConfig,
    space: &Space,
    rho: &BaseMeasure,
    kernel: BranchingKernel,
    seeder: &Seeder,
) -> Result<(VerificationReport, Vec<Table>)> {
    let process = build_process(config, space, rho, kernel)?;
    let blocks: Vec<usize> = match &config.blocks {
        Some(b) => b.clone(),
        None => (0..space.n_blocks()).collect(),
    };
    let report = verify_superposition(
        space,
        &process,
        &blocks,
        config.replicas,
        seeder,
        config.tolerances.eps_exact,
    )?;

    // Per-block total-count laws, for downstream plotting.
    #[derive(Serialize)]
    struct Row {
        block: usize,
        count: usize,
        probability: f64,
    }
    let mut rows = Vec::new();
    for &j in &blocks {
        let marg = qj_law(space, &process, j)?.marginal_total();
        for (count, probability) in marg.into_iter().enumerate() {
            rows.push(Row {
                block: j,
                count,
                probability,
            });
        }
    }
    Ok((report, vec![("block_counts.csv".into(), csv_bytes(rows)?)]))
}

fn run_boundary(
    config: &ExperimentConfig,
    space: &Space,
    rho: &BaseMeasure,
) -> Result<(VerificationReport, Vec<Table>)> {
    let spec = config
        .process
        .as_ref()
        .expect("validated: process present")
        .build(space, rho)?;
    let f = config
        .function
        .as_ref()
        .expect("validated: function present")
        .build(space)?;
    let bc = config.boundary.expect("validated: boundary present");
    let exhaustion = config
        .exhaustion
        .clone()
        .unwrap_or_default()
        .build(space)?;

    let mut totals = Vec::new();
    for level in 0..exhaustion.n_levels() {
        let mass = rho.mass_on(space, exhaustion.level(level))?;
        totals.push((bc.u * mass).floor() as u64);
    }
    let (rows, report) =
        convergence_experiment(space, &spec, &f, &exhaustion, &totals, bc.final_bound)?;
    Ok((report, vec![("convergence.csv".into(), csv_bytes(rows)?)]))
}

fn run_mixed(
    config: &ExperimentConfig,
    space: &Space,
    rho: &BaseMeasure,
    kernel: BranchingKernel,
    seeder: &Seeder,
) -> Result<(VerificationReport, Vec<Table>)> {
    let p = config.process.as_ref().expect("validated: process present");
    let region = p.region.build(space)?;
    let components: Vec<(f64, f64)> = config
        .mixture
        .as_ref()
        .expect("validated: mixture present")
        .components
        .iter()
        .map(|c| (c.z, c.weight))
        .collect();
    let mixture = MixtureSpec::new(
        space,
        p.family.to_family(),
        rho.clone(),
        region,
        kernel,
        components,
    )?;
    let h = config.functionals[0].build(space)?;
    let exhaustion = config
        .exhaustion
        .clone()
        .unwrap_or_default()
        .build(space)?;
    let report = verify_mixed_ibp(
        space,
        &mixture,
        &h,
        &exhaustion,
        config.replicas,
        seeder,
        config.tolerances.z_max,
    )?;
    Ok((report, Vec::new()))
}

fn write_artifacts(
    config: &ExperimentConfig,
    report: VerificationReport,
    tables: Vec<Table>,
    out_dir: &Path,
) -> Result<RunArtifacts> {
    let tables_dir = out_dir.join("tables");
    fs::create_dir_all(&tables_dir)?;
    let mut table_paths = Vec::new();
    for (name, bytes) in tables {
        let path = tables_dir.join(&name);
        fs::write(&path, bytes)?;
        table_paths.push(path);
    }
    let doc = RunDocument {
        config: config.clone(),
        report,
    };
    let mut json = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
    json.push('\n');
    let report_path = out_dir.join("report.json");
    fs::write(&report_path, &json)?;
    Ok(RunArtifacts {
        report: doc.report,
        report_path,
        table_paths,
    })
}
