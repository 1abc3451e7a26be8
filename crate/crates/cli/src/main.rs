//! `polya`: run a declared experiment and report its verdict.
//!
//! The subcommand names the experiment and must match the config document's
//! `experiment` field. Exit status: 0 when every check passes, 1 on a
//! verification failure, 2 on a configuration or execution error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polya_core::config::{ExperimentConfig, ExperimentKind};
use polya_core::runner::{self, RunArtifacts};

#[derive(Parser)]
#[command(
    name = "polya",
    version,
    about = "Sampling and verification for branching Pólya point processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw configurations and summarize block counts.
    Sample(RunArgs),
    /// Check the partial-integration identity of the configured process.
    VerifyIbp(RunArgs),
    /// Check the Palm factorization of the configured process.
    VerifyPalm(RunArgs),
    /// Check the kernel cocycle identity by exact enumeration.
    VerifyCocycle(RunArgs),
    /// Compare analytic, composed, and empirical Laplace transforms.
    Laplace(RunArgs),
    /// Check the blockwise superposition decomposition.
    Superposition(RunArgs),
    /// Exact conditioned-transform convergence along an exhaustion.
    Boundary(RunArgs),
    /// Check partial integration for a parameter mixture with estimated z.
    MixedIbp(RunArgs),
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Sample(_) => ExperimentKind::Sample,
            Command::VerifyIbp(_) => ExperimentKind::VerifyIbp,
            Command::VerifyPalm(_) => ExperimentKind::VerifyPalm,
            Command::VerifyCocycle(_) => ExperimentKind::VerifyCocycle,
            Command::Laplace(_) => ExperimentKind::Laplace,
            Command::Superposition(_) => ExperimentKind::Superposition,
            Command::Boundary(_) => ExperimentKind::Boundary,
            Command::MixedIbp(_) => ExperimentKind::MixedIbp,
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::Sample(a)
            | Command::VerifyIbp(a)
            | Command::VerifyPalm(a)
            | Command::VerifyCocycle(a)
            | Command::Laplace(a)
            | Command::Superposition(a)
            | Command::Boundary(a)
            | Command::MixedIbp(a) => a,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment declaration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Replica-count override.
    #[arg(long)]
    replicas: Option<u64>,
    /// Output directory (default: the config's `output`, then `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for replica-parallel estimators.
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let args = cli.command.args();

    let mut config = match ExperimentConfig::from_path(&args.config) {
        Ok(c) => c,
        Err(e) => return fail_config(&e.to_string()),
    };
    if config.experiment != cli.command.kind() {
        return fail_config(&format!(
            "config declares experiment '{}' but the subcommand is '{}'",
            config.experiment.as_str(),
            cli.command.kind().as_str()
        ));
    }
    config.apply_overrides(args.seed, args.replicas);
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    let outcome = match args.workers {
        Some(n) => {
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(p) => p,
                Err(e) => return fail_config(&format!("cannot build worker pool: {e}")),
            };
            pool.install(|| runner::run(&config, &out_dir))
        }
        None => runner::run(&config, &out_dir),
    };

    match outcome {
        Ok(artifacts) => {
            print_summary(&artifacts);
            if artifacts.report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => fail_config(&e.to_string()),
    }
}

fn fail_config(message: &str) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(2)
}

fn print_summary(artifacts: &RunArtifacts) {
    let report = &artifacts.report;
    for check in &report.checks {
        let status = if check.passed { "pass" } else { "FAIL" };
        println!(
            "  [{status}] {}: discrepancy {:.3e} (tolerance {:.3e})",
            check.name, check.discrepancy, check.tolerance
        );
    }
    let verdict = if report.passed { "PASS" } else { "FAIL" };
    println!(
        "{}: {verdict} ({} checks, worst ratio {:.3})",
        report.experiment,
        report.checks.len(),
        report.worst_ratio()
    );
    println!("report: {}", artifacts.report_path.display());
    for table in &artifacts.table_paths {
        println!("table: {}", table.display());
    }
}
