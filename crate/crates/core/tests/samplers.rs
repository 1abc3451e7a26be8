//! Statistical validation of the samplers against exact count laws.
//!
//! All tests run on frozen seeds, so they are deterministic; tolerances are
//! 4-sigma z-scores for moments and p > 1e-3 for chi-square fits.

use polya_core::point::PointConfiguration;
use polya_core::process::{
    exact_count_pmf, sample_poisson, sample_polya_difference, sample_polya_sum,
    sample_polya_sum_cluster, CountPmf, ProcessSpec,
};
use polya_core::rng::Seeder;
use polya_core::space::{BaseMeasure, BlockSet, Space};
use polya_core::stats::{chi_square_gof, Estimate};

const DRAWS: u64 = 100_000;
const Z_MAX: f64 = 4.0;
const P_MIN: f64 = 1e-3;

fn draw_many(
    seeder: &Seeder,
    domain: &str,
    n: u64,
    mut f: impl FnMut(&mut rand_chacha::ChaCha8Rng) -> PointConfiguration,
) -> Vec<PointConfiguration> {
    let mut rng = seeder.rng(domain, 0);
    (0..n).map(|_| f(&mut rng)).collect()
}

/// Chi-square of empirical configuration frequencies against an exact pmf.
/// Draws outside the enumerated support land in an overflow cell whose
/// expectation is the truncation error.
fn chi_square_vs_pmf(pmf: &CountPmf, draws: &[PointConfiguration]) -> f64 {
    let n = draws.len() as f64;
    let index: std::collections::BTreeMap<&PointConfiguration, usize> = pmf
        .iter()
        .enumerate()
        .map(|(i, (c, _))| (c, i))
        .collect();
    let mut observed = vec![0u64; pmf.len() + 1];
    for d in draws {
        match index.get(d) {
            Some(&i) => observed[i] += 1,
            None => observed[pmf.len()] += 1,
        }
    }
    let mut expected: Vec<f64> = pmf.iter().map(|(_, p)| p * n).collect();
    expected.push(pmf.truncation_error() * n);
    chi_square_gof(&observed, &expected, 5.0).unwrap().p_value
}

/// z-score of the empirical covariance of two count sequences against zero,
/// using the independence-null standard error sqrt(var_a * var_b / n).
fn covariance_z(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1.0);
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0);
    let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / (n - 1.0);
    cov / (va * vb / n).sqrt()
}

#[test]
fn poisson_empty_region_and_mean() {
    let sp = Space::discrete_labelled(&["a", "b"], &[0, 1]).unwrap();
    let seeder = Seeder::new(101);

    let rho = BaseMeasure::from_weights(&sp, vec![2.0, 0.0]).unwrap();
    let empty_spec = ProcessSpec::poisson(&sp, rho.clone(), BlockSet::from([1])).unwrap();
    let draws = draw_many(&seeder, "poisson-empty", 1000, |rng| {
        sample_poisson(&sp, &empty_spec, rng).unwrap()
    });
    assert!(draws.iter().all(|c| c.total() == 0));

    let spec = ProcessSpec::poisson(&sp, rho, sp.all_blocks()).unwrap();
    let totals: Vec<f64> = draw_many(&seeder, "poisson-mean", DRAWS, |rng| {
        sample_poisson(&sp, &spec, rng).unwrap()
    })
    .iter()
    .map(|c| c.total() as f64)
    .collect();
    let est = Estimate::from_samples(&totals);
    assert!(est.z_score(2.0).abs() < Z_MAX, "z = {}", est.z_score(2.0));
}

#[test]
fn counts_on_disjoint_blocks_are_uncorrelated() {
    let sp = Space::discrete_labelled(&["a", "b"], &[0, 1]).unwrap();
    let rho = BaseMeasure::from_weights(&sp, vec![1.0, 2.0]).unwrap();
    let block_a = BlockSet::from([0]);
    let block_b = BlockSet::from([1]);
    let seeder = Seeder::new(202);

    let specs = [
        ProcessSpec::poisson(&sp, rho.clone(), sp.all_blocks()).unwrap(),
        ProcessSpec::polya_sum(&sp, 0.4, rho.clone(), sp.all_blocks()).unwrap(),
        ProcessSpec::polya_difference(&sp, 1.5, rho, sp.all_blocks()).unwrap(),
    ];
    for spec in &specs {
        let domain = format!("increments-{}", spec.family().as_str());
        let draws = draw_many(&seeder, &domain, DRAWS, |rng| {
            polya_core::process::sample(&sp, spec, rng).unwrap()
        });
        let a: Vec<f64> = draws
            .iter()
            .map(|c| c.count_in(&sp, &block_a) as f64)
            .collect();
        let b: Vec<f64> = draws
            .iter()
            .map(|c| c.count_in(&sp, &block_b) as f64)
            .collect();
        let z = covariance_z(&a, &b);
        assert!(
            z.abs() < Z_MAX,
            "{}: covariance z = {z}",
            spec.family().as_str()
        );
    }
}

#[test]
fn sum_sampler_matches_geometric_on_unit_atom() {
    let sp = Space::discrete_labelled(&["a"], &[0]).unwrap();
    let all = sp.all_blocks();
    let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
    let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, all.clone()).unwrap();
    let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
    let seeder = Seeder::new(303);
    let draws = draw_many(&seeder, "sum-geometric", DRAWS, |rng| {
        sample_polya_sum(&sp, &spec, rng).unwrap()
    });
    let p = chi_square_vs_pmf(&pmf, &draws);
    assert!(p > P_MIN, "p = {p}");
}

#[test]
fn sum_sampler_joint_law_on_two_atoms() {
    let sp = Space::discrete_labelled(&["a", "b"], &[0, 1]).unwrap();
    let all = sp.all_blocks();
    let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
    let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, all.clone()).unwrap();
    let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
    let seeder = Seeder::new(304);
    let draws = draw_many(&seeder, "sum-joint", DRAWS, |rng| {
        sample_polya_sum(&sp, &spec, rng).unwrap()
    });
    let p = chi_square_vs_pmf(&pmf, &draws);
    assert!(p > P_MIN, "p = {p}");
}

#[test]
fn sum_sampler_vanishes_as_z_tends_to_zero() {
    let sp = Space::discrete_labelled(&["a"], &[0]).unwrap();
    let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
    let spec = ProcessSpec::polya_sum(&sp, 1e-12, rho, sp.all_blocks()).unwrap();
    let seeder = Seeder::new(305);
    let draws = draw_many(&seeder, "sum-tiny-z", 10_000, |rng| {
        sample_polya_sum(&sp, &spec, rng).unwrap()
    });
    assert!(draws.iter().all(|c| c.total() == 0));
}

#[test]
fn cluster_sampler_agrees_with_urn_sampler() {
    let sp = Space::discrete_labelled(&["a"], &[0]).unwrap();
    let all = sp.all_blocks();
    let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
    let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, all.clone()).unwrap();
    let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
    let seeder = Seeder::new(306);
    let draws = draw_many(&seeder, "cluster-vs-urn", DRAWS, |rng| {
        sample_polya_sum_cluster(&sp, &spec, rng).unwrap()
    });
    let p = chi_square_vs_pmf(&pmf, &draws);
    assert!(p > P_MIN, "p = {p}");
}

#[test]
fn cluster_sampler_mean_count() {
    let sp = Space::discrete_labelled(&["a", "b"], &[0, 0]).unwrap();
    let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
    let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, sp.all_blocks()).unwrap();
    let seeder = Seeder::new(307);
    let totals: Vec<f64> = draw_many(&seeder, "cluster-mean", DRAWS, |rng| {
        sample_polya_sum_cluster(&sp, &spec, rng).unwrap()
    })
    .iter()
    .map(|c| c.total() as f64)
    .collect();
    // Mean count is z/(1-z) * rho(region) = 1 * 2.
    let est = Estimate::from_samples(&totals);
    assert!(est.z_score(2.0).abs() < Z_MAX, "z = {}", est.z_score(2.0));
}

#[test]
fn cluster_sampler_vanishes_as_z_tends_to_zero() {
    let sp = Space::discrete_labelled(&["a"], &[0]).unwrap();
    let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
    let spec = ProcessSpec::polya_sum(&sp, 1e-12, rho, sp.all_blocks()).unwrap();
    let seeder = Seeder::new(308);
    let draws = draw_many(&seeder, "cluster-tiny-z", 10_000, |rng| {
        sample_polya_sum_cluster(&sp, &spec, rng).unwrap()
    });
    assert!(draws.iter().all(|c| c.total() == 0));
}

#[test]
fn urn_conditional_split_is_uniform() {
    // Two unit atoms: conditioned on total 3, the exchangeable placement law
    // is uniform over the four splits.
    let sp = Space::discrete_labelled(&["a", "b"], &[0, 0]).unwrap();
    let rho = BaseMeasure::uniform(&sp, 1.0).unwrap();
    let spec = ProcessSpec::polya_sum(&sp, 0.5, rho, sp.all_blocks()).unwrap();
    let seeder = Seeder::new(309);
    let draws = draw_many(&seeder, "urn-conditional", DRAWS, |rng| {
        sample_polya_sum(&sp, &spec, rng).unwrap()
    });
    let mut observed = [0u64; 4];
    for d in draws.iter().filter(|c| c.total() == 3) {
        observed[d.multiplicity(0) as usize] += 1;
    }
    let conditioned: u64 = observed.iter().sum();
    assert!(conditioned > 5_000);
    let expected = vec![conditioned as f64 / 4.0; 4];
    let res = chi_square_gof(&observed, &expected, 5.0).unwrap();
    assert!(res.p_value > P_MIN, "p = {}", res.p_value);
}

#[test]
fn difference_sampler_matches_exact_law() {
    let sp = Space::discrete_labelled(&["a"], &[0]).unwrap();
    let all = sp.all_blocks();
    let rho = BaseMeasure::uniform(&sp, 2.0).unwrap();
    let spec = ProcessSpec::polya_difference(&sp, 1.0, rho, all.clone()).unwrap();
    let pmf = exact_count_pmf(&sp, &spec, &all).unwrap();
    let seeder = Seeder::new(310);
    let draws = draw_many(&seeder, "diff-law", DRAWS, |rng| {
        sample_polya_difference(&sp, &spec, rng).unwrap()
    });
    let p = chi_square_vs_pmf(&pmf, &draws);
    assert!(p > P_MIN, "p = {p}");
}

#[test]
fn difference_draws_never_exceed_rho() {
    let sp = Space::discrete_labelled(&["a", "b", "c"], &[0, 0, 1]).unwrap();
    let rho = BaseMeasure::from_weights(&sp, vec![3.0, 1.0, 2.0]).unwrap();
    let spec = ProcessSpec::polya_difference(&sp, 2.0, rho.clone(), sp.all_blocks()).unwrap();
    let seeder = Seeder::new(311);
    let draws = draw_many(&seeder, "diff-dominated", DRAWS, |rng| {
        sample_polya_difference(&sp, &spec, rng).unwrap()
    });
    assert!(draws.iter().all(|c| c.dominated_by(&rho)));
}

#[test]
fn difference_sampler_vanishes_as_z_tends_to_zero() {
    let sp = Space::discrete_labelled(&["a"], &[0]).unwrap();
    let rho = BaseMeasure::uniform(&sp, 3.0).unwrap();
    let spec = ProcessSpec::polya_difference(&sp, 1e-12, rho, sp.all_blocks()).unwrap();
    let seeder = Seeder::new(312);
    let draws = draw_many(&seeder, "diff-tiny-z", 10_000, |rng| {
        sample_polya_difference(&sp, &spec, rng).unwrap()
    });
    assert!(draws.iter().all(|c| c.total() == 0));
}
