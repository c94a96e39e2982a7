//! Monte Carlo checks of the benchmark problem against its closed forms.

use nalgebra::DMatrix;
use proptest::prelude::*;
use sisgf_core::bench::{
    estimate_sigma_sq, generate_problem, render_pivot, run_experiment, AlgorithmKind, AlgorithmSpec,
    BenchError, Effort, Execution, ExperimentPlan, QuadraticConfig, QuadraticProblem, Sweep,
};
use sisgf_core::oracle::{true_gap, OracleSession, StochasticObjective};
use sisgf_core::stats::{mean, std_dev};
use sisgf_core::{Purpose, RngRoot, StreamId, Variant};

fn problem(dim: usize, block: usize, noise_std: f64, seed: u64) -> QuadraticProblem {
    generate_problem(&QuadraticConfig {
        dim,
        block_size: block,
        noise_std,
        sigma_sq: Some(1.0),
        seed,
        ..QuadraticConfig::default()
    })
    .unwrap()
}

fn scenario_stream(t: u64, m: u64) -> StreamId {
    StreamId::new(Purpose::Scenario, t, m)
}

#[test]
fn same_stream_same_scenario() {
    let p = problem(12, 6, 1.0, 3);
    let root = RngRoot::new(9);
    let a = p.draw_scenario(&mut root.stream(scenario_stream(4, 2)));
    let b = p.draw_scenario(&mut root.stream(scenario_stream(4, 2)));
    assert_eq!(a, b);
}

#[test]
fn alpha_is_uncorrelated_across_streams() {
    let d = 16;
    let p = problem(d, 8, 1.0, 5);
    let root = RngRoot::new(17);
    let n = 10_000;
    let (xs, ys): (Vec<_>, Vec<_>) = (0..n as u64)
        .map(|t| {
            let a = p.draw_scenario(&mut root.stream(scenario_stream(t, 0))).alpha;
            let b = p.draw_scenario(&mut root.stream(scenario_stream(t, 1))).alpha;
            (a, b)
        })
        .unzip();
    for i in 0..d {
        let u: Vec<f64> = xs.iter().map(|a| a[i]).collect();
        let v: Vec<f64> = ys.iter().map(|a| a[i]).collect();
        let (mu, mv) = (mean(&u), mean(&v));
        let cov: f64 = u.iter().zip(&v).map(|(a, b)| (a - mu) * (b - mv)).sum::<f64>() / (n - 1) as f64;
        let r = cov / (std_dev(&u) * std_dev(&v));
        assert!(r.abs() < 0.05, "coordinate {i}: r = {r}");
    }
}

#[test]
fn alpha_covariance_matches_sigma() {
    let d = 16;
    let p = problem(d, 8, 1.0, 6);
    let root = RngRoot::new(23);
    let n = 100_000;
    let mut acc = DMatrix::<f64>::zeros(d, d);
    for t in 0..n as u64 {
        let a = p.draw_scenario(&mut root.stream(scenario_stream(t, 0))).alpha;
        for i in 0..d {
            for j in 0..d {
                acc[(i, j)] += a[i] * a[j];
            }
        }
    }
    let empirical = acc / n as f64;
    let sigma = p.sigma_matrix();
    let rel = (&empirical - &sigma).norm() / sigma.norm();
    assert!(rel < 0.05, "relative Frobenius error {rel}");
}

#[test]
fn mean_value_at_zero() {
    let d = 16;
    let p = problem(d, 8, 1.0, 7);
    let root = RngRoot::new(31);
    let n = 100_000;
    let zero = vec![0.0; d];
    let values: Vec<f64> = (0..n as u64)
        .map(|t| p.value(&zero, &p.draw_scenario(&mut root.stream(scenario_stream(t, 0)))))
        .collect();
    let xt = p.x_true();
    let quad: f64 = xt.iter().zip(p.sigma_mul(xt)).map(|(a, b)| a * b).sum();
    let expected = 0.5 * (quad + 1.0);
    let se = std_dev(&values) / (n as f64).sqrt();
    let m = mean(&values);
    assert!((m - expected).abs() < 3.0 * se, "mean {m} vs {expected} (se {se})");
}

#[test]
fn noise_free_value_vanishes_at_truth() {
    let p = problem(20, 10, 0.0, 8);
    let root = RngRoot::new(1);
    for t in 0..100 {
        let s = p.draw_scenario(&mut root.stream(scenario_stream(t, 0)));
        assert!(p.value(p.x_true(), &s).abs() < 1e-24);
    }
}

#[test]
fn gap_closed_form() {
    let p = problem(24, 10, 1.0, 9);
    let xt = p.x_true().to_vec();
    assert_eq!(true_gap(&p, &xt), Some(0.0));
    // Σ has unit diagonal, so a single-coordinate offset t costs t²/2.
    for (i, t) in [(0usize, 1.0), (5, -0.3), (23, 2.5)] {
        let mut x = xt.clone();
        x[i] += t;
        let g = true_gap(&p, &x).unwrap();
        assert!((g - 0.5 * t * t).abs() < 1e-12, "coordinate {i}: {g}");
    }
}

#[test]
fn analytic_gap_matches_monte_carlo() {
    let d = 12;
    let p = problem(d, 6, 1.0, 10);
    let x: Vec<f64> = (0..d).map(|i| 0.3 * (i as f64 * 0.7).sin()).collect();
    let root = RngRoot::new(77);
    let n = 100_000;
    let values: Vec<f64> = (0..n as u64)
        .map(|t| p.value(&x, &p.draw_scenario(&mut root.stream(scenario_stream(t, 0)))) - 0.5)
        .collect();
    let se = std_dev(&values) / (n as f64).sqrt();
    let g = p.analytic_gap(&x);
    assert!((mean(&values) - g).abs() < 4.0 * se, "{} vs {g}", mean(&values));
}

#[test]
fn variance_at_truth_is_trace_sigma() {
    for (d, block) in [(16, 8), (40, 40)] {
        let p = problem(d, block, 1.0, 11);
        let est = estimate_sigma_sq(&p, 100_000, &[p.x_true().to_vec()], RngRoot::new(2)).unwrap();
        let tr = p.trace_sigma();
        assert!((est - tr).abs() < 0.1 * tr, "d = {d}: {est} vs tr Σ = {tr}");
    }
}

#[test]
fn calibration_needs_samples() {
    let p = problem(4, 4, 1.0, 0);
    assert!(matches!(
        estimate_sigma_sq(&p, 0, &[vec![0.0; 4]], RngRoot::new(0)),
        Err(BenchError::EmptySample)
    ));
}

#[test]
fn oracle_budget_counts_calls() {
    let p = problem(4, 4, 1.0, 0);
    let mut s = OracleSession::new(&p, 0).with_budget(5);
    let sc = s.sample_scenario(scenario_stream(1, 0));
    for _ in 0..5 {
        s.evaluate(&[0.0; 4], &sc).unwrap();
    }
    assert!(s.evaluate(&[0.0; 4], &sc).is_err());
    assert_eq!(s.queries_used(), 5);
}

fn tiny_plan(dims: Vec<usize>, replications: usize, seed: u64) -> ExperimentPlan {
    ExperimentPlan {
        sweep: Sweep::Dimensions {
            dims,
            effort: Effort::Iterations(2),
        },
        algorithms: vec![
            AlgorithmSpec::new(AlgorithmKind::SiSgf(Variant::Convex)),
            AlgorithmSpec::new(AlgorithmKind::SiSgf(Variant::StronglyConvex)),
            AlgorithmSpec::new(AlgorithmKind::Sgf),
        ],
        replications,
        seed,
        problem: QuadraticConfig {
            block_size: 8,
            sigma_sq: Some(1.0),
            ..QuadraticConfig::default()
        },
    }
}

#[test]
fn table_two_layout() {
    let dims = vec![16, 32, 64, 128, 256, 512, 1024, 2048];
    let table = run_experiment(&tiny_plan(dims.clone(), 2, 4), Execution::Parallel).unwrap();
    let rows = table.summary();
    assert_eq!(rows.len(), 8 * 6);
    let text = render_pivot(&rows, "d");
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[0].split_whitespace().count(), 7);
    let keys: Vec<usize> = lines[1..]
        .iter()
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(keys, dims);
}

#[test]
fn single_replication_tables_are_reproducible() {
    let a = run_experiment(&tiny_plan(vec![16], 1, 12), Execution::Sequential).unwrap();
    let b = run_experiment(&tiny_plan(vec![16], 1, 12), Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert!(a.summary().iter().all(|r| r.sd_gap == 0.0 && r.replications == 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sigma_is_symmetric_and_well_conditioned(dim in 3usize..150, block in 1usize..120, seed in any::<u64>()) {
        let p = problem(dim, block, 1.0, seed);
        let s = p.sigma_matrix();
        prop_assert_eq!(&s, &s.transpose());
        let eig = s.symmetric_eigenvalues();
        prop_assert!(eig.min() >= 0.5, "min eigenvalue {}", eig.min());
        let spec = p.spec();
        prop_assert!((spec.lipschitz() - eig.max()).abs() < 1e-9);
        prop_assert!((spec.strong_mu() - eig.min()).abs() < 1e-9);
        let r = spec.radius();
        prop_assert!((8.0..=12.0).contains(&r), "R = {}", r);
    }

    #[test]
    fn gap_is_nonnegative(seed in any::<u64>(), xs in prop::collection::vec(-5.0f64..5.0, 20)) {
        let p = problem(20, 12, 1.0, seed);
        let g = true_gap(&p, &xs).unwrap();
        prop_assert!(g >= -1e-12);
    }
}
