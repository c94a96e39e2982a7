use sisgf_core::baselines::{sgf_default_params, sgf_params_for_iterations, sgf_run};
use sisgf_core::bench::{
    generate_problem, run_experiment, AlgorithmKind, AlgorithmSpec, Execution, ExperimentPlan, OutputStrategy,
    QuadraticConfig, Sweep,
};
use sisgf_core::oracle::{DeterministicProblem, OracleSession, ProblemSpec, StochasticObjective};
use sisgf_core::stats::median;

fn half_norm_sq(x: &[f64]) -> f64 {
    0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

#[test]
fn contracts_on_isotropic_quadratic() {
    let d = 8;
    let spec = ProblemSpec::new(d, 1.0, 2.0).unwrap().with_sigma_sq(0.0).unwrap().with_optimum_value(0.0);
    let p = DeterministicProblem::new(spec.clone(), half_norm_sq);
    let mut x1 = vec![0.0; d];
    x1[0] = 1.0;
    let params = sgf_params_for_iterations(&spec, 10_000, 1.0);
    for seed in 0..10 {
        let mut s = OracleSession::new(&p, seed);
        let r = sgf_run(&mut s, &params, Some(&x1)).unwrap();
        assert!(half_norm_sq(&r.x_last) < 1e-3, "seed {seed}: last {}", half_norm_sq(&r.x_last));
        assert!(r.gap_average.unwrap() < 0.5, "seed {seed}: average {:?}", r.gap_average);
        assert_eq!(r.queries_total, 20_000);
    }
}

#[test]
fn noise_free_benchmark_average_improves() {
    let problem = generate_problem(&QuadraticConfig {
        dim: 32,
        block_size: 16,
        noise_std: 0.0,
        seed: 3,
        ..QuadraticConfig::default()
    })
    .unwrap();
    let start = vec![0.0; 32];
    let initial = problem.analytic_gap(&start);
    let params = sgf_default_params(problem.spec(), 200_000);
    let mut s = OracleSession::new(&problem, 4);
    let r = sgf_run(&mut s, &params, None).unwrap();
    let avg = r.gap_average.unwrap();
    assert!(avg < initial, "average gap {avg} vs initial {initial}");
    assert_eq!(s.queries_used(), 200_000);
}

#[test]
fn budget_maps_to_half_as_many_iterations() {
    let spec = ProblemSpec::new(256, 2.0, 10.0).unwrap().with_sigma_sq(100.0).unwrap();
    assert_eq!(sgf_default_params(&spec, 1_000_000).iterations, 500_000);
    assert_eq!(sgf_default_params(&spec, 1_000_000).planned_queries(), 1_000_000);
}

#[test]
fn averaged_gap_at_d256_is_order_ten() {
    let plan = ExperimentPlan {
        sweep: Sweep::Budgets {
            dim: 256,
            budgets: vec![1_000_000],
        },
        algorithms: vec![AlgorithmSpec::new(AlgorithmKind::Sgf)],
        replications: 10,
        seed: 7,
        problem: QuadraticConfig::default(),
    };
    let table = run_experiment(&plan, Execution::Parallel).unwrap();
    let cell = table.cell(1_000_000, "SGF").unwrap();
    assert!(cell.outcomes.iter().all(|o| o.queries == 1_000_000));
    let m = median(&cell.gaps(OutputStrategy::Average));
    assert!((1.35..=135.0).contains(&m), "median SGF-Avg gap {m}");
}
