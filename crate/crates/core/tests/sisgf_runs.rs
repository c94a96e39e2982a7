use proptest::prelude::*;
use sisgf_core::bench::{
    generate_problem, run_experiment, AlgorithmKind, AlgorithmSpec, Execution, ExperimentPlan, OutputStrategy,
    QuadraticConfig, Sweep,
};
use sisgf_core::oracle::{OracleSession, ProblemSpec, StochasticObjective};
use sisgf_core::sisgf::{
    choose_iterations_for_budget, draw_output_index, make_schedule, run, IterateTrace, RunOptions,
};
use sisgf_core::stats::median;
use sisgf_core::{l1_norm, Purpose, RngRoot, StreamId, Variant};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn spec(l: f64, mu: f64, sigma_sq: f64) -> ProblemSpec {
    ProblemSpec::new(8, l, 4.0)
        .unwrap()
        .with_strong_mu(mu)
        .unwrap()
        .with_sigma_sq(sigma_sq)
        .unwrap()
}

/// Largest `K` with `2K·M(K) ≤ budget`, by walking K upward.
fn enumerate_k(budget: u64, batch: impl Fn(u64) -> u64) -> Option<u64> {
    let mut best = None;
    let mut k = 1;
    while 2 * k * batch(k) <= budget {
        best = Some(k);
        k += 1;
    }
    best
}

#[test]
fn budget_examples() {
    let s = spec(1.0, 1.0, 1.0);
    assert_eq!(choose_iterations_for_budget(&s, Variant::Convex, 1_000_000).unwrap(), 21);
    assert_eq!(enumerate_k(1_000_000, |k| 50 * k * k), Some(21));
    assert_eq!(choose_iterations_for_budget(&s, Variant::StronglyConvex, 1_000_000).unwrap(), 15);
    assert_eq!(enumerate_k(1_000_000, |k| 8 * k * k * k), Some(15));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn budget_solver_matches_enumeration(
        l in 0.2f64..4.0,
        mu_frac in 0.05f64..1.0,
        sigma_sq in 0.0f64..50.0,
        budget in 1_000u64..50_000_000,
    ) {
        let s = spec(l, l * mu_frac, sigma_sq);
        let noise = sigma_sq.max(1.0);
        let convex = |k: u64| (50.0 * (k * k) as f64 * noise / (l * l)).ceil().max(1.0) as u64;
        let strong = |k: u64| (8.0 * (k * k * k) as f64 * noise * (l * mu_frac) / (l * l * l)).ceil().max(1.0) as u64;
        for (variant, batch) in [(Variant::Convex, &convex as &dyn Fn(u64) -> u64), (Variant::StronglyConvex, &strong)] {
            let got = choose_iterations_for_budget(&s, variant, budget).ok().map(|k| k as u64);
            prop_assert_eq!(got, enumerate_k(budget, batch), "{:?}", variant);
        }
    }
}

fn chi_square(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

#[test]
fn strongly_convex_output_law() {
    // c = ⌈100L/μ⌉ = 100; P[Y = k] ∝ 1/γ_{k-1} ∝ k + c with γ₀ = γ₁.
    let s = spec(1.0, 1.0, 1.0);
    let params = make_schedule(&s, Variant::StronglyConvex, 10).unwrap();
    for (k, g) in params.gamma.iter().enumerate() {
        let want = 2.0 / (k as f64 + 1.0 + 101.0);
        assert!((g - want).abs() < 1e-15, "γ_{} = {g}", k + 1);
    }
    let raw: Vec<f64> = (1..=10u32).map(|k| f64::from(k.max(2)) + 100.0).collect();
    let total: f64 = raw.iter().sum();
    let probs: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let root = RngRoot::new(2024);
    let mut counts = [0u64; 10];
    for t in 0..10_000 {
        let y = draw_output_index(&params.gamma, &mut root.stream(StreamId::new(Purpose::OutputIndex, 1, t)));
        counts[y - 1] += 1;
    }
    let stat = chi_square(&counts, &probs);
    let crit = ChiSquared::new(9.0).unwrap().inverse_cdf(0.99);
    assert!(stat < crit, "χ² = {stat}, critical {crit}");
}

/// Independent restatement of the per-iterate guarantees.
fn trace_is_clean(trace: &IterateTrace, thresholds: &[f64], radius: f64) -> bool {
    trace.iterates.iter().enumerate().skip(1).all(|(i, x)| {
        let u = thresholds[i - 1];
        let nonzero = x.iter().filter(|v| **v != 0.0).count();
        l1_norm(x) <= radius * (1.0 + 1e-12)
            && x.iter().all(|v| *v == 0.0 || v.abs() >= u - 1e-12)
            && nonzero <= (2.0 * radius / u).floor() as usize
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn benchmark_runs_keep_invariants(
        dim in 3usize..40,
        k in 1usize..12,
        log_sigma in -3.0f64..1.0,
        strong in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let problem = generate_problem(&QuadraticConfig {
            dim,
            block_size: 10,
            sigma_sq: Some(10f64.powf(log_sigma)),
            seed,
            ..QuadraticConfig::default()
        }).unwrap();
        let variant = if strong { Variant::StronglyConvex } else { Variant::Convex };
        let params = make_schedule(problem.spec(), variant, k).unwrap().with_batch_size(20).unwrap();
        let mut s = OracleSession::new(&problem, seed ^ 1);
        let (res, trace) = run(&mut s, &params, &RunOptions::default()).unwrap();
        prop_assert_eq!(res.queries_total, 2 * k as u64 * 20);
        prop_assert_eq!(trace.iterates.len(), k + 1);
        prop_assert!(trace_is_clean(&trace, &params.threshold, problem.spec().radius()));

        let mut again = OracleSession::new(&problem, seed ^ 1);
        let (res2, trace2) = run(&mut again, &params, &RunOptions::default()).unwrap();
        prop_assert_eq!(res, res2);
        prop_assert_eq!(trace, trace2);
    }
}

fn d16_plan(budgets: Vec<u64>, algorithms: Vec<AlgorithmSpec>) -> ExperimentPlan {
    ExperimentPlan {
        sweep: Sweep::Budgets { dim: 16, budgets },
        algorithms,
        replications: 10,
        seed: 7,
        problem: QuadraticConfig::default(),
    }
}

#[test]
fn strongly_convex_aos_improves_tenfold_at_d16() {
    let plan = d16_plan(
        vec![1_000_000],
        vec![AlgorithmSpec::new(AlgorithmKind::SiSgf(Variant::StronglyConvex))],
    );
    let table = run_experiment(&plan, Execution::Parallel).unwrap();
    let cell = &table.cells[0];
    let ratios: Vec<f64> = cell.outcomes.iter().map(|o| o.initial_gap / o.gaps[1]).collect();
    let worst = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(worst >= 10.0, "initial / AOS gap ratios {ratios:?}");
}

#[test]
fn aos_gap_does_not_grow_with_budget() {
    let plan = d16_plan(
        vec![100_000, 1_000_000, 10_000_000],
        vec![
            AlgorithmSpec::new(AlgorithmKind::SiSgf(Variant::StronglyConvex)),
            AlgorithmSpec::new(AlgorithmKind::SiSgf(Variant::Convex)),
        ],
    );
    let table = run_experiment(&plan, Execution::Parallel).unwrap();
    for alg in ["SI-SGF-SC", "SI-SGF"] {
        let medians: Vec<f64> = [100_000, 1_000_000, 10_000_000]
            .iter()
            .map(|&b| median(&table.cell(b, alg).unwrap().gaps(OutputStrategy::Aos)))
            .collect();
        assert!(medians.windows(2).all(|w| w[1] <= w[0]), "{alg}: {medians:?}");
    }
}
