use proptest::prelude::*;
use rand::Rng;
use sisgf_core::oracle::{DeterministicProblem, OracleSession, ProblemSpec};
use sisgf_core::smoothing::{
    check_directional_bias, check_value_bias, estimate_gradient, expected_estimator, smoothing_value_bias,
    SmoothingConfig,
};
use sisgf_core::stats::{mean, std_dev};
use sisgf_core::testfns::{LinearForm, LogSumExp, QuadraticForm, SmoothFunction};
use sisgf_core::{Purpose, RngRoot, StreamId};

fn as_problem<F: SmoothFunction>(f: &F) -> DeterministicProblem<impl Fn(&[f64]) -> f64 + Sync + '_> {
    let spec = ProblemSpec::new(f.dim(), f.lipschitz().max(1e-3), 1e6).unwrap();
    DeterministicProblem::new(spec, move |x: &[f64]| f.value(x))
}

/// Exact `E_u f(x + δu) - f(x)` for `xᵀAx`: the cross terms vanish and
/// `E[uᵀAu] = tr(A)`.
fn quadratic_bias(q: &QuadraticForm, delta: f64) -> f64 {
    delta * delta * q.trace()
}

#[test]
fn diagonal_quadratic_gradient_at_origin() {
    let diag = [1.5, -0.5, 2.0, 0.25];
    let q = QuadraticForm::diagonal(&diag);
    let p = as_problem(&q);
    let delta = 1e-3;
    let m = 100_000;
    let mut s = OracleSession::new(&p, 41);
    let est = estimate_gradient(&mut s, &[0.0; 4], &SmoothingConfig::new(delta, m).unwrap(), 1).unwrap();
    // At 0 every single-sample estimate is δ·tr(A)·u.
    let single_sd = delta * diag.iter().sum::<f64>().abs();
    for g in &est.gradient {
        assert!(g.abs() <= 4.0 * single_sd / (m as f64).sqrt(), "{g}");
    }
    assert_eq!(s.queries_used(), 2 * m);
}

#[test]
fn estimator_is_unbiased_for_smoothed_gradient() {
    let mut rng = RngRoot::new(5).stream(StreamId::new(Purpose::Diagnostic, 0, 0));
    let d = 6;
    let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let delta = 0.2;
    let f = LogSumExp { dim: d };
    let p = as_problem(&f);
    let exact = expected_estimator(&f, &x, delta);

    let n = 100_000;
    let cfg = SmoothingConfig::new(delta, 1).unwrap();
    let mut s = OracleSession::new(&p, 8);
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|t| estimate_gradient(&mut s, &x, &cfg, t).unwrap().gradient)
        .collect();
    for i in 0..d {
        let col: Vec<f64> = samples.iter().map(|g| g[i]).collect();
        let se = std_dev(&col) / (n as f64).sqrt();
        assert!((mean(&col) - exact[i]).abs() < 4.0 * se, "coordinate {i}");
    }
}

#[test]
fn three_dim_enumeration_matches_closed_form() {
    let a = nalgebra::DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -1.0, 0.3, -0.5, 0.8, -1.0, 0.8, 1.25]);
    let q = QuadraticForm::new(a);
    let x = [0.4, -1.2, 0.7];
    let got = smoothing_value_bias(&q, &x, 0.1);
    assert!((got - quadratic_bias(&q, 0.1)).abs() < 1e-12);
}

fn quadratic_family() -> impl Strategy<Value = (QuadraticForm, Vec<f64>, Vec<f64>)> {
    (1usize..=10, any::<u64>()).prop_map(|(d, seed)| {
        let mut rng = RngRoot::new(seed).stream(StreamId::new(Purpose::Diagnostic, 9, 0));
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let q = QuadraticForm::random(d, scale, &mut rng);
        let x = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let v = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        (q, x, v)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn smoothing_bounds_hold((q, x, v) in quadratic_family()) {
        for delta in [1e-3, 1e-2, 1e-1] {
            let vb = check_value_bias(&q, &x, delta, q.lipschitz());
            prop_assert!(vb.holds(1e-12), "value bias {:?} at δ = {}", vb, delta);
            let db = check_directional_bias(&q, &x, &v, delta, q.lipschitz());
            prop_assert!(db.holds(1e-9), "directional bias {:?} at δ = {}", db, delta);
        }
    }

    #[test]
    fn quadratic_bias_identity((q, x, _v) in quadratic_family()) {
        let got = smoothing_value_bias(&q, &x, 0.1);
        let want = quadratic_bias(&q, 0.1);
        prop_assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-3), "{} vs {}", got, want);
    }

    #[test]
    fn nonquadratic_bounds_hold(d in 1usize..=10, seed in any::<u64>()) {
        let mut rng = RngRoot::new(seed).stream(StreamId::new(Purpose::Diagnostic, 10, 0));
        let f = LogSumExp { dim: d };
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        for delta in [1e-3, 1e-2, 1e-1] {
            prop_assert!(check_value_bias(&f, &x, delta, 1.0).holds(1e-12));
            prop_assert!(check_directional_bias(&f, &x, &v, delta, 1.0).holds(1e-9));
        }
    }

    #[test]
    fn affine_functions_are_not_biased(coef in prop::collection::vec(-3.0f64..3.0, 1..10), delta in 1e-3f64..1.0) {
        let x = vec![0.5; coef.len()];
        let f = LinearForm { coef, offset: -1.0 };
        prop_assert!(smoothing_value_bias(&f, &x, delta).abs() < 1e-12);
    }

    #[test]
    fn estimate_costs_exactly_two_m(m in 1u64..200, d in 1usize..6) {
        let f = LinearForm { coef: vec![1.0; d], offset: 0.0 };
        let p = as_problem(&f);
        let mut s = OracleSession::new(&p, m);
        let x = vec![0.0; d];
        estimate_gradient(&mut s, &x, &SmoothingConfig::new(1e-2, m).unwrap(), 3).unwrap();
        prop_assert_eq!(s.queries_used(), 2 * m);
    }
}
