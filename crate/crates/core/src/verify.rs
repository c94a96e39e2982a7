//! Self-check suites run by `sisgf verify`.
//!
//! Each suite draws random instances from a fixed seed and counts how many
//! checks pass. The projection routine is injectable so the suites' own
//! sensitivity can be tested against a deliberately broken projector.

use rand::Rng;

use crate::baselines::{sgf_run, SgfParams};
use crate::oracle::{DeterministicProblem, OracleError, OracleSession, ProblemSpec};
use crate::projection::{
    frozen_objective, frozen_weights, grid_minimize, sparsify_project, verify_kkt,
    ProjectionCertificate, ProjectionInput, THRESHOLD_TOL,
};
use crate::rng::{Purpose, RngRoot, StreamId};
use crate::sisgf::{make_schedule, run, RunOptions, Variant};
use crate::smoothing::{
    check_directional_bias, check_value_bias, estimate_gradient, smoothing_value_bias,
    SmoothingConfig,
};
use crate::testfns::{LinearForm, QuadraticForm, SmoothFunction};
use crate::{l1_norm, support_size};

pub type Projector = fn(&ProjectionInput) -> (Vec<f64>, ProjectionCertificate);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    All,
    Projection,
    Smoothing,
    Oracle,
}

impl std::str::FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Scope::All),
            "projection" => Ok(Scope::Projection),
            "smoothing" => Ok(Scope::Smoothing),
            "oracle" => Ok(Scope::Oracle),
            other => Err(format!(
                "unknown scope {other:?}; expected all, projection, smoothing or oracle"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: usize,
    pub failed: usize,
    /// First few failure messages.
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: 0,
            failed: 0,
            failures: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
            if self.failures.len() < 5 {
                self.failures.push(what());
            }
        }
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub seed: u64,
    pub projection_trials: usize,
    pub smoothing_trials: usize,
    pub projector: Projector,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            projection_trials: 2_000,
            smoothing_trials: 100,
            projector: sparsify_project,
        }
    }
}

pub fn run_suites(scope: Scope, opts: &VerifyOptions) -> Vec<SuiteReport> {
    let mut out = Vec::new();
    if matches!(scope, Scope::All | Scope::Projection) {
        out.push(projection_suite(opts));
    }
    if matches!(scope, Scope::All | Scope::Smoothing) {
        out.push(smoothing_suite(opts));
    }
    if matches!(scope, Scope::All | Scope::Oracle) {
        out.push(oracle_suite(opts));
    }
    out
}

/// Random projection instance with `γ ≥ 2a` and `R ≥ U`.
pub fn random_projection_input<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> ProjectionInput {
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    let x: Vec<f64> = (0..dim)
        .map(|_| {
            if rng.random_bool(0.2) {
                0.0
            } else {
                scale * rng.random_range(-1.0..1.0)
            }
        })
        .collect();
    let a = 10f64.powf(rng.random_range(-2.0..0.0));
    let gamma = 2.0 * a * rng.random_range(1.0..4.0);
    let threshold = scale * rng.random_range(0.01..0.6);
    let radius = threshold * rng.random_range(1.0..(dim as f64 + 2.0));
    ProjectionInput::new(x, threshold, radius, gamma, a).expect("sampled input is valid")
}

fn projection_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut rep = SuiteReport::new("projection");
    let root = RngRoot::new(opts.seed);
    for t in 0..opts.projection_trials {
        let mut rng = root.stream(StreamId::new(Purpose::Diagnostic, 1, t as u64));
        let dim = rng.random_range(1..=32);
        let input = random_projection_input(dim, &mut rng);
        let (v, cert) = (opts.projector)(&input);
        let u = input.threshold();
        let r = input.radius();
        let residual = verify_kkt(&input, &v, &cert);
        rep.check(residual <= 1e-9, || format!("trial {t}: KKT residual {residual:e}"));
        rep.check(
            v.iter().all(|vi| *vi == 0.0 || vi.abs() >= u - THRESHOLD_TOL),
            || format!("trial {t}: thresholding dichotomy violated"),
        );
        rep.check(l1_norm(&v) <= r * (1.0 + 1e-12), || {
            format!("trial {t}: ‖v‖₁ = {} > R = {r}", l1_norm(&v))
        });
        rep.check(
            support_size(&v) <= (2.0 * r / u).floor() as usize,
            || format!("trial {t}: support {} above 2R/U", support_size(&v)),
        );
        rep.check(
            v.iter()
                .zip(input.x())
                .all(|(vi, xi)| vi.abs() <= xi.abs() && (*vi == 0.0 || vi.signum() == xi.signum())),
            || format!("trial {t}: shrinkage or sign violated"),
        );
        if dim <= 2 && t % 10 == 0 {
            let weights = frozen_weights(&input, &v);
            let step = r / 400.0;
            if let Ok(grid) = grid_minimize(&input, &weights, step) {
                let ours = frozen_objective(&input, &weights, &v);
                let best = frozen_objective(&input, &weights, &grid);
                let slack = 1e-6 + step * (r + l1_norm(input.x())) / input.gamma();
                rep.check(ours <= best + slack, || {
                    format!("trial {t}: objective {ours} above grid optimum {best}")
                });
            }
        }
    }
    rep
}

fn smoothing_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut rep = SuiteReport::new("smoothing");
    let root = RngRoot::new(opts.seed);
    for t in 0..opts.smoothing_trials {
        let mut rng = root.stream(StreamId::new(Purpose::Diagnostic, 2, t as u64));
        let dim = rng.random_range(1..=8);
        let q = QuadraticForm::random(dim, 1.0, &mut rng);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        for delta in [1e-3, 1e-2, 1e-1] {
            let vb = check_value_bias(&q, &x, delta, q.lipschitz());
            rep.check(vb.holds(1e-12), || format!("trial {t}, δ = {delta}: value bias {vb:?}"));
            let db = check_directional_bias(&q, &x, &v, delta, q.lipschitz());
            rep.check(db.holds(1e-9), || {
                format!("trial {t}, δ = {delta}: directional bias {db:?}")
            });
        }
        // E_u[(x+δu)ᵀA(x+δu)] - xᵀAx = δ² tr(A)
        let delta = 0.1;
        let bias = smoothing_value_bias(&q, &x, delta);
        let exact = delta * delta * q.trace();
        rep.check((bias - exact).abs() <= 1e-10 * exact.abs().max(1e-3), || {
            format!("trial {t}: bias {bias} vs δ² tr(A) = {exact}")
        });
        let lin = LinearForm {
            coef: v.clone(),
            offset: 0.5,
        };
        let lb = smoothing_value_bias(&lin, &x, 0.1);
        rep.check(lb.abs() <= 1e-12, || format!("trial {t}: linear bias {lb}"));
    }
    rep
}

fn oracle_suite(opts: &VerifyOptions) -> SuiteReport {
    let mut rep = SuiteReport::new("oracle");
    let spec = ProblemSpec::new(4, 1.0, 2.0)
        .and_then(|s| s.with_strong_mu(1.0))
        .and_then(|s| s.with_sigma_sq(1.0))
        .map(|s| s.with_optimum_value(0.0))
        .expect("constants are valid");
    let problem = DeterministicProblem::new(spec.clone(), |x: &[f64]| {
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    });

    let mut session = OracleSession::new(&problem, opts.seed).with_budget(5);
    let mut served = 0;
    for _ in 0..6 {
        if session.evaluate(&[0.0; 4], &()).is_ok() {
            served += 1;
        }
    }
    rep.check(served == 5 && session.queries_used() == 5, || {
        format!("budget 5 served {served} queries")
    });
    rep.check(
        matches!(
            session.evaluate(&[0.0; 4], &()),
            Err(OracleError::BudgetExhausted { budget: 5 })
        ),
        || "exhausted budget did not report BudgetExhausted".into(),
    );

    for m in [1u64, 3, 17] {
        let mut s = OracleSession::new(&problem, opts.seed);
        let cfg = SmoothingConfig::new(1e-3, m).expect("valid config");
        let ok = estimate_gradient(&mut s, &[0.1, 0.0, 0.0, 0.0], &cfg, 1).is_ok();
        rep.check(ok && s.queries_used() == 2 * m, || {
            format!("M = {m}: estimator used {} queries", s.queries_used())
        });
    }

    for variant in [Variant::Convex, Variant::StronglyConvex] {
        for k in [1usize, 4] {
            let params = make_schedule(&spec, variant, k)
                .and_then(|p| p.with_batch_size(7))
                .expect("valid schedule");
            let mut s = OracleSession::new(&problem, opts.seed);
            let first = run(&mut s, &params, &RunOptions::default());
            let mut s2 = OracleSession::new(&problem, opts.seed);
            let second = run(&mut s2, &params, &RunOptions::default());
            match (first, second) {
                (Ok((a, _)), Ok((b, _))) => {
                    rep.check(a.queries_total == 2 * k as u64 * 7, || {
                        format!("{variant:?}, K = {k}: {} queries", a.queries_total)
                    });
                    rep.check(a == b, || format!("{variant:?}, K = {k}: rerun differs"));
                }
                (Err(e), _) | (_, Err(e)) => rep.check(false, || format!("{variant:?}: {e}")),
            }
        }
    }

    let sgf = SgfParams {
        iterations: 25,
        nu: 1e-4,
        gamma: 0.05,
        d_tilde: 1.0,
    };
    let mut s = OracleSession::new(&problem, opts.seed);
    let res = sgf_run(&mut s, &sgf, None);
    rep.check(matches!(&res, Ok(r) if r.queries_total == 50), || {
        format!("SGF with N = 25: {res:?}")
    });
    rep
}
