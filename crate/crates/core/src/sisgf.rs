//! The sparsity-inducing stochastic gradient-free iteration.
//!
//! Each iteration estimates the gradient with `M` Rademacher two-point
//! samples, takes a step of length `γ_k`, and projects with threshold `U_k`.
//! Two outputs are produced: `x^Y` with `P[Y = k] ∝ 1/γ_{k-1}`, and `x^{k*}`,
//! the iterate with the smallest mini-batch mean objective.

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use thiserror::Error;

use crate::oracle::{true_gap, OracleError, OracleSession, ProblemSpec, StochasticObjective};
use crate::projection::{sparsify_project, ProjectionError, ProjectionInput, THRESHOLD_TOL};
use crate::rng::{Purpose, StreamId};
use crate::smoothing::{estimate_gradient, SmoothingConfig, SmoothingError};
use crate::{l1_norm, support_size};

/// Mini-batch constant of the convex schedule as stated with the convex
/// guarantee; the analysis behind it closes with 25.
pub const CONVEX_BATCH_CONSTANT: f64 = 50.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Convex,
    StronglyConvex,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Convex => "SI-SGF",
            Variant::StronglyConvex => "SI-SGF-SC",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("iteration count must be at least 1")]
    NoIterations,
    #[error("strongly convex schedule needs a positive modulus, the problem has mu = 0")]
    InvalidVariant,
    #[error("budget {budget} is below the {needed} queries of a single iteration")]
    BudgetTooSmall { budget: u64, needed: u64 },
    #[error("mini-batch size overflows for K = {0}")]
    BatchOverflow(usize),
    #[error("invalid override: {0}")]
    InvalidOverride(String),
}

#[derive(Debug, Error)]
pub enum SisgfError {
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Smoothing(#[from] SmoothingError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error("initial point violates ‖x‖₁ ≤ R or ‖x‖₀ ≤ 2R/U₁: {0}")]
    BadStart(String),
    #[error("initial point has {got} coordinates, problem has {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("oracle budget exhausted after {} of {planned} iterations", partial.completed())]
    BudgetExhausted {
        partial: IterateTrace,
        planned: usize,
    },
    #[error(transparent)]
    Oracle(OracleError),
}

/// Knobs that change the schedule formulas themselves.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleOptions {
    /// Constant `c` in `M = ⌈c K² max{1,σ²} / L²⌉` for the convex variant.
    pub convex_batch_constant: f64,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            convex_batch_constant: CONVEX_BATCH_CONSTANT,
        }
    }
}

/// Complete hyper-parameter schedule for `K` iterations.
///
/// Per-iteration vectors are indexed `k - 1` for iteration `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub variant: Variant,
    pub iterations: usize,
    pub batch_size: u64,
    pub delta: f64,
    pub lambda: f64,
    pub a: Vec<f64>,
    pub gamma: Vec<f64>,
    pub threshold: Vec<f64>,
    /// Hypotheses of the convergence guarantee that this schedule violates.
    pub warnings: Vec<String>,
}

impl HyperParams {
    pub fn with_batch_size(mut self, batch_size: u64) -> Result<Self, ScheduleError> {
        if batch_size == 0 {
            return Err(ScheduleError::InvalidOverride("batch size must be at least 1".into()));
        }
        self.batch_size = batch_size;
        Ok(self)
    }

    pub fn with_delta(mut self, delta: f64) -> Result<Self, ScheduleError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(ScheduleError::InvalidOverride(format!("delta must be positive, got {delta}")));
        }
        self.delta = delta;
        Ok(self)
    }

    /// Oracle calls of a completed run (two per perturbation sample).
    pub fn planned_queries(&self) -> u64 {
        2 * self.iterations as u64 * self.batch_size
    }
}

/// Mini-batch size `M(K)` of a variant.
pub fn batch_size_for(
    spec: &ProblemSpec,
    variant: Variant,
    iterations: usize,
    opts: &ScheduleOptions,
) -> Result<u64, ScheduleError> {
    let k = iterations as f64;
    let l = spec.lipschitz();
    let var = spec.sigma_sq().max(1.0);
    let raw = match variant {
        Variant::Convex => opts.convex_batch_constant * k * k * var / (l * l),
        Variant::StronglyConvex => {
            if spec.strong_mu() <= 0.0 {
                return Err(ScheduleError::InvalidVariant);
            }
            8.0 * k * k * k * var * spec.strong_mu() / (l * l * l)
        }
    };
    let m = raw.ceil();
    if !(m.is_finite() && m < 9.0e15) {
        return Err(ScheduleError::BatchOverflow(iterations));
    }
    Ok((m as u64).max(1))
}

pub fn make_schedule(
    spec: &ProblemSpec,
    variant: Variant,
    iterations: usize,
) -> Result<HyperParams, ScheduleError> {
    make_schedule_with(spec, variant, iterations, &ScheduleOptions::default())
}

pub fn make_schedule_with(
    spec: &ProblemSpec,
    variant: Variant,
    iterations: usize,
    opts: &ScheduleOptions,
) -> Result<HyperParams, ScheduleError> {
    if iterations == 0 {
        return Err(ScheduleError::NoIterations);
    }
    let k = iterations as f64;
    let l = spec.lipschitz();
    let r = spec.radius();
    let d = spec.dim() as f64;
    let batch_size = batch_size_for(spec, variant, iterations, opts)?;
    let mut warnings = Vec::new();

    let params = match variant {
        Variant::Convex => {
            let gamma = 1.0 / (4.0 * l);
            let a = 1.0 / (8.0 * l);
            let lambda = 8.0 * l / k;
            let threshold = a * lambda;
            let delta = 1.0 / (50.0 * l.max(1.0) * r * k * d.powf(1.5));
            if k < 2.0 * l * l * r {
                warnings.push(format!(
                    "K = {iterations} is below 2L²R = {:.4}; the convex guarantee does not apply",
                    2.0 * l * l * r
                ));
            }
            HyperParams {
                variant,
                iterations,
                batch_size,
                delta,
                lambda,
                a: vec![a; iterations],
                gamma: vec![gamma; iterations],
                threshold: vec![threshold; iterations],
                warnings,
            }
        }
        Variant::StronglyConvex => {
            let mu = spec.strong_mu();
            if mu <= 0.0 {
                return Err(ScheduleError::InvalidVariant);
            }
            let offset = (100.0 * l / mu).ceil();
            let lambda = 100.0 * l / k;
            let gamma: Vec<f64> = (1..=iterations)
                .map(|step| 2.0 / (mu * (step as f64 + offset + 1.0)))
                .collect();
            let a: Vec<f64> = gamma.iter().map(|g| g / 2.0).collect();
            let threshold: Vec<f64> = a.iter().map(|ak| ak * lambda).collect();
            let delta = 1.0 / (k * k * r * d.powf(1.5));
            let min_k = (l.powf(1.5) * r.sqrt() / mu.sqrt()).max(1.0);
            if k < min_k {
                warnings.push(format!(
                    "K = {iterations} is below max(1, L^1.5 R^0.5 / sqrt(mu)) = {min_k:.4}; \
                     the strongly convex guarantee does not apply"
                ));
            }
            if r < 1.0 {
                warnings.push(format!("radius R = {r} is below 1"));
            }
            HyperParams {
                variant,
                iterations,
                batch_size,
                delta,
                lambda,
                a,
                gamma,
                threshold,
                warnings,
            }
        }
    };
    for w in &params.warnings {
        warn!("{w}");
    }
    Ok(params)
}

/// Largest `K` whose run fits the budget: `2·K·M(K) ≤ budget`.
pub fn choose_iterations_for_budget(
    spec: &ProblemSpec,
    variant: Variant,
    budget: u64,
) -> Result<usize, ScheduleError> {
    choose_iterations_with(spec, variant, budget, &ScheduleOptions::default(), 2)
}

/// As [`choose_iterations_for_budget`] with `queries_per_sample` oracle calls
/// per mini-batch element (3 when the minimum-cost output draws fresh samples).
pub fn choose_iterations_with(
    spec: &ProblemSpec,
    variant: Variant,
    budget: u64,
    opts: &ScheduleOptions,
    queries_per_sample: u64,
) -> Result<usize, ScheduleError> {
    let cost = |k: usize| -> Result<u128, ScheduleError> {
        Ok(queries_per_sample as u128 * k as u128 * batch_size_for(spec, variant, k, opts)? as u128)
    };
    let first = cost(1)?;
    if first > budget as u128 {
        return Err(ScheduleError::BudgetTooSmall {
            budget,
            needed: first.min(u64::MAX as u128) as u64,
        });
    }
    // cost is increasing in K: grow geometrically, then bisect
    let fits = |k: usize| -> bool { matches!(cost(k), Ok(c) if c <= budget as u128) };
    let mut lo = 1usize;
    let mut hi = 2usize;
    while fits(hi) {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Recorded trajectory of a run.
///
/// `iterates[k - 1]` is `x^k`; a completed run holds `K + 1` iterates and `K`
/// batch means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterateTrace {
    pub iterates: Vec<Vec<f64>>,
    pub batch_means: Vec<f64>,
    pub cumulative_queries: Vec<u64>,
}

impl IterateTrace {
    /// Iterations with a recorded batch mean.
    pub fn completed(&self) -> usize {
        self.batch_means.len()
    }
}

/// Where the minimum-cost output takes its batch means from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AosSampling {
    /// Reuse `f(x^k, ξ^{k,m})` from the gradient estimate; no extra queries.
    #[default]
    Reuse,
    /// Draw `M` fresh scenarios per iteration; `M` extra queries each.
    Fresh,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOptions {
    pub aos: AosSampling,
    /// Starting point; the zero vector when absent.
    pub x1: Option<Vec<f64>>,
}

/// Outputs of one run. Indices are 1-based iteration numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub x_randomized: Vec<f64>,
    pub x_aos: Vec<f64>,
    pub chosen_y: usize,
    pub chosen_kstar: usize,
    pub gap_randomized: Option<f64>,
    pub gap_aos: Option<f64>,
    pub queries_total: u64,
    pub seed: u64,
}

/// Run `params.iterations` iterations from `opts.x1` (zero by default).
pub fn run<P: StochasticObjective>(
    session: &mut OracleSession<'_, P>,
    params: &HyperParams,
    opts: &RunOptions,
) -> Result<(RunResult, IterateTrace), SisgfError> {
    let spec = session.spec();
    let d = spec.dim();
    let radius = spec.radius();
    let x1 = opts.x1.clone().unwrap_or_else(|| vec![0.0; d]);
    if x1.len() != d {
        return Err(SisgfError::DimensionMismatch {
            got: x1.len(),
            expected: d,
        });
    }
    let max_support = 2.0 * radius / params.threshold[0];
    if l1_norm(&x1) > radius || support_size(&x1) as f64 > max_support {
        return Err(SisgfError::BadStart(format!(
            "‖x‖₁ = {}, ‖x‖₀ = {}, R = {radius}, 2R/U₁ = {max_support}",
            l1_norm(&x1),
            support_size(&x1)
        )));
    }
    let cfg = SmoothingConfig::new(params.delta, params.batch_size)?;
    session.widen_slack(params.delta * d as f64 + 1e-9);

    let start_queries = session.queries_used();
    let mut trace = IterateTrace {
        iterates: Vec::with_capacity(params.iterations + 1),
        batch_means: Vec::with_capacity(params.iterations),
        cumulative_queries: Vec::with_capacity(params.iterations),
    };
    trace.iterates.push(x1);

    let abort = |err: OracleError, trace: IterateTrace| match err {
        OracleError::BudgetExhausted { .. } => SisgfError::BudgetExhausted {
            partial: trace,
            planned: params.iterations,
        },
        other => SisgfError::Oracle(other),
    };

    for k in 1..=params.iterations {
        let x = trace.iterates.last().expect("trace starts with x1").clone();
        let est = match estimate_gradient(session, &x, &cfg, k as u64) {
            Ok(e) => e,
            Err(e) => return Err(abort(e, trace)),
        };
        let batch_mean = match opts.aos {
            AosSampling::Reuse => est.batch_mean_value,
            AosSampling::Fresh => match fresh_batch_mean(session, &x, params.batch_size, k as u64) {
                Ok(v) => v,
                Err(e) => return Err(abort(e, trace)),
            },
        };
        let gamma = params.gamma[k - 1];
        let stepped: Vec<f64> = x.iter().zip(&est.gradient).map(|(xi, gi)| xi - gamma * gi).collect();
        let input = ProjectionInput::new(stepped, params.threshold[k - 1], radius, gamma, params.a[k - 1])?;
        let (next, _) = sparsify_project(&input);
        trace.batch_means.push(batch_mean);
        trace.cumulative_queries.push(session.queries_used() - start_queries);
        trace.iterates.push(next);
    }

    let mut out_rng = session.root().stream(StreamId::new(Purpose::OutputIndex, 0, 0));
    let chosen_y = draw_output_index(&params.gamma, &mut out_rng);
    let chosen_kstar = aos_select(&trace.batch_means);
    let x_randomized = trace.iterates[chosen_y - 1].clone();
    let x_aos = trace.iterates[chosen_kstar - 1].clone();
    let problem = session.problem();
    let result = RunResult {
        gap_randomized: true_gap(problem, &x_randomized),
        gap_aos: true_gap(problem, &x_aos),
        x_randomized,
        x_aos,
        chosen_y,
        chosen_kstar,
        queries_total: session.queries_used() - start_queries,
        seed: session.root().seed(),
    };
    Ok((result, trace))
}

fn fresh_batch_mean<P: StochasticObjective>(
    session: &mut OracleSession<'_, P>,
    x: &[f64],
    batch: u64,
    iteration: u64,
) -> Result<f64, OracleError> {
    let mut total = 0.0;
    for m in 0..batch {
        let scenario = session.sample_scenario(StreamId::new(Purpose::AosScenario, iteration, m));
        total += session.evaluate(x, &scenario)?;
    }
    Ok(total / batch as f64)
}

/// Draw `Y ∈ [1, K]` with `P[Y = k] ∝ 1/γ_{k-1}`, taking `γ₀ := γ₁`.
pub fn draw_output_index<R: Rng + ?Sized>(gamma: &[f64], rng: &mut R) -> usize {
    assert!(!gamma.is_empty(), "need at least one step size");
    let weights = output_weights(gamma);
    let dist = WeightedIndex::new(&weights).expect("step sizes are positive and finite");
    dist.sample(rng) + 1
}

/// Unnormalised weights `1/γ_{k-1}`, `k = 1..K`, with `γ₀ := γ₁`.
pub fn output_weights(gamma: &[f64]) -> Vec<f64> {
    (0..gamma.len())
        .map(|i| 1.0 / gamma[i.saturating_sub(1)])
        .collect()
}

/// Smallest `k` (1-based) attaining the minimum batch mean.
pub fn aos_select(batch_means: &[f64]) -> usize {
    assert!(!batch_means.is_empty(), "empty trace");
    let mut best = 0;
    for (i, v) in batch_means.iter().enumerate() {
        if v < &batch_means[best] {
            best = i;
        }
    }
    best + 1
}

/// Violations of the per-iterate guarantees along a trace.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TrajectoryReport {
    pub checked: usize,
    pub outside_ball: usize,
    pub threshold_violations: usize,
    pub support_violations: usize,
}

impl TrajectoryReport {
    pub fn is_clean(&self) -> bool {
        self.outside_ball == 0 && self.threshold_violations == 0 && self.support_violations == 0
    }
}

/// Check every `x^k`, `k ≥ 2`: `‖x^k‖₁ ≤ R`, each coordinate zero or at least
/// `U_{k-1}` in magnitude, and at most `⌊2R/U_{k-1}⌋` nonzeros.
pub fn check_trajectory(trace: &IterateTrace, params: &HyperParams, radius: f64) -> TrajectoryReport {
    let mut report = TrajectoryReport::default();
    for (idx, x) in trace.iterates.iter().enumerate().skip(1) {
        let u = params.threshold[idx - 1];
        report.checked += 1;
        if l1_norm(x) > radius * (1.0 + 1e-12) {
            report.outside_ball += 1;
        }
        if x.iter().any(|v| *v != 0.0 && v.abs() < u - THRESHOLD_TOL) {
            report.threshold_violations += 1;
        }
        if support_size(x) > (2.0 * radius / u).floor() as usize {
            report.support_violations += 1;
        }
    }
    report
}
