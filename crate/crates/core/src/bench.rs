//! Synthetic stochastic least-squares benchmark and the replication harness.
//!
//! The objective is `F(x) = ½ E[(αᵀx - b)²]` with `α ~ N(0, Σ)` and
//! `b = αᵀx_true + e`, `e ~ N(0, s²)`. `Σ` is the identity except for one
//! contiguous principal block with entries `ρ^{|i-j|}`. The optimum is
//! `x_true`, a 3-sparse vector, and `F(x) - F(x*) = ½ (x - x*)ᵀ Σ (x - x*)`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::baselines::{sgf_default_params, sgf_params_for_iterations, sgf_run, SgfError};
use crate::oracle::{OracleSession, ProblemSpec, SpecError, StochasticObjective};
use crate::rng::{Purpose, RngRoot, StreamId};
use crate::sisgf::{
    self, check_trajectory, choose_iterations_with, make_schedule_with, AosSampling, RunOptions,
    ScheduleError, ScheduleOptions, SisgfError, Variant,
};
use crate::stats::{mean, median, std_dev};
use crate::{dot, l1_norm};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid problem configuration: {0}")]
    Config(String),
    #[error("variance estimate needs at least one sample and one probe point")]
    EmptySample,
    #[error("probe point has l1 norm {norm}, outside the radius {radius}")]
    ProbeOutsideBall { norm: f64, radius: f64 },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("{algorithm} at {key}, replication {replication}: {source}")]
    Sisgf {
        algorithm: String,
        key: u64,
        replication: usize,
        source: SisgfError,
    },
    #[error("{algorithm} at {key}, replication {replication}: {source}")]
    Sgf {
        algorithm: String,
        key: u64,
        replication: usize,
        source: SgfError,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed table row {line}: {message}")]
    Table { line: u64, message: String },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Generator settings for one problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticConfig {
    pub dim: usize,
    pub block_rho: f64,
    pub block_size: usize,
    pub n_nonzeros: usize,
    pub value_range: (f64, f64),
    pub noise_std: f64,
    /// Added to `⌈‖x_true‖₁⌉` to form `R`.
    pub radius_margin: f64,
    /// Samples per probe point when calibrating `σ²`.
    pub calibration_samples: usize,
    /// Use this `σ²` instead of calibrating.
    pub sigma_sq: Option<f64>,
    pub seed: u64,
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            dim: 256,
            block_rho: 0.3,
            block_size: 100,
            n_nonzeros: 3,
            value_range: (2.5, 4.0),
            noise_std: 1.0,
            radius_margin: 0.0,
            calibration_samples: 10_000,
            sigma_sq: None,
            seed: 0,
        }
    }
}

impl QuadraticConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: String| Err(BenchError::Config(m));
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if !(self.block_rho > 0.0 && self.block_rho < 1.0) {
            return fail(format!("block_rho must lie in (0, 1), got {}", self.block_rho));
        }
        if self.block_size == 0 {
            return fail("block_size must be at least 1".into());
        }
        if self.n_nonzeros == 0 || self.n_nonzeros > self.dim {
            return fail(format!("n_nonzeros must lie in [1, {}], got {}", self.dim, self.n_nonzeros));
        }
        let (lo, hi) = self.value_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return fail(format!("value_range must satisfy 0 < lo < hi, got ({lo}, {hi})"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std must be nonnegative, got {}", self.noise_std));
        }
        if !(self.radius_margin >= 0.0 && self.radius_margin.is_finite()) {
            return fail(format!("radius_margin must be nonnegative, got {}", self.radius_margin));
        }
        if let Some(s) = self.sigma_sq {
            if !(s >= 0.0 && s.is_finite()) {
                return fail(format!("sigma_sq must be nonnegative, got {s}"));
            }
        }
        Ok(())
    }
}

/// One draw `ξ = (α, b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticScenario {
    pub alpha: Vec<f64>,
    pub b: f64,
}

#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    spec: ProblemSpec,
    x_true: Vec<f64>,
    block_start: usize,
    block: DMatrix<f64>,
    block_rho: f64,
    noise_std: f64,
}

impl QuadraticProblem {
    pub fn x_true(&self) -> &[f64] {
        &self.x_true
    }

    /// First index and length of the correlated block.
    pub fn block(&self) -> (usize, usize) {
        (self.block_start, self.block.nrows())
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    /// Dense copy of `Σ`.
    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        let d = self.spec.dim();
        let mut s = DMatrix::identity(d, d);
        let (start, len) = self.block();
        s.view_mut((start, start), (len, len)).copy_from(&self.block);
        s
    }

    /// `Σ v` without forming `Σ`.
    pub fn sigma_mul(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        let (start, len) = self.block();
        for i in 0..len {
            out[start + i] = (0..len).map(|j| self.block[(i, j)] * v[start + j]).sum();
        }
        out
    }

    pub fn trace_sigma(&self) -> f64 {
        self.spec.dim() as f64
    }

    /// `½ (x - x*)ᵀ Σ (x - x*)`.
    pub fn analytic_gap(&self, x: &[f64]) -> f64 {
        let r: Vec<f64> = x.iter().zip(&self.x_true).map(|(a, b)| a - b).collect();
        0.5 * dot(&r, &self.sigma_mul(&r)).max(0.0)
    }

    /// `∇f(x, ξ) = (αᵀx - b) α`; calibration only.
    fn stochastic_gradient(&self, x: &[f64], s: &QuadraticScenario) -> Vec<f64> {
        let res = dot(&s.alpha, x) - s.b;
        s.alpha.iter().map(|a| res * a).collect()
    }

    /// Same problem with different declared constants.
    pub fn with_spec(mut self, spec: ProblemSpec) -> Self {
        self.spec = spec;
        self
    }
}

impl StochasticObjective for QuadraticProblem {
    type Scenario = QuadraticScenario;

    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn draw_scenario<R: Rng + ?Sized>(&self, rng: &mut R) -> QuadraticScenario {
        let d = self.spec.dim();
        let mut alpha: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        // stationary AR(1) with unit variance has covariance ρ^{|i-j|}
        let (start, len) = self.block();
        let innovation = (1.0 - self.block_rho * self.block_rho).sqrt();
        for i in start + 1..start + len {
            alpha[i] = self.block_rho * alpha[i - 1] + innovation * alpha[i];
        }
        let e: f64 = StandardNormal.sample(rng);
        let b = dot(&alpha, &self.x_true) + self.noise_std * e;
        QuadraticScenario { alpha, b }
    }

    fn value(&self, x: &[f64], s: &QuadraticScenario) -> f64 {
        let r = dot(&s.alpha, x) - s.b;
        0.5 * r * r
    }

    fn population_value(&self, x: &[f64]) -> Option<f64> {
        Some(self.analytic_gap(x) + 0.5 * self.noise_std * self.noise_std)
    }

    fn analytic_gap(&self, x: &[f64]) -> Option<f64> {
        Some(QuadraticProblem::analytic_gap(self, x))
    }
}

/// Build a problem instance; `σ²` is calibrated unless `cfg.sigma_sq` is set.
pub fn generate_problem(cfg: &QuadraticConfig) -> Result<QuadraticProblem, BenchError> {
    cfg.validate()?;
    let d = cfg.dim;
    let root = RngRoot::new(cfg.seed);
    let mut rng = root.stream(StreamId::new(Purpose::Problem, 0, 0));

    let len = cfg.block_size.min(d);
    let block_start = rng.random_range(0..=d - len);
    let block = DMatrix::from_fn(len, len, |i, j| cfg.block_rho.powi(i.abs_diff(j) as i32));

    let mut x_true = vec![0.0; d];
    let mut support = sample(&mut rng, d, cfg.n_nonzeros).into_vec();
    support.sort_unstable();
    for i in support {
        x_true[i] = rng.random_range(cfg.value_range.0..cfg.value_range.1);
    }

    let eig = block.clone().symmetric_eigenvalues();
    let mut lipschitz = eig.max();
    let mut mu = eig.min();
    if len < d {
        lipschitz = lipschitz.max(1.0);
        mu = mu.min(1.0);
    }
    let radius = l1_norm(&x_true).ceil() + cfg.radius_margin;
    let spec = ProblemSpec::new(d, lipschitz, radius)?
        .with_strong_mu(mu)?
        .with_optimum_value(0.5 * cfg.noise_std * cfg.noise_std)
        .with_optimum_point(x_true.clone())?;
    let mut problem = QuadraticProblem {
        spec,
        x_true,
        block_start,
        block,
        block_rho: cfg.block_rho,
        noise_std: cfg.noise_std,
    };
    let sigma_sq = match cfg.sigma_sq {
        Some(s) => s,
        None => {
            let probes = calibration_probes(&problem, 3, &mut rng);
            estimate_sigma_sq(
                &problem,
                cfg.calibration_samples,
                &probes,
                root.child(Purpose::Calibration, 0),
            )?
        }
    };
    problem.spec = problem.spec.clone().with_sigma_sq(sigma_sq)?;
    Ok(problem)
}

/// `{0, x_true}` plus `n_random` points with `‖x‖₁` uniform on `[0, R]`.
pub fn calibration_probes<R: Rng + ?Sized>(
    problem: &QuadraticProblem,
    n_random: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let d = problem.spec.dim();
    let radius = problem.spec.radius();
    let mut probes = vec![vec![0.0; d], problem.x_true.clone()];
    for _ in 0..n_random {
        let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let scale = rng.random_range(0.0..1.0) * radius / l1_norm(&g).max(f64::MIN_POSITIVE);
        probes.push(g.into_iter().map(|v| v * scale).collect());
    }
    probes
}

/// Largest empirical `E‖∇f(x, ξ) - ∇F(x)‖²` over the probe points.
pub fn estimate_sigma_sq(
    problem: &QuadraticProblem,
    n_samples: usize,
    probes: &[Vec<f64>],
    root: RngRoot,
) -> Result<f64, BenchError> {
    if n_samples == 0 || probes.is_empty() {
        return Err(BenchError::EmptySample);
    }
    let radius = problem.spec.radius();
    let mut worst = 0.0_f64;
    for (p, x) in probes.iter().enumerate() {
        let norm = l1_norm(x);
        if norm > radius * (1.0 + 1e-12) {
            return Err(BenchError::ProbeOutsideBall { norm, radius });
        }
        let r: Vec<f64> = x.iter().zip(&problem.x_true).map(|(a, b)| a - b).collect();
        let full = problem.sigma_mul(&r);
        let mut total = 0.0;
        for i in 0..n_samples {
            let mut rng = root.stream(StreamId::new(Purpose::Calibration, p as u64, i as u64));
            let s = problem.draw_scenario(&mut rng);
            let g = problem.stochastic_gradient(x, &s);
            total += g.iter().zip(&full).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        worst = worst.max(total / n_samples as f64);
    }
    Ok(worst)
}

/// Work allotted to every run in a grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Effort {
    /// Total oracle queries; SI-SGF picks the largest fitting `K`, SGF uses
    /// `N = ⌊budget/2⌋`.
    Budget(u64),
    /// Fixed iteration count for every algorithm.
    Iterations(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sweep {
    Dimensions { dims: Vec<usize>, effort: Effort },
    Budgets { dim: usize, budgets: Vec<u64> },
}

impl Sweep {
    /// `(row key, dimension, effort)` for every grid cell.
    pub fn cells(&self) -> Vec<(u64, usize, Effort)> {
        match self {
            Sweep::Dimensions { dims, effort } => dims.iter().map(|&d| (d as u64, d, *effort)).collect(),
            Sweep::Budgets { dim, budgets } => budgets
                .iter()
                .map(|&b| (b, *dim, Effort::Budget(b)))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AlgorithmKind {
    SiSgf(Variant),
    Sgf,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StartPoint {
    Zero,
    /// `(index, value)` pairs; every other coordinate is zero.
    Sparse(Vec<(usize, f64)>),
}

impl StartPoint {
    fn materialize(&self, dim: usize) -> Result<Vec<f64>, BenchError> {
        let mut x = vec![0.0; dim];
        if let StartPoint::Sparse(entries) = self {
            for &(i, v) in entries {
                if i >= dim {
                    return Err(BenchError::Config(format!("start index {i} outside dimension {dim}")));
                }
                x[i] = v;
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlgorithmSpec {
    pub kind: AlgorithmKind,
    pub batch_size: Option<u64>,
    pub delta: Option<f64>,
    pub aos: AosSampling,
    pub start: StartPoint,
    pub schedule: ScheduleOptions,
}

impl AlgorithmSpec {
    pub fn new(kind: AlgorithmKind) -> Self {
        Self {
            kind,
            batch_size: None,
            delta: None,
            aos: AosSampling::Reuse,
            start: StartPoint::Zero,
            schedule: ScheduleOptions::default(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            AlgorithmKind::SiSgf(v) => v.label(),
            AlgorithmKind::Sgf => "SGF",
        }
    }

    /// Output strategies reported for this algorithm, in column order.
    pub fn strategies(&self) -> [OutputStrategy; 2] {
        match self.kind {
            AlgorithmKind::SiSgf(_) => [OutputStrategy::Randomized, OutputStrategy::Aos],
            AlgorithmKind::Sgf => [OutputStrategy::Randomized, OutputStrategy::Average],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OutputStrategy {
    Randomized,
    Aos,
    Average,
}

impl OutputStrategy {
    pub fn label(self) -> &'static str {
        match self {
            OutputStrategy::Randomized => "R",
            OutputStrategy::Aos => "AOS",
            OutputStrategy::Average => "Avg",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Rayon's global pool. Runs sequentially when the crate is built
    /// without the `parallel` feature, as does `ParallelWith`.
    #[default]
    Parallel,
    /// Dedicated pool with this many threads.
    ParallelWith(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub sweep: Sweep,
    pub algorithms: Vec<AlgorithmSpec>,
    pub replications: usize,
    pub seed: u64,
    /// Template for every instance; `dim` and `seed` are overwritten.
    pub problem: QuadraticConfig,
}

/// One replication of one algorithm in one cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub seed: u64,
    /// Gaps in the order of [`AlgorithmSpec::strategies`].
    pub gaps: [f64; 2],
    pub queries: u64,
    /// Queries a completed run must consume: `2KM` (SI-SGF) or `2N` (SGF).
    pub expected_queries: u64,
    pub iterations: usize,
    pub batch_size: u64,
    pub iterates_checked: usize,
    pub trajectory_violations: usize,
    pub initial_gap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub key: u64,
    pub dim: usize,
    pub effort: Effort,
    pub algorithm: String,
    pub strategies: [OutputStrategy; 2],
    pub outcomes: Vec<ReplicationOutcome>,
}

impl CellResult {
    pub fn gaps(&self, strategy: OutputStrategy) -> Vec<f64> {
        let pos = self
            .strategies
            .iter()
            .position(|s| *s == strategy)
            .unwrap_or_else(|| panic!("{} has no {:?} output", self.algorithm, strategy));
        self.outcomes.iter().map(|o| o.gaps[pos]).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentTable {
    pub seed: u64,
    pub cells: Vec<CellResult>,
}

impl ExperimentTable {
    pub fn cell(&self, key: u64, algorithm: &str) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.key == key && c.algorithm == algorithm)
    }

    /// One summary per cell and output strategy.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            let queries: Vec<f64> = cell.outcomes.iter().map(|o| o.queries as f64).collect();
            for s in cell.strategies {
                let gaps = cell.gaps(s);
                rows.push(SummaryRow {
                    dim_or_budget: cell.key,
                    algorithm: cell.algorithm.clone(),
                    output_strategy: s.label().to_string(),
                    mean_gap: mean(&gaps),
                    sd_gap: std_dev(&gaps),
                    median_gap: median(&gaps),
                    replications: gaps.len(),
                    queries: mean(&queries),
                    seed: self.seed,
                });
            }
        }
        rows
    }
}

fn problem_seed(seed: u64, dim: usize, replication: usize) -> u64 {
    RngRoot::new(seed)
        .child(Purpose::Problem, dim as u64)
        .child(Purpose::Replication, replication as u64)
        .seed()
}

fn run_seed(seed: u64, key: u64, replication: usize, algorithm: usize) -> u64 {
    RngRoot::new(seed)
        .child(Purpose::Scenario, key)
        .child(Purpose::Replication, replication as u64)
        .child(Purpose::Direction, algorithm as u64)
        .seed()
}

/// Run one algorithm on one instance.
pub fn run_algorithm(
    problem: &QuadraticProblem,
    alg: &AlgorithmSpec,
    effort: Effort,
    seed: u64,
) -> Result<ReplicationOutcome, BenchError> {
    let spec = problem.spec();
    let x1 = alg.start.materialize(spec.dim())?;
    let initial_gap = problem.analytic_gap(&x1);
    match alg.kind {
        AlgorithmKind::SiSgf(variant) => {
            let per_sample = match alg.aos {
                AosSampling::Reuse => 2,
                AosSampling::Fresh => 3,
            };
            let (k, budget) = match effort {
                Effort::Iterations(k) => (k, None),
                Effort::Budget(b) => {
                    let k = match alg.batch_size {
                        Some(m) => {
                            let k = b / (per_sample * m);
                            if k == 0 {
                                return Err(ScheduleError::BudgetTooSmall {
                                    budget: b,
                                    needed: per_sample * m,
                                }
                                .into());
                            }
                            k as usize
                        }
                        None => choose_iterations_with(spec, variant, b, &alg.schedule, per_sample)?,
                    };
                    (k, Some(b))
                }
            };
            let mut params = make_schedule_with(spec, variant, k, &alg.schedule)?;
            if let Some(m) = alg.batch_size {
                params = params.with_batch_size(m)?;
            }
            if let Some(delta) = alg.delta {
                params = params.with_delta(delta)?;
            }
            let mut session = OracleSession::new(problem, seed);
            if let Some(b) = budget {
                session = session.with_budget(b);
            }
            let opts = RunOptions {
                aos: alg.aos,
                x1: Some(x1),
            };
            let (res, trace) = sisgf::run(&mut session, &params, &opts).map_err(|source| {
                BenchError::Sisgf {
                    algorithm: alg.label().to_string(),
                    key: 0,
                    replication: 0,
                    source,
                }
            })?;
            let report = check_trajectory(&trace, &params, spec.radius());
            let violations = report.outside_ball + report.threshold_violations + report.support_violations;
            Ok(ReplicationOutcome {
                replication: 0,
                seed,
                gaps: [
                    res.gap_randomized.expect("benchmark gap is analytic"),
                    res.gap_aos.expect("benchmark gap is analytic"),
                ],
                queries: res.queries_total,
                expected_queries: per_sample * k as u64 * params.batch_size,
                iterations: k,
                batch_size: params.batch_size,
                iterates_checked: report.checked,
                trajectory_violations: violations,
                initial_gap,
            })
        }
        AlgorithmKind::Sgf => {
            let params = match effort {
                Effort::Budget(b) => sgf_default_params(spec, b),
                Effort::Iterations(n) => sgf_params_for_iterations(spec, n, spec.radius()),
            };
            let mut session = OracleSession::new(problem, seed);
            if let Effort::Budget(b) = effort {
                session = session.with_budget(b);
            }
            let res = sgf_run(&mut session, &params, Some(&x1)).map_err(|source| {
                BenchError::Sgf {
                    algorithm: alg.label().to_string(),
                    key: 0,
                    replication: 0,
                    source,
                }
            })?;
            Ok(ReplicationOutcome {
                replication: 0,
                seed,
                gaps: [
                    res.gap_randomized.expect("benchmark gap is analytic"),
                    res.gap_average.expect("benchmark gap is analytic"),
                ],
                queries: res.queries_total,
                expected_queries: params.planned_queries(),
                iterations: params.iterations,
                batch_size: 1,
                iterates_checked: 0,
                trajectory_violations: 0,
                initial_gap,
            })
        }
    }
}

struct Job {
    cell: usize,
    algorithm: usize,
    replication: usize,
}

/// Run every cell × algorithm × replication of the plan.
///
/// Problem instances depend on `(seed, dim, replication)` only, so all
/// algorithms and budgets in a column see the same instances. The result is
/// independent of `exec`.
pub fn run_experiment(plan: &ExperimentPlan, exec: Execution) -> Result<ExperimentTable, BenchError> {
    if plan.replications == 0 {
        return Err(BenchError::Config("replications must be at least 1".into()));
    }
    if plan.algorithms.is_empty() {
        return Err(BenchError::Config("no algorithms selected".into()));
    }
    plan.problem.validate()?;
    let cells = plan.sweep.cells();
    if cells.is_empty() {
        return Err(BenchError::Config("empty sweep".into()));
    }

    let mut dims: Vec<usize> = cells.iter().map(|c| c.1).collect();
    dims.sort_unstable();
    dims.dedup();
    let instance_keys: Vec<(usize, usize)> = dims
        .iter()
        .flat_map(|&d| (0..plan.replications).map(move |r| (d, r)))
        .collect();
    let build = |&(dim, rep): &(usize, usize)| {
        let cfg = QuadraticConfig {
            dim,
            seed: problem_seed(plan.seed, dim, rep),
            ..plan.problem.clone()
        };
        generate_problem(&cfg)
    };
    let problems: BTreeMap<(usize, usize), QuadraticProblem> = instance_keys
        .iter()
        .cloned()
        .zip(map_jobs(&instance_keys, exec, build)?)
        .collect();

    let jobs: Vec<Job> = (0..cells.len())
        .flat_map(|cell| {
            (0..plan.algorithms.len()).flat_map(move |algorithm| {
                (0..plan.replications).map(move |replication| Job {
                    cell,
                    algorithm,
                    replication,
                })
            })
        })
        .collect();
    let outcomes = map_jobs(&jobs, exec, |job| {
        let (key, dim, effort) = cells[job.cell];
        let alg = &plan.algorithms[job.algorithm];
        let problem = &problems[&(dim, job.replication)];
        let seed = run_seed(plan.seed, key, job.replication, job.algorithm);
        run_algorithm(problem, alg, effort, seed)
            .map(|mut o| {
                o.replication = job.replication;
                o
            })
            .map_err(|e| with_location(e, key, job.replication))
    })?;

    let mut out = Vec::with_capacity(cells.len() * plan.algorithms.len());
    let mut it = outcomes.into_iter();
    for &(key, dim, effort) in &cells {
        for alg in &plan.algorithms {
            out.push(CellResult {
                key,
                dim,
                effort,
                algorithm: alg.label().to_string(),
                strategies: alg.strategies(),
                outcomes: it.by_ref().take(plan.replications).collect(),
            });
        }
    }
    Ok(ExperimentTable {
        seed: plan.seed,
        cells: out,
    })
}

fn with_location(err: BenchError, at: u64, rep: usize) -> BenchError {
    match err {
        BenchError::Sisgf { algorithm, source, .. } => BenchError::Sisgf {
            algorithm,
            key: at,
            replication: rep,
            source,
        },
        BenchError::Sgf { algorithm, source, .. } => BenchError::Sgf {
            algorithm,
            key: at,
            replication: rep,
            source,
        },
        other => other,
    }
}

/// Order-preserving map over independent jobs.
pub fn map_jobs<T, U, F>(items: &[T], exec: Execution, f: F) -> Result<Vec<U>, BenchError>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U, BenchError> + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            items.par_iter().map(f).collect()
        }
        #[cfg(feature = "parallel")]
        Execution::ParallelWith(jobs) => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| BenchError::Pool(e.to_string()))?;
            pool.install(|| items.par_iter().map(f).collect())
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel | Execution::ParallelWith(_) => items.iter().map(f).collect(),
    }
}

/// Aggregated line of an experiment table.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub dim_or_budget: u64,
    pub algorithm: String,
    pub output_strategy: String,
    pub mean_gap: f64,
    pub sd_gap: f64,
    /// Not serialized; NaN for rows read back from CSV.
    pub median_gap: f64,
    pub replications: usize,
    pub queries: f64,
    pub seed: u64,
}

pub const CSV_HEADER: [&str; 8] = [
    "dim_or_budget",
    "algorithm",
    "output_strategy",
    "mean_gap",
    "sd_gap",
    "replications",
    "queries",
    "seed",
];

/// Six significant digits in C `%.5e` style, e.g. `1.35000e-03`.
pub fn format_sci(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let s = format!("{v:.5e}");
    let (mantissa, exp) = s.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let sign = if exp < 0 { '-' } else { '+' };
    format!("{mantissa}e{sign}{:02}", exp.abs())
}

pub fn write_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.dim_or_budget.to_string(),
            r.algorithm.clone(),
            r.output_strategy.clone(),
            format_sci(r.mean_gap),
            format_sci(r.sd_gap),
            r.replications.to_string(),
            format!("{:.0}", r.queries),
            r.seed.to_string(),
        ])?;
    }
    w.flush().map_err(|e| BenchError::Csv(e.into()))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>, BenchError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize, BenchError> {
        headers.iter().position(|h| h == name).ok_or_else(|| BenchError::Table {
            line: 1,
            message: format!("missing column {name}"),
        })
    };
    let idx: Vec<usize> = CSV_HEADER.iter().map(|h| col(h)).collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(idx[i]).unwrap_or("").trim();
        let bad = |what: &str, v: &str| BenchError::Table {
            line,
            message: format!("cannot parse {what} from {v:?}"),
        };
        let num = |i: usize| -> Result<f64, BenchError> {
            field(i).parse::<f64>().map_err(|_| bad(CSV_HEADER[i], field(i)))
        };
        rows.push(SummaryRow {
            dim_or_budget: field(0).parse().map_err(|_| bad(CSV_HEADER[0], field(0)))?,
            algorithm: field(1).to_string(),
            output_strategy: field(2).to_string(),
            mean_gap: num(3)?,
            sd_gap: num(4)?,
            median_gap: f64::NAN,
            replications: field(5).parse().map_err(|_| bad(CSV_HEADER[5], field(5)))?,
            queries: num(6)?,
            seed: field(7).parse().map_err(|_| bad(CSV_HEADER[7], field(7)))?,
        });
    }
    Ok(rows)
}

/// Rows × (algorithm, strategy) pivot with `mean ± sd` cells, rows sorted by
/// key and columns in first-seen order.
pub fn render_pivot(rows: &[SummaryRow], key_label: &str) -> String {
    let mut columns: Vec<(String, String)> = Vec::new();
    let mut cells: BTreeMap<u64, BTreeMap<usize, String>> = BTreeMap::new();
    for r in rows {
        let col = (r.algorithm.clone(), r.output_strategy.clone());
        let c = match columns.iter().position(|x| *x == col) {
            Some(c) => c,
            None => {
                columns.push(col);
                columns.len() - 1
            }
        };
        cells
            .entry(r.dim_or_budget)
            .or_default()
            .insert(c, format!("{} ± {}", format_sci(r.mean_gap), format_sci(r.sd_gap)));
    }
    let header: Vec<String> = std::iter::once(key_label.to_string())
        .chain(columns.iter().map(|(a, s)| format!("{a}-{s}")))
        .collect();
    let body: Vec<Vec<String>> = cells
        .iter()
        .map(|(k, row)| {
            std::iter::once(k.to_string())
                .chain((0..columns.len()).map(|c| row.get(&c).cloned().unwrap_or_else(|| "-".into())))
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].chars().count())
                .chain(std::iter::once(header[c].chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |r: &[String]| -> String {
        r.iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:>w$}", w = *w))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    for r in &body {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dim: usize, seed: u64) -> QuadraticProblem {
        generate_problem(&QuadraticConfig {
            dim,
            seed,
            calibration_samples: 200,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn instance_shape() {
        let p = small(16, 3);
        assert_eq!(crate::support_size(p.x_true()), 3);
        assert!(p.x_true().iter().all(|v| *v == 0.0 || (2.5..4.0).contains(v)));
        assert_eq!(p.block(), (0, 16));
        assert_eq!(p.analytic_gap(p.x_true()), 0.0);
        let r = p.spec().radius();
        assert!((8.0..=12.0).contains(&r));
        assert!(p.spec().sigma_sq() > 0.0);
    }

    #[test]
    fn sigma_mul_matches_dense() {
        let p = small(130, 9);
        let v: Vec<f64> = (0..130).map(|i| (i as f64 * 0.37).sin()).collect();
        let dense = p.sigma_matrix() * nalgebra::DVector::from_vec(v.clone());
        for (a, b) in p.sigma_mul(&v).iter().zip(dense.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sci_format() {
        assert_eq!(format_sci(1.35e-3), "1.35000e-03");
        assert_eq!(format_sci(14.0), "1.40000e+01");
        assert_eq!(format_sci(0.0), "0.00000e+00");
        assert_eq!(format_sci(6.4e107), "6.40000e+107");
        assert_eq!(format_sci(f64::NAN), "nan");
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            QuadraticConfig { dim: 0, ..Default::default() },
            QuadraticConfig { block_rho: 1.0, ..Default::default() },
            QuadraticConfig { n_nonzeros: 300, ..Default::default() },
            QuadraticConfig { value_range: (4.0, 2.5), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(generate_problem(&cfg), Err(BenchError::Config(_))));
        }
    }

    #[test]
    fn empty_calibration_sample() {
        let p = small(8, 1);
        let root = RngRoot::new(1);
        assert!(matches!(
            estimate_sigma_sq(&p, 0, &[vec![0.0; 8]], root),
            Err(BenchError::EmptySample)
        ));
        assert!(matches!(estimate_sigma_sq(&p, 10, &[], root), Err(BenchError::EmptySample)));
    }

    #[test]
    fn pivot_layout() {
        let row = |k: u64, a: &str, s: &str, m: f64| SummaryRow {
            dim_or_budget: k,
            algorithm: a.into(),
            output_strategy: s.into(),
            mean_gap: m,
            sd_gap: 0.0,
            median_gap: m,
            replications: 1,
            queries: 10.0,
            seed: 0,
        };
        let text = render_pivot(
            &[row(64, "SGF", "Avg", 2.0), row(16, "SGF", "Avg", 1.0), row(16, "SGF", "R", 3.0)],
            "d",
        );
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].contains("SGF-Avg") && lines[0].contains("SGF-R"));
        assert!(lines[1].trim_start().starts_with("16"));
        assert!(lines[2].trim_end().ends_with('-'));
    }
}
