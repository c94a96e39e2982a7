//! Stochastic zeroth-order objectives and metered oracle sessions.

use rand::Rng;
use thiserror::Error;

use crate::l1_norm;
use crate::rng::{RngRoot, StreamId};

/// Errors raised while evaluating the oracle.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("query budget of {budget} evaluations is exhausted")]
    BudgetExhausted { budget: u64 },
    #[error("query point has l1 norm {norm} which exceeds the admissible {limit}")]
    DomainViolation { norm: f64, limit: f64 },
}

/// Invalid problem constants.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("dimension must be at least 1")]
    ZeroDimension,
    #[error("{name} must be positive and finite, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be nonnegative and finite, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("strong convexity modulus {mu} exceeds the Lipschitz constant {lipschitz}")]
    ModulusAboveLipschitz { mu: f64, lipschitz: f64 },
    #[error("optimum has l1 norm {norm}, larger than the radius {radius}")]
    OptimumOutsideBall { norm: f64, radius: f64 },
    #[error("optimum has {got} coordinates, expected {expected}")]
    OptimumDimension { got: usize, expected: usize },
}

/// Constants describing a stochastic black-box objective.
///
/// `lipschitz` bounds the Lipschitz constant of `∇f(·, ξ)`, `sigma_sq` the
/// variance of the stochastic gradient, `radius` the ℓ1 norm of an optimal
/// solution. `strong_mu = 0` means the objective is merely convex.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec {
    dim: usize,
    lipschitz: f64,
    strong_mu: f64,
    sigma_sq: f64,
    radius: f64,
    optimum_value: Option<f64>,
    optimum_point: Option<Vec<f64>>,
}

impl ProblemSpec {
    pub fn new(dim: usize, lipschitz: f64, radius: f64) -> Result<Self, SpecError> {
        if dim == 0 {
            return Err(SpecError::ZeroDimension);
        }
        positive("lipschitz", lipschitz)?;
        positive("radius", radius)?;
        Ok(Self {
            dim,
            lipschitz,
            strong_mu: 0.0,
            sigma_sq: 0.0,
            radius,
            optimum_value: None,
            optimum_point: None,
        })
    }

    pub fn with_strong_mu(mut self, mu: f64) -> Result<Self, SpecError> {
        nonnegative("strong_mu", mu)?;
        if mu > self.lipschitz {
            return Err(SpecError::ModulusAboveLipschitz {
                mu,
                lipschitz: self.lipschitz,
            });
        }
        self.strong_mu = mu;
        Ok(self)
    }

    pub fn with_sigma_sq(mut self, sigma_sq: f64) -> Result<Self, SpecError> {
        nonnegative("sigma_sq", sigma_sq)?;
        self.sigma_sq = sigma_sq;
        Ok(self)
    }

    pub fn with_lipschitz(mut self, lipschitz: f64) -> Result<Self, SpecError> {
        positive("lipschitz", lipschitz)?;
        if self.strong_mu > lipschitz {
            return Err(SpecError::ModulusAboveLipschitz {
                mu: self.strong_mu,
                lipschitz,
            });
        }
        self.lipschitz = lipschitz;
        Ok(self)
    }

    pub fn with_radius(mut self, radius: f64) -> Result<Self, SpecError> {
        positive("radius", radius)?;
        if let Some(p) = &self.optimum_point {
            let norm = l1_norm(p);
            if norm > radius {
                return Err(SpecError::OptimumOutsideBall { norm, radius });
            }
        }
        self.radius = radius;
        Ok(self)
    }

    pub fn with_optimum_value(mut self, value: f64) -> Self {
        self.optimum_value = Some(value);
        self
    }

    pub fn with_optimum_point(mut self, point: Vec<f64>) -> Result<Self, SpecError> {
        if point.len() != self.dim {
            return Err(SpecError::OptimumDimension {
                got: point.len(),
                expected: self.dim,
            });
        }
        let norm = l1_norm(&point);
        if norm > self.radius {
            return Err(SpecError::OptimumOutsideBall {
                norm,
                radius: self.radius,
            });
        }
        self.optimum_point = Some(point);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn strong_mu(&self) -> f64 {
        self.strong_mu
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn optimum_value(&self) -> Option<f64> {
        self.optimum_value
    }

    pub fn optimum_point(&self) -> Option<&[f64]> {
        self.optimum_point.as_deref()
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), SpecError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SpecError::NotPositive { name, value })
    }
}

fn nonnegative(name: &'static str, value: f64) -> Result<(), SpecError> {
    if value >= 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SpecError::Negative { name, value })
    }
}

/// A stochastic objective `f(x, ξ)` with a sampler for `ξ`.
pub trait StochasticObjective: Sync {
    type Scenario: Clone + Send;

    fn spec(&self) -> &ProblemSpec;

    fn draw_scenario<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Scenario;

    fn value(&self, x: &[f64], scenario: &Self::Scenario) -> f64;

    /// `F(x) = E[f(x, ξ)]` when it is known in closed form.
    fn population_value(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// `F(x) - F(x*)` when it is known in closed form.
    fn analytic_gap(&self, x: &[f64]) -> Option<f64> {
        let opt = self.spec().optimum_value()?;
        self.population_value(x).map(|v| v - opt)
    }
}

/// Sub-optimality gap `F(x) - F(x*)`, or `None` for a pure black box.
pub fn true_gap<P: StochasticObjective>(problem: &P, x: &[f64]) -> Option<f64> {
    problem.analytic_gap(x)
}

/// Which points the oracle accepts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    /// Points with `‖x‖₁ ≤ R + slack`.
    L1Ball { slack: f64 },
    Unbounded,
}

/// Metered handle over a problem. Owned by a single run.
#[derive(Debug)]
pub struct OracleSession<'p, P: StochasticObjective> {
    problem: &'p P,
    root: RngRoot,
    queries_used: u64,
    budget: Option<u64>,
    domain: Domain,
}

impl<'p, P: StochasticObjective> OracleSession<'p, P> {
    pub fn new(problem: &'p P, seed: u64) -> Self {
        Self::with_root(problem, RngRoot::new(seed))
    }

    pub fn with_root(problem: &'p P, root: RngRoot) -> Self {
        Self {
            problem,
            root,
            queries_used: 0,
            budget: None,
            domain: Domain::L1Ball { slack: 1e-9 },
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Raise the ℓ1 slack to at least `slack`. No effect on an unbounded domain.
    pub fn widen_slack(&mut self, slack: f64) {
        if let Domain::L1Ball { slack: current } = &mut self.domain {
            if slack > *current {
                *current = slack;
            }
        }
    }

    pub fn set_domain(&mut self, domain: Domain) {
        self.domain = domain;
    }

    pub fn problem(&self) -> &'p P {
        self.problem
    }

    pub fn spec(&self) -> &'p ProblemSpec {
        self.problem.spec()
    }

    pub fn root(&self) -> RngRoot {
        self.root
    }

    pub fn queries_used(&self) -> u64 {
        self.queries_used
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Queries left before the budget is hit; `None` when unlimited.
    pub fn remaining(&self) -> Option<u64> {
        self.budget.map(|b| b - self.queries_used)
    }

    /// Draw ξ from the stream keyed by `id`. Free of charge; only evaluations
    /// are metered.
    pub fn sample_scenario(&self, id: StreamId) -> P::Scenario {
        let mut rng = self.root.stream(id);
        self.problem.draw_scenario(&mut rng)
    }

    /// One zeroth-order query `f(x, ξ)`.
    pub fn evaluate(&mut self, x: &[f64], scenario: &P::Scenario) -> Result<f64, OracleError> {
        if let Some(budget) = self.budget {
            if self.queries_used >= budget {
                return Err(OracleError::BudgetExhausted { budget });
            }
        }
        if let Domain::L1Ball { slack } = self.domain {
            let norm = l1_norm(x);
            let limit = self.problem.spec().radius() + slack;
            if norm > limit {
                return Err(OracleError::DomainViolation { norm, limit });
            }
        }
        self.queries_used += 1;
        Ok(self.problem.value(x, scenario))
    }
}

/// Deterministic objective `f(x)` viewed as a stochastic one with a trivial
/// scenario.
pub struct DeterministicProblem<F> {
    spec: ProblemSpec,
    f: F,
    population: bool,
}

impl<F> DeterministicProblem<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    pub fn new(spec: ProblemSpec, f: F) -> Self {
        Self {
            spec,
            f,
            population: true,
        }
    }

    /// Hide the closed form so that [`true_gap`] reports `None`.
    pub fn black_box(mut self) -> Self {
        self.population = false;
        self
    }
}

impl<F> StochasticObjective for DeterministicProblem<F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    type Scenario = ();

    fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    fn draw_scenario<R: Rng + ?Sized>(&self, _rng: &mut R) -> Self::Scenario {}

    fn value(&self, x: &[f64], _scenario: &()) -> f64 {
        (self.f)(x)
    }

    fn population_value(&self, x: &[f64]) -> Option<f64> {
        self.population.then(|| (self.f)(x))
    }
}
