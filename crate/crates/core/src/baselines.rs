//! Gaussian-smoothing stochastic gradient-free method (SGF), the comparison
//! baseline.
//!
//! One Gaussian direction and one scenario per iteration:
//! `x ← x - γ · (f(x + νu, ξ) - f(x, ξ)) / ν · u`. The run reports a uniformly
//! drawn iterate (SGF-R) and the average of all iterates (SGF-Avg).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::oracle::{true_gap, Domain, OracleError, OracleSession, ProblemSpec, StochasticObjective};
use crate::rng::{Purpose, StreamId};

/// Smallest smoothing radius handed out by [`sgf_default_params`].
pub const MIN_NU: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SgfError {
    #[error("SGF parameters must be positive: {0}")]
    InvalidParams(String),
    #[error("initial point has {got} coordinates, problem has {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("oracle budget exhausted after {completed} of {planned} iterations")]
    BudgetExhausted { completed: usize, planned: usize },
    #[error(transparent)]
    Oracle(OracleError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgfParams {
    pub iterations: usize,
    pub nu: f64,
    pub gamma: f64,
    /// Guess of `‖x¹ - x*‖` entering the step rule.
    pub d_tilde: f64,
}

impl SgfParams {
    pub fn validate(&self) -> Result<(), SgfError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if self.iterations == 0 || !ok(self.nu) || !ok(self.gamma) || !ok(self.d_tilde) {
            return Err(SgfError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn planned_queries(&self) -> u64 {
        2 * self.iterations as u64
    }
}

/// Step rule of the randomized stochastic gradient-free method for a budget
/// of `budget` queries, with `D̃ = R`.
pub fn sgf_default_params(spec: &ProblemSpec, budget: u64) -> SgfParams {
    sgf_params_for_iterations(spec, (budget / 2).max(1) as usize, spec.radius())
}

pub fn sgf_params_for_iterations(spec: &ProblemSpec, iterations: usize, d_tilde: f64) -> SgfParams {
    let n = iterations as f64;
    let d = spec.dim() as f64;
    let l = spec.lipschitz();
    let sigma = spec.sigma_sq().sqrt();
    let curvature_cap = 1.0 / (4.0 * l * (d + 4.0).sqrt());
    let noise_cap = if sigma > 0.0 {
        d_tilde / (sigma * n.sqrt())
    } else {
        f64::INFINITY
    };
    let gamma = curvature_cap.min(noise_cap) / (d + 4.0).sqrt();
    let nu = (d_tilde / ((d + 4.0) * n.sqrt()))
        .min(1.0 / (d.sqrt() * n))
        .max(MIN_NU);
    SgfParams {
        iterations,
        nu,
        gamma,
        d_tilde,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgfResult {
    pub x_randomized: Vec<f64>,
    pub x_average: Vec<f64>,
    pub x_last: Vec<f64>,
    /// 1-based index of the randomized output.
    pub chosen_index: usize,
    pub gap_randomized: Option<f64>,
    pub gap_average: Option<f64>,
    pub queries_total: u64,
    pub seed: u64,
}

/// Run `params.iterations` SGF steps. The oracle domain is lifted: the method
/// is unconstrained.
///
/// The outputs range over the `N` points at which the estimator is evaluated,
/// `x¹, …, x^N`.
pub fn sgf_run<P: StochasticObjective>(
    session: &mut OracleSession<'_, P>,
    params: &SgfParams,
    x1: Option<&[f64]>,
) -> Result<SgfResult, SgfError> {
    params.validate()?;
    let d = session.spec().dim();
    let mut x = x1.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; d]);
    if x.len() != d {
        return Err(SgfError::DimensionMismatch {
            got: x.len(),
            expected: d,
        });
    }
    session.set_domain(Domain::Unbounded);
    let root = session.root();
    let start = session.queries_used();
    let n = params.iterations;
    let chosen_index = root
        .stream(StreamId::new(Purpose::OutputIndex, 0, 0))
        .random_range(1..=n);

    let mut sum = vec![0.0; d];
    let mut chosen = Vec::new();
    let mut u = vec![0.0; d];
    let mut shifted = vec![0.0; d];
    for k in 1..=n {
        if k == chosen_index {
            chosen = x.clone();
        }
        for (s, xi) in sum.iter_mut().zip(&x) {
            *s += xi;
        }
        let scenario = session.sample_scenario(StreamId::new(Purpose::Scenario, k as u64, 0));
        let mut dir = root.stream(StreamId::new(Purpose::Direction, k as u64, 0));
        for v in u.iter_mut() {
            *v = StandardNormal.sample(&mut dir);
        }
        for ((s, xi), ui) in shifted.iter_mut().zip(&x).zip(&u) {
            *s = xi + params.nu * ui;
        }
        let eval = |s: &mut OracleSession<'_, P>, p: &[f64]| {
            s.evaluate(p, &scenario).map_err(|e| match e {
                OracleError::BudgetExhausted { .. } => SgfError::BudgetExhausted {
                    completed: k - 1,
                    planned: n,
                },
                other => SgfError::Oracle(other),
            })
        };
        let f_shift = eval(session, &shifted)?;
        let f_base = eval(session, &x)?;
        let step = params.gamma * (f_shift - f_base) / params.nu;
        for (xi, ui) in x.iter_mut().zip(&u) {
            *xi -= step * ui;
        }
    }
    let x_average: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let problem = session.problem();
    Ok(SgfResult {
        gap_randomized: true_gap(problem, &chosen),
        gap_average: true_gap(problem, &x_average),
        x_randomized: chosen,
        x_average,
        x_last: x,
        chosen_index,
        queries_total: session.queries_used() - start,
        seed: root.seed(),
    })
}
