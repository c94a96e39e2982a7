//! Rademacher two-point gradient estimation.
//!
//! For a direction `u` uniform on `{-1, 1}^d` the estimator
//! `(f(x + δu, ξ) - f(x, ξ)) / δ · u` is unbiased for the gradient of the
//! smoothed function `E_u f(x + δu, ξ)`. The `check_*` functions enumerate all
//! `2^d` sign patterns (Monte Carlo above 20 coordinates) to measure how far
//! the smoothed quantities drift from the exact ones.

use rand::RngCore;
use thiserror::Error;

use crate::oracle::{OracleError, OracleSession, StochasticObjective};
use crate::rng::{Purpose, RngRoot, StreamId};
use crate::stats::CompensatedSum;
use crate::testfns::SmoothFunction;

/// Largest dimension for which the diagnostics enumerate every sign pattern.
pub const ENUMERATION_LIMIT: usize = 20;

const MONTE_CARLO_SAMPLES: usize = 1 << 18;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SmoothingError {
    #[error("smoothing radius must be positive and finite, got {0}")]
    BadDelta(f64),
    #[error("mini-batch size must be at least 1")]
    EmptyBatch,
}

/// Perturbation radius `δ` and mini-batch size `M`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingConfig {
    delta: f64,
    batch_size: u64,
}

impl SmoothingConfig {
    pub fn new(delta: f64, batch_size: u64) -> Result<Self, SmoothingError> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(SmoothingError::BadDelta(delta));
        }
        if batch_size == 0 {
            return Err(SmoothingError::EmptyBatch);
        }
        Ok(Self { delta, batch_size })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn batch_size(&self) -> u64 {
        self.batch_size
    }
}

/// Fill `out` with independent uniform signs.
pub fn fill_rademacher<R: RngCore + ?Sized>(out: &mut [f64], rng: &mut R) {
    for chunk in out.chunks_mut(64) {
        let bits = rng.next_u64();
        for (j, v) in chunk.iter_mut().enumerate() {
            *v = if (bits >> j) & 1 == 1 { 1.0 } else { -1.0 };
        }
    }
}

pub fn rademacher_direction<R: RngCore + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    let mut u = vec![0.0; dim];
    fill_rademacher(&mut u, rng);
    u
}

/// Output of one mini-batch gradient estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Vec<f64>,
    /// `M⁻¹ Σ_m f(x, ξ_m)` from the same samples.
    pub batch_mean_value: f64,
}

/// Mini-batch estimator at `x` for iteration `iteration`.
///
/// Sample `m` uses scenario stream `(Scenario, iteration, m)` and direction
/// stream `(Direction, iteration, m)`; both evaluations of a sample share the
/// scenario. Costs exactly `2M` queries.
pub fn estimate_gradient<P: StochasticObjective>(
    session: &mut OracleSession<'_, P>,
    x: &[f64],
    cfg: &SmoothingConfig,
    iteration: u64,
) -> Result<GradientEstimate, OracleError> {
    let d = x.len();
    let root = session.root();
    let mut grad = vec![0.0; d];
    let mut u = vec![0.0; d];
    let mut shifted = vec![0.0; d];
    let mut value_sum = 0.0;
    for m in 0..cfg.batch_size {
        let scenario = session.sample_scenario(StreamId::new(Purpose::Scenario, iteration, m));
        fill_rademacher(&mut u, &mut root.stream(StreamId::new(Purpose::Direction, iteration, m)));
        for ((s, xi), ui) in shifted.iter_mut().zip(x).zip(&u) {
            *s = xi + cfg.delta * ui;
        }
        let f_shift = session.evaluate(&shifted, &scenario)?;
        let f_base = session.evaluate(x, &scenario)?;
        value_sum += f_base;
        let q = (f_shift - f_base) / cfg.delta;
        for (g, ui) in grad.iter_mut().zip(&u) {
            *g += q * ui;
        }
    }
    let inv = 1.0 / cfg.batch_size as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(GradientEstimate {
        gradient: grad,
        batch_mean_value: value_sum * inv,
    })
}

/// Observed deviation next to its theoretical bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundCheck {
    pub observed: f64,
    pub bound: f64,
}

impl BoundCheck {
    pub fn holds(&self, slack: f64) -> bool {
        self.observed <= self.bound + slack
    }
}

/// Visit every `u ∈ {-1,1}^d` (or a fixed Monte Carlo sample above the
/// enumeration limit) and return the compensated mean of the `width`-vector
/// `term(u)`.
fn expect_over_signs<T>(dim: usize, width: usize, mut term: T) -> Vec<f64>
where
    T: FnMut(&[f64], &mut [f64]),
{
    let mut u = vec![0.0; dim];
    let mut buf = vec![0.0; width];
    let mut acc = vec![CompensatedSum::default(); width];
    let mut visit = |u: &[f64]| {
        term(u, &mut buf);
        for (a, v) in acc.iter_mut().zip(&buf) {
            a.add(*v);
        }
    };
    let count = if dim <= ENUMERATION_LIMIT {
        let n = 1usize << dim;
        for mask in 0..n {
            for (i, ui) in u.iter_mut().enumerate() {
                *ui = if (mask >> i) & 1 == 1 { -1.0 } else { 1.0 };
            }
            visit(&u);
        }
        n
    } else {
        let mut rng = RngRoot::new(0x5eed).stream(StreamId::new(Purpose::Diagnostic, dim as u64, 0));
        for _ in 0..MONTE_CARLO_SAMPLES {
            fill_rademacher(&mut u, &mut rng);
            visit(&u);
        }
        MONTE_CARLO_SAMPLES
    };
    acc.iter().map(|a| a.total() / count as f64).collect()
}

/// `E_u[f(x + δu)] - f(x)`, accumulated as a mean of differences.
pub fn smoothing_value_bias<F: SmoothFunction + ?Sized>(f: &F, x: &[f64], delta: f64) -> f64 {
    let base = f.value(x);
    let mut shifted = vec![0.0; x.len()];
    expect_over_signs(x.len(), 1, |u, out| {
        for ((s, xi), ui) in shifted.iter_mut().zip(x).zip(u) {
            *s = xi + delta * ui;
        }
        out[0] = f.value(&shifted) - base;
    })[0]
}

/// `E_u[(f(x + δu) - f(x)) / δ · u]`, the mean of the single-sample estimator.
pub fn expected_estimator<F: SmoothFunction + ?Sized>(f: &F, x: &[f64], delta: f64) -> Vec<f64> {
    let d = x.len();
    let base = f.value(x);
    let mut shifted = vec![0.0; d];
    expect_over_signs(d, d, |u, out| {
        for ((s, xi), ui) in shifted.iter_mut().zip(x).zip(u) {
            *s = xi + delta * ui;
        }
        let q = (f.value(&shifted) - base) / delta;
        for (o, ui) in out.iter_mut().zip(u) {
            *o = q * ui;
        }
    })
}

/// `|E_u f(x + δu) - f(x)|` against `(L/2)·d·δ²`.
pub fn check_value_bias<F: SmoothFunction + ?Sized>(
    f: &F,
    x: &[f64],
    delta: f64,
    lipschitz: f64,
) -> BoundCheck {
    BoundCheck {
        observed: smoothing_value_bias(f, x, delta).abs(),
        bound: 0.5 * lipschitz * x.len() as f64 * delta * delta,
    }
}

/// `|E_u[(f(x+δu) - f(x))/δ · uᵀv] - ⟨∇f(x), v⟩|` against `(L δ d^{3/2}/2)‖v‖`.
pub fn check_directional_bias<F: SmoothFunction + ?Sized>(
    f: &F,
    x: &[f64],
    v: &[f64],
    delta: f64,
    lipschitz: f64,
) -> BoundCheck {
    let d = x.len();
    let base = f.value(x);
    let mut shifted = vec![0.0; d];
    let smoothed = expect_over_signs(d, 1, |u, out| {
        for ((s, xi), ui) in shifted.iter_mut().zip(x).zip(u) {
            *s = xi + delta * ui;
        }
        out[0] = (f.value(&shifted) - base) / delta * crate::dot(u, v);
    })[0];
    let exact = crate::dot(&f.gradient(x), v);
    BoundCheck {
        observed: (smoothed - exact).abs(),
        bound: 0.5 * lipschitz * delta * (d as f64).powf(1.5) * crate::l2_norm(v),
    }
}
