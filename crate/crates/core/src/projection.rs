//! Hard-threshold-then-ℓ1 projection.
//!
//! Given a point `x`, a threshold `U` and a radius `R`, the signed vector is
//! lifted to `x̃ = [x₊; x₋] ∈ R^{2d}_+`, entries below `U` are zeroed and, if
//! the survivors still have ℓ1 mass above `R`, the top `ρ` entries are shifted
//! down by a common `τ < 0` so that they land exactly on the ℓ1 sphere. When
//! the top `ρ` entries already fit inside the ball the shift is clamped to 0
//! and they are kept as they are. Every output coordinate is either zero or at
//! least `U` in magnitude.
//!
//! With `a λ = U` and `γ ≥ 2a`, the output is a KKT point of
//! `min_{z ≥ 0, 1ᵀz ≤ R} ‖z - x̃‖²/(2γ) + Σ P_λ(z_i)` where
//! `P_λ(θ) = ∫₀^θ [aλ - t]₊/a dt`. [`sparsify_project`] returns the
//! multipliers `(β, μ)` alongside the point and [`verify_kkt`] checks them.

use thiserror::Error;

/// Slack applied to every comparison against the threshold `U`.
pub const THRESHOLD_TOL: f64 = 1e-12;

/// Largest dimension accepted by the grid reference.
pub const GRID_DIM_LIMIT: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("invalid projection input: {0}")]
    InvalidInput(String),
    #[error("grid reference supports at most {GRID_DIM_LIMIT} coordinates, got {0}")]
    DimensionTooLarge(usize),
}

/// Point to project together with the threshold, radius and the step-size
/// pair `(γ, a)` that defines the penalty weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionInput {
    x: Vec<f64>,
    threshold: f64,
    radius: f64,
    gamma: f64,
    a: f64,
}

impl ProjectionInput {
    pub fn new(
        x: Vec<f64>,
        threshold: f64,
        radius: f64,
        gamma: f64,
        a: f64,
    ) -> Result<Self, ProjectionError> {
        let bad = |msg: String| Err(ProjectionError::InvalidInput(msg));
        if !(threshold > 0.0 && threshold.is_finite()) {
            return bad(format!("threshold U must be positive, got {threshold}"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return bad(format!("radius R must be positive, got {radius}"));
        }
        if !(a > 0.0 && a.is_finite()) {
            return bad(format!("a must be positive, got {a}"));
        }
        if !(gamma.is_finite() && gamma >= 2.0 * a) {
            return bad(format!("step gamma = {gamma} must be at least 2a = {}", 2.0 * a));
        }
        if radius < threshold {
            return bad(format!("radius R = {radius} is smaller than the threshold U = {threshold}"));
        }
        if x.is_empty() {
            return bad("empty point".to_string());
        }
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return bad(format!("non-finite coordinate {v}"));
        }
        Ok(Self {
            x,
            threshold,
            radius,
            gamma,
            a,
        })
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// `λ = U / a`.
    pub fn lambda(&self) -> f64 {
        self.threshold / self.a
    }

    fn lifted(&self, j: usize) -> f64 {
        let d = self.x.len();
        if j < d {
            self.x[j].max(0.0)
        } else {
            (-self.x[j - d]).max(0.0)
        }
    }
}

/// KKT multipliers of the lifted problem.
///
/// `tau` and `rho` are present only in the rescaling branch; `tau` is 0 when
/// the shift was clamped.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionCertificate {
    pub beta: f64,
    pub mu: Vec<f64>,
    pub tau: Option<f64>,
    pub rho: Option<usize>,
    pub max_kkt_residual: f64,
}

/// Project `input.x`; see the module docs.
pub fn sparsify_project(input: &ProjectionInput) -> (Vec<f64>, ProjectionCertificate) {
    let d = input.x.len();
    let u = input.threshold;
    let r = input.radius;
    let gamma = input.gamma;
    let lambda = input.lambda();

    // lifted indices with positive mass, sorted by magnitude descending;
    // the sort is stable so ties keep ascending index order
    let mut order: Vec<usize> = (0..2 * d).filter(|&j| input.lifted(j) > 0.0).collect();
    order.sort_by(|&i, &j| input.lifted(j).total_cmp(&input.lifted(i)));

    let survives = |v: f64| v >= u - THRESHOLD_TOL;
    let kept_mass: f64 = order
        .iter()
        .map(|&j| input.lifted(j))
        .filter(|&v| survives(v))
        .sum();

    let mut lifted_v = vec![0.0; 2 * d];
    let mut mu = vec![0.0; 2 * d];
    let (beta, tau, rho);

    if kept_mass <= r {
        for j in 0..2 * d {
            let xj = input.lifted(j);
            if survives(xj) {
                lifted_v[j] = xj;
            } else {
                mu[j] = lambda - xj / gamma;
            }
        }
        beta = 0.0;
        tau = None;
        rho = None;
    } else {
        let mut prefix = 0.0;
        let mut best: Option<(usize, f64)> = None;
        for (pos, &j) in order.iter().enumerate() {
            let xj = input.lifted(j);
            prefix += xj;
            let count = (pos + 1) as f64;
            if survives(xj + (r - prefix) / count) {
                best = Some((pos + 1, prefix));
            }
        }
        // j = 1 always qualifies because R >= U
        let (top, top_mass) = best.expect("R >= U guarantees a qualifying prefix");
        // The literal shift is positive when the top ρ survivors carry less
        // than R; shifting up would break β ≥ 0 and shrinkage. Keeping them
        // unshifted is a KKT point: the next entry is then below 2U ≤ γλ.
        let shift = ((r - top_mass) / top as f64).min(0.0);
        for &j in &order[..top] {
            lifted_v[j] = input.lifted(j) + shift;
        }
        for j in 0..2 * d {
            if lifted_v[j] == 0.0 {
                mu[j] = lambda - (input.lifted(j) + shift) / gamma;
            }
        }
        beta = -shift / gamma;
        tau = Some(shift);
        rho = Some(top);
    }

    let v: Vec<f64> = (0..d).map(|i| lifted_v[i] - lifted_v[d + i]).collect();
    let mut cert = ProjectionCertificate {
        beta,
        mu,
        tau,
        rho,
        max_kkt_residual: 0.0,
    };
    cert.max_kkt_residual = verify_kkt(input, &v, &cert);
    (v, cert)
}

/// Convenience wrapper validating the input first.
pub fn project(
    x: &[f64],
    threshold: f64,
    radius: f64,
    gamma: f64,
    a: f64,
) -> Result<Vec<f64>, ProjectionError> {
    let input = ProjectionInput::new(x.to_vec(), threshold, radius, gamma, a)?;
    Ok(sparsify_project(&input).0)
}

/// Largest absolute violation of stationarity, primal and dual feasibility
/// and complementary slackness in the lifted `2d` form.
pub fn verify_kkt(input: &ProjectionInput, v: &[f64], cert: &ProjectionCertificate) -> f64 {
    let d = input.x.len();
    assert_eq!(v.len(), d, "point and input dimensions differ");
    assert_eq!(cert.mu.len(), 2 * d, "certificate must carry 2d multipliers");
    let gamma = input.gamma;
    let a = input.a;
    let al = input.threshold;
    let beta = cert.beta;

    let mut worst: f64 = 0.0;
    let mut mass = 0.0;
    for j in 0..2 * d {
        let vj = if j < d { v[j].max(0.0) } else { (-v[j - d]).max(0.0) };
        let xj = input.lifted(j);
        let mj = cert.mu[j];
        mass += vj;
        let stationarity = (vj - xj) / gamma + (al - vj).max(0.0) / a + beta - mj;
        worst = worst
            .max(stationarity.abs())
            .max((-vj).max(0.0))
            .max((-mj).max(0.0))
            .max((mj * vj).abs());
    }
    let excess = mass - input.radius;
    worst.max((-beta).max(0.0)).max(excess.max(0.0)).max((beta * excess).abs())
}

/// Penalty weights `[aλ - |v_i|]₊ / a` frozen at `v`.
pub fn frozen_weights(input: &ProjectionInput, v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|vi| (input.threshold - vi.abs()).max(0.0) / input.a)
        .collect()
}

/// `‖c - x‖²/(2γ) + Σ w_i |c_i|`.
pub fn frozen_objective(input: &ProjectionInput, weights: &[f64], candidate: &[f64]) -> f64 {
    candidate
        .iter()
        .zip(&input.x)
        .zip(weights)
        .map(|((c, x), w)| (c - x) * (c - x) / (2.0 * input.gamma) + w * c.abs())
        .sum()
}

/// Exact minimiser of the frozen-weight objective over the grid
/// `{step·k : k ∈ Z^d, Σ|k_i|·step ≤ R}`.
///
/// The objective is separable, so the search runs as a min-plus convolution
/// over the ℓ1 budget measured in grid units; the result is the same point an
/// exhaustive scan of the grid would return.
pub fn grid_minimize(
    input: &ProjectionInput,
    weights: &[f64],
    step: f64,
) -> Result<Vec<f64>, ProjectionError> {
    let d = input.x.len();
    if d > GRID_DIM_LIMIT {
        return Err(ProjectionError::DimensionTooLarge(d));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(ProjectionError::InvalidInput(format!("grid step must be positive, got {step}")));
    }
    let units = (input.radius / step + 1e-9).floor() as usize;
    let coord = |i: usize, s: f64| {
        let diff = s - input.x[i];
        diff * diff / (2.0 * input.gamma) + weights[i] * s.abs()
    };
    // per coordinate: best value and sign at each magnitude t·step
    let mut tables: Vec<Vec<(f64, f64)>> = Vec::with_capacity(d);
    for i in 0..d {
        tables.push(
            (0..=units)
                .map(|t| {
                    let s = t as f64 * step;
                    let (pos, neg) = (coord(i, s), coord(i, -s));
                    if pos <= neg {
                        (pos, 1.0)
                    } else {
                        (neg, -1.0)
                    }
                })
                .collect(),
        );
    }

    // cost[s]: best objective of the first i coordinates using exactly s units
    let mut cost: Vec<f64> = tables[0].iter().map(|(v, _)| *v).collect();
    let mut choices: Vec<Vec<usize>> = vec![(0..=units).collect()];
    for table in tables.iter().skip(1) {
        let mut next = vec![f64::INFINITY; units + 1];
        let mut pick = vec![0usize; units + 1];
        for (s, slot) in next.iter_mut().enumerate() {
            for t in 0..=s {
                let c = cost[s - t] + table[t].0;
                if c < *slot {
                    *slot = c;
                    pick[s] = t;
                }
            }
        }
        cost = next;
        choices.push(pick);
    }

    let mut budget = (0..=units)
        .min_by(|&p, &q| cost[p].total_cmp(&cost[q]))
        .unwrap_or(0);
    let mut point = vec![0.0; d];
    for i in (0..d).rev() {
        let t = choices[i][budget];
        point[i] = tables[i][t].1 * t as f64 * step;
        budget -= t;
    }
    Ok(point)
}

/// Grid reference with weights frozen at the output of [`sparsify_project`].
pub fn brute_force_reference(
    input: &ProjectionInput,
    grid_step: f64,
) -> Result<Vec<f64>, ProjectionError> {
    if input.x.len() > GRID_DIM_LIMIT {
        return Err(ProjectionError::DimensionTooLarge(input.x.len()));
    }
    let (v, _) = sparsify_project(input);
    grid_minimize(input, &frozen_weights(input, &v), grid_step)
}
