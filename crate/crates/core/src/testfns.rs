//! Deterministic smooth functions with known gradients and Lipschitz
//! constants, used by the smoothing diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// A deterministic function with an available gradient.
pub trait SmoothFunction: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    /// Lipschitz constant of the gradient.
    fn lipschitz(&self) -> f64;
}

/// `f(x) = cᵀx + b`.
#[derive(Clone, Debug)]
pub struct LinearForm {
    pub coef: Vec<f64>,
    pub offset: f64,
}

impl SmoothFunction for LinearForm {
    fn dim(&self) -> usize {
        self.coef.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        crate::dot(&self.coef, x) + self.offset
    }

    fn gradient(&self, _x: &[f64]) -> Vec<f64> {
        self.coef.clone()
    }

    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// `f(x) = xᵀ A x` for a symmetric `A`.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    a: DMatrix<f64>,
    lipschitz: f64,
}

impl QuadraticForm {
    /// Symmetrises `a` (the form only sees the symmetric part).
    pub fn new(a: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "quadratic form needs a square matrix");
        let sym = (&a + a.transpose()) * 0.5;
        let spectral = sym
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        Self {
            a: sym,
            lipschitz: 2.0 * spectral,
        }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    /// Symmetric matrix with iid standard normal entries scaled by `scale`.
    pub fn random<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> Self {
        let a = DMatrix::from_fn(dim, dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        });
        Self::new(a)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn trace(&self) -> f64 {
        self.a.trace()
    }
}

impl SmoothFunction for QuadraticForm {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut total = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| self.a[(i, j)] * x[j]).sum();
            total += x[i] * row;
        }
        total
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| 2.0 * (0..n).map(|j| self.a[(i, j)] * x[j]).sum::<f64>())
            .collect()
    }

    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// `f(x) = log Σ exp(x_i)`; its gradient is 1-Lipschitz.
#[derive(Clone, Debug)]
pub struct LogSumExp {
    pub dim: usize,
}

impl SmoothFunction for LogSumExp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect()
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }
}
