//! Covariance functions over the GP inputs, Gram-matrix assembly and exact
//! sampling through a (lazily computed, jitter-guarded) Cholesky factor.

use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative jitter ladder applied to the diagonal when factorization fails.
const JITTER_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Parameters of the covariance function
///
/// `eta * [lambda * exp(-rho * ||xi - xj||^2) + sigma2 * delta_ij]
///  + (1 - eta) * [1 / (1 + tau * ||xi - xj||^2)]`
///
/// With `eta = 1` this reduces exactly to the squared-exponential-plus-nugget
/// kernel; `eta < 1` mixes in a Cauchy component with scale `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Signal variance of the squared-exponential component.
    pub lambda: f64,
    /// Inverse squared length-scale.
    pub rho: f64,
    /// Nugget variance, applied on identical series indices only.
    pub sigma2: f64,
    /// Mixture weight on the squared-exponential component, in [0, 1].
    pub eta: f64,
    /// Cauchy scale of the mixture component.
    pub tau: f64,
}

impl KernelParams {
    /// Pure squared-exponential kernel with nugget (`eta = 1`).
    pub fn squared_exp(lambda: f64, rho: f64, sigma2: f64) -> Self {
        Self { lambda, rho, sigma2, eta: 1.0, tau: 0.0 }
    }

    /// Mixture of squared-exponential and Cauchy kernels.
    pub fn mixture(lambda: f64, rho: f64, sigma2: f64, eta: f64, tau: f64) -> Self {
        Self { lambda, rho, sigma2, eta, tau }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("rho", self.rho),
            ("sigma2", self.sigma2),
            ("tau", self.tau),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "kernel parameter {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !self.eta.is_finite() || !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidInput(format!(
                "kernel parameter eta must lie in [0, 1], got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

fn squared_distance(xi: &[f64], xj: &[f64]) -> Result<f64> {
    if xi.len() != xj.len() {
        return Err(Error::DimensionMismatch(format!(
            "GP inputs of length {} vs {}",
            xi.len(),
            xj.len()
        )));
    }
    let mut d2 = 0.0;
    for (a, b) in xi.iter().zip(xj) {
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidInput("non-finite GP input".into()));
        }
        let d = a - b;
        d2 += d * d;
    }
    Ok(d2)
}

#[inline]
fn kernel_from_d2(d2: f64, p: &KernelParams, same_index: bool) -> f64 {
    let nugget = if same_index { p.sigma2 } else { 0.0 };
    let se = p.lambda * (-p.rho * d2).exp() + nugget;
    if p.eta == 1.0 {
        se
    } else {
        p.eta * se + (1.0 - p.eta) / (1.0 + p.tau * d2)
    }
}

/// Covariance between two GP inputs. The nugget only enters when the two
/// inputs are the same series index (`same_index`), not merely when their
/// coordinates coincide.
pub fn kernel_value(xi: &[f64], xj: &[f64], p: &KernelParams, same_index: bool) -> Result<f64> {
    p.validate()?;
    Ok(kernel_from_d2(squared_distance(xi, xj)?, p, same_index))
}

/// Symmetric covariance matrix with a lazily computed lower Cholesky factor.
///
/// Factorization retries with escalating diagonal jitter
/// (`1e-10 .. 1e-6` times the mean diagonal) before reporting failure.
#[derive(Debug)]
pub struct CovMatrix {
    entries: DMatrix<f64>,
    chol: OnceLock<std::result::Result<Cholesky<f64, Dyn>, Error>>,
}

impl CovMatrix {
    /// Wrap an explicit symmetric matrix.
    pub fn from_entries(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "covariance matrix must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { entries, chol: OnceLock::new() })
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Diagonal as a vector.
    pub fn diag(&self) -> DVector<f64> {
        self.entries.diagonal()
    }

    /// True when every diagonal entry is zero; for a PSD matrix this means
    /// the whole matrix is zero and the induced GP is degenerate at 0.
    pub fn is_zero(&self) -> bool {
        self.entries.diagonal().iter().all(|&d| d == 0.0)
    }

    /// Lower Cholesky factor, computed on first use with the jitter policy.
    pub fn chol(&self) -> Result<&Cholesky<f64, Dyn>> {
        self.chol
            .get_or_init(|| {
                let n = self.entries.nrows();
                if let Some(c) = Cholesky::new(self.entries.clone()) {
                    return Ok(c);
                }
                let mean_diag = self.entries.diagonal().sum() / n.max(1) as f64;
                for rel in JITTER_LADDER {
                    let jitter = rel * mean_diag;
                    if jitter <= 0.0 {
                        break;
                    }
                    let mut m = self.entries.clone();
                    for i in 0..n {
                        m[(i, i)] += jitter;
                    }
                    if let Some(c) = Cholesky::new(m) {
                        return Ok(c);
                    }
                }
                Err(Error::JitterExhausted {
                    max_jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * mean_diag,
                })
            })
            .as_ref()
            .map_err(Clone::clone)
    }

    /// Draw `L z` with `z` iid standard normal; mean zero, covariance equal
    /// to the stored matrix. A zero matrix yields the zero vector.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let n = self.n();
        if n == 0 || self.is_zero() {
            return Ok(DVector::zeros(n));
        }
        let l = self.chol()?.l_dirty();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        // l_dirty leaves the strict upper triangle unspecified; multiply
        // against the lower triangle only.
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            out[i] = acc;
        }
        Ok(out)
    }
}

/// Gram matrix over the rows of `x` (`n x q`), nugget on the diagonal.
pub fn build_cov_matrix(x: &DMatrix<f64>, p: &KernelParams) -> Result<CovMatrix> {
    p.validate()?;
    let n = x.nrows();
    if n == 0 {
        return CovMatrix::from_entries(DMatrix::zeros(0, 0));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite GP input".into()));
    }
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = kernel_from_d2(0.0, p, true);
        for j in 0..i {
            let mut d2 = 0.0;
            for c in 0..x.ncols() {
                let d = x[(i, c)] - x[(j, c)];
                d2 += d * d;
            }
            let v = kernel_from_d2(d2, p, false);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    CovMatrix::from_entries(m)
}

/// Cross-covariance `K(x_test, x_train)`; no nugget anywhere since test and
/// training indices are distinct.
pub fn build_cross_cov(
    x_test: &DMatrix<f64>,
    x_train: &DMatrix<f64>,
    p: &KernelParams,
) -> Result<DMatrix<f64>> {
    p.validate()?;
    if x_test.ncols() != x_train.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "GP input dimension {} vs {}",
            x_test.ncols(),
            x_train.ncols()
        )));
    }
    if x_test.iter().chain(x_train.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite GP input".into()));
    }
    let mut m = DMatrix::zeros(x_test.nrows(), x_train.nrows());
    for a in 0..x_test.nrows() {
        for i in 0..x_train.nrows() {
            let mut d2 = 0.0;
            for c in 0..x_train.ncols() {
                let d = x_test[(a, c)] - x_train[(i, c)];
                d2 += d * d;
            }
            m[(a, i)] = kernel_from_d2(d2, p, false);
        }
    }
    Ok(m)
}

/// Exact zero-mean GP sample over the rows of `x`.
pub fn sample_gp<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    p: &KernelParams,
    rng: &mut R,
) -> Result<DVector<f64>> {
    p.validate()?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite GP input".into()));
    }
    // Pure nugget: the factor is sigma * I, no need for a dense Gram matrix.
    if p.eta == 1.0 && p.lambda == 0.0 {
        let sd = p.sigma2.sqrt();
        return Ok(DVector::from_fn(x.nrows(), |_, _| {
            sd * rng.sample::<f64, _>(StandardNormal)
        }));
    }
    build_cov_matrix(x, p)?.sample(rng)
}
