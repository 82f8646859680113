//! Parametric bootstrap for the fixed-effect coefficients: resample the
//! latent process from the fitted GP, refit the coefficients against the
//! observed responses with the sampled process as a fixed offset, and
//! summarize the draws by their mean and percentile interval.
//!
//! Iterations use independent RNG substreams derived from the master seed,
//! so results do not depend on execution order and iterations can run in
//! parallel.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::BinarySeriesDataset;
use crate::error::{Error, Result};
use crate::glm::fit_glm;
use crate::model::HibitsModel;

/// Point and interval estimates from the bootstrap draws.
#[derive(Debug, Clone)]
pub struct BootstrapSummary {
    /// Coefficient names (no intercept; stage 2 has none).
    pub coef_names: Vec<String>,
    /// Columnwise mean of the draws.
    pub beta_star: DVector<f64>,
    /// 2.5th percentile per coefficient.
    pub ci_lower: DVector<f64>,
    /// 97.5th percentile per coefficient.
    pub ci_upper: DVector<f64>,
    /// Successful draws, one row per converged refit.
    pub draws: DMatrix<f64>,
    pub n_failed: usize,
    /// False when more than 10% of the refits failed.
    pub reliable: bool,
}

/// Linear-interpolation (type-7) quantile of `draws` at probability `q`.
pub fn percentile(draws: &[f64], q: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::Empty("percentile of no draws".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!(
            "quantile probability must lie in [0, 1], got {q}"
        )));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

/// Bootstrap the stage-2 coefficient distribution.
///
/// Per iteration: draw the latent process from the fitted kernel over the
/// data's GP inputs, then refit the coefficients (no intercept, matching
/// the stage-2 systematic component) against the observed responses with
/// the draw as offset. Failed or non-converged refits are dropped and
/// counted.
pub fn bootstrap_beta(
    model: &HibitsModel,
    data: &BinarySeriesDataset,
    max_iter: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if max_iter < 100 {
        return Err(Error::InvalidInput(format!(
            "bootstrap needs at least 100 iterations, got {max_iter}"
        )));
    }
    if data.x1.ncols() != model.train_x1.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} covariates, model expects {}",
            data.x1.ncols(),
            model.train_x1.ncols()
        )));
    }
    let x2t = model.x2_transform.apply(&data.x2)?;
    let k = crate::kernels::build_cov_matrix(&x2t, &model.kernel)?;
    // Surface factorization problems once, up front, rather than per draw.
    if !k.is_zero() {
        k.chol()?;
    }

    let results: Vec<Option<DVector<f64>>> = (0..max_iter)
        .into_par_iter()
        .map(|iter| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(iter as u64 + 1);
            let f = k.sample(&mut rng).ok()?;
            match fit_glm(&data.x1, &data.y, model.link, Some(&f), false) {
                Ok(fit) if fit.converged => Some(fit.beta),
                _ => None,
            }
        })
        .collect();

    let p = data.x1.ncols();
    let ok: Vec<&DVector<f64>> = results.iter().flatten().collect();
    let n_failed = max_iter - ok.len();
    if ok.is_empty() {
        return Err(Error::OptimizationFailed(
            "every bootstrap refit failed".into(),
        ));
    }
    let draws = DMatrix::from_fn(ok.len(), p, |i, j| ok[i][j]);
    let beta_star = DVector::from_fn(p, |j, _| draws.column(j).mean());
    let mut ci_lower = DVector::zeros(p);
    let mut ci_upper = DVector::zeros(p);
    for j in 0..p {
        let col: Vec<f64> = draws.column(j).iter().copied().collect();
        ci_lower[j] = percentile(&col, 0.025)?;
        ci_upper[j] = percentile(&col, 0.975)?;
    }
    Ok(BootstrapSummary {
        coef_names: data.x1_names.clone(),
        beta_star,
        ci_lower,
        ci_upper,
        draws,
        n_failed,
        reliable: 10 * n_failed <= max_iter,
    })
}
