//! Newton-Raphson maximum likelihood for the fixed-effect binary model with
//! an optional known offset, Wald intervals and AIC/BIC subset selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::links::{inverse_link, loglik_terms, LinkKind};

const SCORE_TOL: f64 = 1e-8;
const STEP_TOL: f64 = 1e-10;
const MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;

/// Maximum-likelihood fit of the fixed-effect model.
///
/// When an intercept is fitted it occupies entry 0 of `beta`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedEffectFit {
    pub beta: DVector<f64>,
    /// Inverse observed information at the optimum.
    pub cov_beta: DMatrix<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub with_intercept: bool,
    pub link: LinkKind,
    /// Largest absolute score entry at exit; large values together with a
    /// runaway `beta` norm are the classic perfect-separation symptom.
    pub max_abs_score: f64,
}

impl FixedEffectFit {
    /// Number of fitted parameters.
    pub fn n_params(&self) -> usize {
        self.beta.len()
    }

    /// Intercept estimate, when one was fitted.
    pub fn intercept(&self) -> Option<f64> {
        self.with_intercept.then(|| self.beta[0])
    }

    /// Coefficients excluding the intercept.
    pub fn slopes(&self) -> DVector<f64> {
        if self.with_intercept {
            self.beta.rows(1, self.beta.len() - 1).into_owned()
        } else {
            self.beta.clone()
        }
    }

    /// Linear predictor `intercept + x1 beta_slopes + offset` for new rows.
    pub fn linear_predictor(&self, x1: &DMatrix<f64>, offset: Option<&DVector<f64>>) -> DVector<f64> {
        let mut eta = x1 * self.slopes();
        if let Some(b0) = self.intercept() {
            eta.add_scalar_mut(b0);
        }
        if let Some(o) = offset {
            eta += o;
        }
        eta
    }

    /// Fitted probabilities for new rows.
    pub fn predict_proba(
        &self,
        x1: &DMatrix<f64>,
        offset: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let eta = self.linear_predictor(x1, offset);
        let mut p = DVector::zeros(eta.len());
        for i in 0..eta.len() {
            p[i] = inverse_link(self.link, eta[i])?;
        }
        Ok(p)
    }
}

fn design_matrix(x1: &DMatrix<f64>, with_intercept: bool) -> DMatrix<f64> {
    if with_intercept {
        let n = x1.nrows();
        let mut x = DMatrix::zeros(n, x1.ncols() + 1);
        x.column_mut(0).fill(1.0);
        x.columns_mut(1, x1.ncols()).copy_from(x1);
        x
    } else {
        x1.clone()
    }
}

fn total_loglik(
    kind: LinkKind,
    y: &[u8],
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    offset: Option<&DVector<f64>>,
) -> Result<f64> {
    let mut eta = x * beta;
    if let Some(o) = offset {
        eta += o;
    }
    let mut ll = 0.0;
    for i in 0..y.len() {
        ll += loglik_terms(kind, y[i], eta[i])?.loglik;
    }
    Ok(ll)
}

/// Maximize the joint likelihood over the coefficients, treating `offset`
/// as a known additive term of the systematic component.
pub fn fit_glm(
    x1: &DMatrix<f64>,
    y: &[u8],
    kind: LinkKind,
    offset: Option<&DVector<f64>>,
    with_intercept: bool,
) -> Result<FixedEffectFit> {
    let n = x1.nrows();
    if n != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows but response has {} entries",
            y.len()
        )));
    }
    if let Some(o) = offset {
        if o.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "offset of length {} for {n} observations",
                o.len()
            )));
        }
        if o.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite offset".into()));
        }
    }
    if x1.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite design entry".into()));
    }
    if let Some(bad) = y.iter().position(|&v| v > 1) {
        return Err(Error::InvalidInput(format!(
            "response must be 0/1, got {} at row {bad}",
            y[bad]
        )));
    }

    let x = design_matrix(x1, with_intercept);
    let p = x.ncols();
    if n <= p {
        return Err(Error::InvalidInput(format!(
            "need more observations than parameters (n={n}, p={p})"
        )));
    }

    let mut beta = DVector::zeros(p);
    let mut loglik = total_loglik(kind, y, &x, &beta, offset)?;
    let mut converged = false;
    let mut iterations = 0;

    let mut d1 = DVector::zeros(n);
    let mut w = DVector::zeros(n);

    for iter in 1..=MAX_ITER {
        iterations = iter;
        let mut eta = &x * &beta;
        if let Some(o) = offset {
            eta += o;
        }
        for i in 0..n {
            let t = loglik_terms(kind, y[i], eta[i])?;
            d1[i] = t.d1;
            w[i] = -t.d2;
        }
        let score = x.transpose() * &d1;
        let score_converged = score.amax() < SCORE_TOL;

        // Observed information X^T W X.
        let mut xw = x.clone();
        for i in 0..n {
            xw.row_mut(i).scale_mut(w[i]);
        }
        let info = x.transpose() * xw;
        let chol = nalgebra::Cholesky::new(info)
            .ok_or_else(|| Error::RankDeficient("singular observed information".into()))?;
        let delta = chol.solve(&score);

        if score_converged {
            // Deep in the quadratic basin: one full polishing step drives
            // the score to machine precision.
            beta += &delta;
            loglik = total_loglik(kind, y, &x, &beta, offset)?;
            converged = true;
            break;
        }

        // Step halving against a decreasing likelihood. The slack admits
        // rounding-level decreases so the last polishing steps near the
        // optimum are not rejected.
        let slack = 1e-10 * (1.0 + loglik.abs());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &beta + t * &delta;
            let ll = total_loglik(kind, y, &x, &candidate, offset)?;
            if ll.is_finite() && ll >= loglik - slack {
                let step = (t * &delta).amax();
                beta = candidate;
                loglik = ll;
                accepted = true;
                if step < STEP_TOL {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !accepted || converged {
            break;
        }
    }

    // Covariance and criteria at the returned estimate.
    let mut eta = &x * &beta;
    if let Some(o) = offset {
        eta += o;
    }
    for i in 0..n {
        let t = loglik_terms(kind, y[i], eta[i])?;
        d1[i] = t.d1;
        w[i] = -t.d2;
    }
    let max_abs_score = (x.transpose() * &d1).amax();
    if max_abs_score < SCORE_TOL {
        converged = true;
    }
    let mut xw = x.clone();
    for i in 0..n {
        xw.row_mut(i).scale_mut(w[i]);
    }
    let info = x.transpose() * xw;
    let cov_beta = nalgebra::Cholesky::new(info)
        .ok_or_else(|| Error::RankDeficient("singular observed information".into()))?
        .inverse();
    let pf = p as f64;
    Ok(FixedEffectFit {
        beta,
        cov_beta,
        loglik,
        aic: 2.0 * pf - 2.0 * loglik,
        bic: pf * (n as f64).ln() - 2.0 * loglik,
        iterations,
        converged,
        with_intercept,
        link: kind,
        max_abs_score,
    })
}

/// Per-coefficient Wald interval at the given confidence level.
pub fn wald_ci(fit: &FixedEffectFit, level: f64) -> Result<Vec<(f64, f64)>> {
    if !fit.converged {
        return Err(Error::InvalidInput(
            "Wald intervals require a converged fit".into(),
        ));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in [0, 1), got {level}"
        )));
    }
    let z = if level == 0.0 {
        0.0
    } else {
        Normal::standard().inverse_cdf(0.5 * (1.0 + level))
    };
    Ok((0..fit.beta.len())
        .map(|j| {
            let half = z * fit.cov_beta[(j, j)].max(0.0).sqrt();
            (fit.beta[j] - half, fit.beta[j] + half)
        })
        .collect())
}

/// Which information criterion drives subset selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    Aic,
    Bic,
}

/// Outcome of information-criterion subset selection.
#[derive(Debug, Clone)]
pub struct Selection {
    /// Position of the winning candidate in the input list.
    pub best_index: usize,
    /// Winning column subset.
    pub subset: Vec<usize>,
    pub fit: FixedEffectFit,
    /// Candidates that failed to fit, with the reason; not fatal.
    pub skipped: Vec<(usize, Error)>,
}

/// Fit every candidate column subset (intercept always included) and return
/// the one minimizing the chosen criterion. Ties break toward fewer
/// parameters, then toward the first-listed candidate.
pub fn select_by_ic(
    candidates: &[Vec<usize>],
    x1: &DMatrix<f64>,
    y: &[u8],
    kind: LinkKind,
    criterion: Criterion,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Empty("no candidate subsets".into()));
    }
    let mut best: Option<(usize, Vec<usize>, FixedEffectFit, f64)> = None;
    let mut skipped = Vec::new();
    for (idx, subset) in candidates.iter().enumerate() {
        if let Some(&c) = subset.iter().find(|&&c| c >= x1.ncols()) {
            skipped.push((
                idx,
                Error::InvalidInput(format!("column {c} out of range")),
            ));
            continue;
        }
        let xs = x1.select_columns(subset.iter());
        match fit_glm(&xs, y, kind, None, true) {
            Ok(fit) => {
                let ic = match criterion {
                    Criterion::Aic => fit.aic,
                    Criterion::Bic => fit.bic,
                };
                let better = match &best {
                    None => true,
                    Some((_, _, bf, bic)) => {
                        ic < *bic || (ic == *bic && fit.n_params() < bf.n_params())
                    }
                };
                if better {
                    best = Some((idx, subset.clone(), fit, ic));
                }
            }
            Err(e) => skipped.push((idx, e)),
        }
    }
    match best {
        Some((best_index, subset, fit, _)) => Ok(Selection {
            best_index,
            subset,
            fit,
            skipped,
        }),
        None => Err(Error::OptimizationFailed(
            "every candidate subset failed to fit".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simulate_logit(
        n: usize,
        beta0: f64,
        beta1: f64,
        seed: u64,
    ) -> (DMatrix<f64>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 1, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let y: Vec<u8> = (0..n)
            .map(|i| {
                let p = 1.0 / (1.0 + (-(beta0 + beta1 * x[(i, 0)])).exp());
                u8::from(rng.gen::<f64>() < p)
            })
            .collect();
        (x, y)
    }

    #[test]
    fn intercept_only_is_logit_of_sample_mean() {
        let x = DMatrix::<f64>::zeros(10, 0);
        let y = [1u8, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let fit = fit_glm(&x, &y, LinkKind::Logit, None, true).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.beta[0], (3.0f64 / 7.0).ln(), epsilon = 1e-10);
        // Fitted probability equals the sample mean.
        let p = fit.predict_proba(&DMatrix::zeros(1, 0), None).unwrap();
        assert_abs_diff_eq!(p[0], 0.3, epsilon = 1e-10);
    }

    #[test]
    fn intercept_only_probit_matches_sample_mean() {
        let x = DMatrix::<f64>::zeros(10, 0);
        let y = [1u8, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let fit = fit_glm(&x, &y, LinkKind::Probit, None, true).unwrap();
        let p = fit.predict_proba(&DMatrix::zeros(1, 0), None).unwrap();
        assert_abs_diff_eq!(p[0], 0.3, epsilon = 1e-10);
    }

    #[test]
    fn constant_offset_shifts_only_the_intercept() {
        let (x, y) = simulate_logit(300, 0.4, 1.2, 5);
        let base = fit_glm(&x, &y, LinkKind::Logit, None, true).unwrap();
        let c = 0.7;
        let offset = DVector::from_element(300, c);
        let shifted = fit_glm(&x, &y, LinkKind::Logit, Some(&offset), true).unwrap();
        assert_abs_diff_eq!(shifted.beta[0], base.beta[0] - c, epsilon = 1e-6);
        assert_abs_diff_eq!(shifted.beta[1], base.beta[1], epsilon = 1e-6);
    }

    #[test]
    fn score_vanishes_at_the_optimum() {
        let (x, y) = simulate_logit(400, -0.3, 0.8, 17);
        for kind in [LinkKind::Logit, LinkKind::Probit] {
            let fit = fit_glm(&x, &y, kind, None, true).unwrap();
            assert!(fit.converged);
            assert!(fit.max_abs_score < 1e-6, "score {}", fit.max_abs_score);
        }
    }

    #[test]
    fn loglik_is_a_local_maximum() {
        let (x, y) = simulate_logit(250, 0.2, 1.0, 23);
        let fit = fit_glm(&x, &y, LinkKind::Logit, None, true).unwrap();
        let xd = design_matrix(&x, true);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let mut eps = DVector::from_fn(fit.beta.len(), |_, _| {
                rng.sample::<f64, _>(rand_distr::StandardNormal)
            });
            eps *= 1e-2 / eps.norm();
            let perturbed = &fit.beta + eps;
            let ll = total_loglik(LinkKind::Logit, &y, &xd, &perturbed, None).unwrap();
            assert!(ll <= fit.loglik + 1e-12);
        }
    }

    #[test]
    fn aic_bic_definitions() {
        let (x, y) = simulate_logit(100, 0.0, 0.5, 3);
        let fit = fit_glm(&x, &y, LinkKind::Logit, None, true).unwrap();
        assert_relative_eq!(fit.aic, 4.0 - 2.0 * fit.loglik, max_relative = 1e-12);
        assert_relative_eq!(
            fit.bic,
            2.0 * (100.0f64).ln() - 2.0 * fit.loglik,
            max_relative = 1e-12
        );
    }

    #[test]
    fn rejects_small_samples_and_collinearity() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let y = [0u8, 1];
        assert!(fit_glm(&x, &y, LinkKind::Logit, None, true).is_err());

        // Exactly collinear columns: singular information.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let base = DMatrix::from_fn(50, 1, |_, _| rng.gen::<f64>());
        let mut xx = DMatrix::zeros(50, 2);
        xx.column_mut(0).copy_from(&base.column(0));
        xx.column_mut(1).copy_from(&(2.0 * base.column(0)));
        let y: Vec<u8> = (0..50).map(|i| u8::from(i % 2 == 0)).collect();
        match fit_glm(&xx, &y, LinkKind::Logit, None, true) {
            Err(Error::RankDeficient(_)) => {}
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn wald_ci_examples() {
        let (x, y) = simulate_logit(200, 0.1, 0.9, 31);
        let mut fit = fit_glm(&x, &y, LinkKind::Logit, None, true).unwrap();

        // Degenerate variance: point interval.
        fit.cov_beta[(0, 0)] = 0.0;
        let ci = wald_ci(&fit, 0.95).unwrap();
        assert_eq!(ci[0].0, fit.beta[0]);
        assert_eq!(ci[0].1, fit.beta[0]);

        // Unit variance, zero estimate, 95%.
        fit.beta[1] = 0.0;
        fit.cov_beta[(1, 1)] = 1.0;
        let ci = wald_ci(&fit, 0.95).unwrap();
        assert_abs_diff_eq!(ci[1].0, -1.959_963_984_540_054, epsilon = 1e-9);
        assert_abs_diff_eq!(ci[1].1, 1.959_963_984_540_054, epsilon = 1e-9);

        // Level zero: point interval for every coefficient.
        let ci = wald_ci(&fit, 0.0).unwrap();
        assert_eq!(ci[1], (0.0, 0.0));
    }

    #[test]
    fn wald_ci_requires_convergence() {
        let (x, y) = simulate_logit(100, 0.0, 0.4, 2);
        let mut fit = fit_glm(&x, &y, LinkKind::Logit, None, true).unwrap();
        fit.converged = false;
        assert!(wald_ci(&fit, 0.95).is_err());
    }

    #[test]
    fn select_by_ic_single_candidate() {
        let (x, y) = simulate_logit(120, 0.0, 0.6, 41);
        let sel = select_by_ic(&[vec![0]], &x, &y, LinkKind::Logit, Criterion::Aic).unwrap();
        assert_eq!(sel.best_index, 0);
        assert_eq!(sel.subset, vec![0]);
    }

    #[test]
    fn select_by_ic_prefers_the_signal_column() {
        // Strong signal in column 0; column selection must pick it over the
        // intercept-only model under both criteria.
        let (x, y) = simulate_logit(400, 0.0, 2.5, 47);
        for criterion in [Criterion::Aic, Criterion::Bic] {
            let sel =
                select_by_ic(&[vec![], vec![0]], &x, &y, LinkKind::Logit, criterion).unwrap();
            assert_eq!(sel.best_index, 1, "{criterion:?} missed the signal");
        }
    }

    #[test]
    fn select_by_ic_tie_breaks_to_first_listed() {
        let (x, y) = simulate_logit(150, 0.2, 0.7, 53);
        // Identical candidates: identical loglik and size, first one wins.
        let sel =
            select_by_ic(&[vec![0], vec![0]], &x, &y, LinkKind::Logit, Criterion::Bic).unwrap();
        assert_eq!(sel.best_index, 0);
    }

    #[test]
    fn select_by_ic_skips_failing_candidates() {
        let (x, y) = simulate_logit(100, 0.1, 0.5, 59);
        let sel = select_by_ic(
            &[vec![7], vec![0]],
            &x,
            &y,
            LinkKind::Logit,
            Criterion::Aic,
        )
        .unwrap();
        assert_eq!(sel.best_index, 1);
        assert_eq!(sel.skipped.len(), 1);
        assert_eq!(sel.skipped[0].0, 0);
    }

    #[test]
    fn separated_data_is_reported_not_hidden() {
        // Perfectly separated responses: the estimate runs away; the fit must
        // come back with either a non-convergence flag or a visibly escaped
        // coefficient rather than a silent plausible-looking estimate.
        let x = DMatrix::from_fn(40, 1, |i, _| i as f64 / 20.0 - 1.0);
        let y: Vec<u8> = (0..40).map(|i| u8::from(i >= 20)).collect();
        let fit = fit_glm(&x, &y, LinkKind::Logit, None, true).unwrap();
        assert!(
            !fit.converged || fit.beta.amax() > 15.0,
            "separation symptom not surfaced: {fit:?}"
        );
    }
}
