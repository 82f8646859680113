//! Method-comparison harness: per-split error rates and simultaneous
//! Bonferroni intervals for mean error-rate differences.
//!
//! The underlying evaluation model has a shared per-replicate random effect;
//! every proposed-minus-competitor contrast is estimable from paired
//! differences in which that effect cancels, so the harness works on paired
//! differences directly.

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Fraction of disagreements between two binary vectors.
pub fn error_rate(y_true: &[u8], y_pred: &[u8]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::DimensionMismatch(format!(
            "length {} vs {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::Empty("error rate of empty vectors".into()));
    }
    let wrong = y_true
        .iter()
        .zip(y_pred)
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / y_true.len() as f64)
}

/// Simultaneous interval for one baseline-minus-competitor contrast.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedInterval {
    /// Competitor column in the input matrix.
    pub method: usize,
    /// Mean of the paired differences (baseline minus competitor), so a
    /// negative value favors the baseline method.
    pub mean_diff: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Simultaneous Bonferroni confidence intervals for the mean error-rate
/// difference between the baseline column and every other column.
///
/// `errors` holds one row per replicate and one column per method. Each
/// interval is `mean(d) +- t_{m-1, 1-alpha/(2(k-1))} sd(d)/sqrt(m)` on the
/// paired differences `d_j = E[baseline, j] - E[i, j]`.
pub fn paired_bonferroni_ci(
    errors: &DMatrix<f64>,
    baseline_col: usize,
    level: f64,
) -> Result<Vec<PairedInterval>> {
    let m = errors.nrows();
    let k = errors.ncols();
    if k < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two methods, got {k}"
        )));
    }
    if m < 10 {
        return Err(Error::InvalidInput(format!(
            "need at least ten replicates, got {m}"
        )));
    }
    if baseline_col >= k {
        return Err(Error::InvalidInput(format!(
            "baseline column {baseline_col} out of range for {k} methods"
        )));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }

    let alpha = 1.0 - level;
    let comparisons = (k - 1) as f64;
    let t_dist = StudentsT::new(0.0, 1.0, (m - 1) as f64)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let t_crit = t_dist.inverse_cdf(1.0 - alpha / (2.0 * comparisons));

    let mut out = Vec::with_capacity(k - 1);
    for method in (0..k).filter(|&c| c != baseline_col) {
        let diffs: Vec<f64> = (0..m)
            .map(|j| errors[(j, baseline_col)] - errors[(j, method)])
            .collect();
        let mean = diffs.iter().sum::<f64>() / m as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (m - 1) as f64;
        let half = t_crit * (var / m as f64).sqrt();
        out.push(PairedInterval {
            method,
            mean_diff: mean,
            lower: mean - half,
            upper: mean + half,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn error_rate_examples() {
        assert_eq!(error_rate(&[1, 0, 1], &[1, 0, 1]).unwrap(), 0.0);
        assert_eq!(error_rate(&[1, 0, 1], &[0, 1, 0]).unwrap(), 1.0);
        assert_eq!(error_rate(&[1, 0, 1, 1], &[1, 1, 1, 0]).unwrap(), 0.5);
        assert!(error_rate(&[1], &[1, 0]).is_err());
        assert!(error_rate(&[], &[]).is_err());
    }

    #[test]
    fn identical_methods_give_a_zero_interval() {
        let col: Vec<f64> = (0..12).map(|i| 0.1 + 0.01 * i as f64).collect();
        let mut m = DMatrix::zeros(12, 2);
        for i in 0..12 {
            m[(i, 0)] = col[i];
            m[(i, 1)] = col[i];
        }
        let ci = paired_bonferroni_ci(&m, 0, 0.95).unwrap();
        assert_eq!(ci.len(), 1);
        assert_eq!((ci[0].lower, ci[0].upper), (0.0, 0.0));
    }

    #[test]
    fn constant_advantage_gives_a_degenerate_negative_interval() {
        // Baseline uniformly better by exactly 0.02: with the
        // proposed-minus-competitor convention the interval is negative.
        let mut m = DMatrix::zeros(15, 2);
        for i in 0..15 {
            m[(i, 1)] = 0.10 + 0.005 * i as f64;
            m[(i, 0)] = m[(i, 1)] - 0.02;
        }
        let ci = paired_bonferroni_ci(&m, 0, 0.95).unwrap();
        assert_abs_diff_eq!(ci[0].mean_diff, -0.02, epsilon = 1e-12);
        assert_abs_diff_eq!(ci[0].lower, -0.02, epsilon = 1e-12);
        assert_abs_diff_eq!(ci[0].upper, -0.02, epsilon = 1e-12);
    }

    #[test]
    fn intervals_are_symmetric_about_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = DMatrix::from_fn(20, 3, |_, _| rng.gen_range(0.0..0.3));
        for iv in paired_bonferroni_ci(&m, 0, 0.95).unwrap() {
            assert_abs_diff_eq!(
                iv.mean_diff - iv.lower,
                iv.upper - iv.mean_diff,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn width_grows_with_the_number_of_comparisons() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let base = DMatrix::from_fn(25, 2, |_, _| rng.gen_range(0.0..0.3));
        // Same first two columns, padded with extra methods.
        let wide = DMatrix::from_fn(25, 5, |r, c| {
            if c < 2 {
                base[(r, c)]
            } else {
                rng.gen_range(0.0..0.3)
            }
        });
        let narrow = paired_bonferroni_ci(&base, 0, 0.95).unwrap()[0];
        let padded = paired_bonferroni_ci(&wide, 0, 0.95).unwrap()[0];
        assert!(padded.upper - padded.lower > narrow.upper - narrow.lower);
    }

    #[test]
    fn shared_replicate_effects_cancel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = DMatrix::from_fn(16, 3, |_, _| rng.gen_range(0.0..0.3));
        let base = paired_bonferroni_ci(&m, 0, 0.9).unwrap();
        // Add an arbitrary per-replicate constant to all methods.
        let shifted = DMatrix::from_fn(16, 3, |r, c| m[(r, c)] + (r as f64) * 0.013 - 0.05);
        let moved = paired_bonferroni_ci(&shifted, 0, 0.9).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            assert_abs_diff_eq!(a.mean_diff, b.mean_diff, epsilon = 1e-12);
            assert_abs_diff_eq!(a.lower, b.lower, epsilon = 1e-12);
            assert_abs_diff_eq!(a.upper, b.upper, epsilon = 1e-12);
        }
    }

    #[test]
    fn input_validation() {
        let m = DMatrix::zeros(5, 2);
        assert!(paired_bonferroni_ci(&m, 0, 0.95).is_err()); // too few replicates
        let m = DMatrix::zeros(12, 1);
        assert!(paired_bonferroni_ci(&m, 0, 0.95).is_err()); // one method
        let m = DMatrix::zeros(12, 2);
        assert!(paired_bonferroni_ci(&m, 5, 0.95).is_err()); // bad baseline
        assert!(paired_bonferroni_ci(&m, 0, 1.0).is_err()); // bad level
    }
}
