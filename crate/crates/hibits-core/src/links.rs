//! Link functions for the binary response and the per-observation
//! log-likelihood derivatives used by the Newton and Laplace machinery.
//!
//! Probabilities are clamped away from 0/1 by [`PROB_CLAMP`] so that
//! log-likelihoods stay finite on (near-)separated data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are kept inside `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-12;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;
const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Which link maps the systematic component to a probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Logit,
    Probit,
}

impl std::fmt::Display for LinkKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LinkKind::Logit => write!(f, "logit"),
            LinkKind::Probit => write!(f, "probit"),
        }
    }
}

impl std::str::FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(LinkKind::Logit),
            "probit" => Ok(LinkKind::Probit),
            other => Err(Error::InvalidInput(format!(
                "unknown link '{other}' (expected logit or probit)"
            ))),
        }
    }
}

/// Log-likelihood of a single binary observation and its first three
/// derivatives with respect to the systematic component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikTerms {
    pub loglik: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

/// Standard normal CDF via the complementary error function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / SQRT_2)
}

/// log Phi(x), accurate far into the left tail where Phi underflows.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > 6.0 {
        // Phi(x) = 1 - Phi(-x) with Phi(-x) tiny.
        (-0.5 * statrs::function::erf::erfc(x / SQRT_2)).ln_1p()
    } else if x > -37.0 {
        (0.5 * statrs::function::erf::erfc(-x / SQRT_2)).ln()
    } else {
        // Asymptotic expansion of the Mills ratio; erfc underflows here.
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// Inverse Mills ratio phi(z)/Phi(z), evaluated in the log domain so the
/// left tail (z << -8) does not overflow.
pub fn mills_ratio(z: f64) -> f64 {
    (-0.5 * z * z - LN_SQRT_2PI - log_norm_cdf(z)).exp()
}

/// Map the systematic component to a probability in
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn inverse_link(kind: LinkKind, eta: f64) -> Result<f64> {
    if !eta.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite systematic component {eta}"
        )));
    }
    let p = match kind {
        LinkKind::Logit => 1.0 / (1.0 + (-eta).exp()),
        LinkKind::Probit => norm_cdf(eta),
    };
    Ok(clamp_prob(p))
}

/// Log-likelihood of `y` under systematic component `f`, with the first
/// three derivatives in `f`.
///
/// Logit: with p = inverse_link(f), d1 = y - p, d2 = -p(1-p),
/// d3 = -p(1-p)(1-2p). Probit: with s = 2y-1, z = s f and m the inverse
/// Mills ratio at z, d1 = s m, d2 = -m^2 - z m,
/// d3 = s m (2 m^2 + 3 z m + z^2 - 1).
pub fn loglik_terms(kind: LinkKind, y: u8, f: f64) -> Result<LogLikTerms> {
    if !f.is_finite() {
        return Err(Error::InvalidInput(format!(
            "non-finite systematic component {f}"
        )));
    }
    if y > 1 {
        return Err(Error::InvalidInput(format!(
            "response must be 0 or 1, got {y}"
        )));
    }
    match kind {
        LinkKind::Logit => {
            let p = clamp_prob(1.0 / (1.0 + (-f).exp()));
            let q = 1.0 - p;
            let loglik = if y == 1 { p.ln() } else { q.ln() };
            let pq = p * q;
            Ok(LogLikTerms {
                loglik,
                d1: f64::from(y) - p,
                d2: -pq,
                d3: -pq * (1.0 - 2.0 * p),
            })
        }
        LinkKind::Probit => {
            let s = 2.0 * f64::from(y) - 1.0;
            let z = s * f;
            let m = mills_ratio(z);
            Ok(LogLikTerms {
                loglik: log_norm_cdf(z),
                d1: s * m,
                d2: -m * m - z * m,
                d3: s * m * (2.0 * m * m + 3.0 * z * m + z * z - 1.0),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn inverse_link_at_zero_is_half() {
        assert_eq!(inverse_link(LinkKind::Logit, 0.0).unwrap(), 0.5);
        assert_eq!(inverse_link(LinkKind::Probit, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn logit_at_two() {
        assert_relative_eq!(
            inverse_link(LinkKind::Logit, 2.0).unwrap(),
            0.880_797_077_977_882_3,
            max_relative = 1e-12
        );
    }

    #[test]
    fn inverse_link_rejects_non_finite() {
        assert!(inverse_link(LinkKind::Logit, f64::NAN).is_err());
        assert!(inverse_link(LinkKind::Probit, f64::INFINITY).is_err());
    }

    #[test]
    fn logit_terms_at_zero() {
        let t = loglik_terms(LinkKind::Logit, 1, 0.0).unwrap();
        assert_abs_diff_eq!(t.loglik, -(2.0f64.ln()), epsilon = 1e-15);
        assert_abs_diff_eq!(t.d1, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.d2, -0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(t.d3, 0.0, epsilon = 1e-15);

        let t0 = loglik_terms(LinkKind::Logit, 0, 0.0).unwrap();
        assert_abs_diff_eq!(t0.d1, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t0.d2, -0.25, epsilon = 1e-15);
    }

    #[test]
    fn probit_d2_at_zero_is_two_over_pi() {
        // -(phi(0)/Phi(0))^2 = -(2 phi(0))^2 = -2/pi
        let t = loglik_terms(LinkKind::Probit, 1, 0.0).unwrap();
        assert_relative_eq!(t.d2, -2.0 / std::f64::consts::PI, max_relative = 1e-12);
    }

    /// Central finite differences of the log-likelihood reproduce d1, d2, d3.
    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for kind in [LinkKind::Logit, LinkKind::Probit] {
            for y in [0u8, 1u8] {
                let mut f = -6.0;
                while f <= 6.0 {
                    let ll = |x: f64| loglik_terms(kind, y, x).unwrap().loglik;
                    let d1 = |x: f64| loglik_terms(kind, y, x).unwrap().d1;
                    let d2 = |x: f64| loglik_terms(kind, y, x).unwrap().d2;
                    let t = loglik_terms(kind, y, f).unwrap();

                    let fd1 = (ll(f + h) - ll(f - h)) / (2.0 * h);
                    let fd2 = (d1(f + h) - d1(f - h)) / (2.0 * h);
                    let fd3 = (d2(f + h) - d2(f - h)) / (2.0 * h);

                    assert_relative_eq!(t.d1, fd1, max_relative = 1e-4, epsilon = 1e-8);
                    assert_relative_eq!(t.d2, fd2, max_relative = 1e-4, epsilon = 1e-8);
                    assert_relative_eq!(t.d3, fd3, max_relative = 1e-4, epsilon = 1e-8);
                    f += 0.25;
                }
            }
        }
    }

    #[test]
    fn d2_is_negative_everywhere() {
        for kind in [LinkKind::Logit, LinkKind::Probit] {
            for y in [0u8, 1u8] {
                let mut f = -12.0;
                while f <= 12.0 {
                    let t = loglik_terms(kind, y, f).unwrap();
                    assert!(t.d2 < 0.0, "{kind} y={y} f={f}: d2={}", t.d2);
                    f += 0.5;
                }
            }
        }
    }

    #[test]
    fn link_is_increasing_and_symmetric() {
        for kind in [LinkKind::Logit, LinkKind::Probit] {
            let mut prev = 0.0;
            let mut eta = -8.0;
            while eta <= 8.0 {
                let p = inverse_link(kind, eta).unwrap();
                // Ties are only possible where the clamp saturates.
                assert!(
                    p > prev || (p == prev && (p == PROB_CLAMP || p == 1.0 - PROB_CLAMP))
                );
                let q = inverse_link(kind, -eta).unwrap();
                assert_abs_diff_eq!(p + q, 1.0, epsilon = 1e-10);
                prev = p;
                eta += 0.125;
            }
        }
    }

    /// The Mills ratio stays finite and accurate deep in the tail, where the
    /// naive phi/Phi division would be 0/0.
    #[test]
    fn mills_ratio_left_tail() {
        // d1 must still track finite differences of log Phi at z = -12.
        let h = 1e-5;
        let fd = (log_norm_cdf(-12.0 + h) - log_norm_cdf(-12.0 - h)) / (2.0 * h);
        assert_relative_eq!(mills_ratio(-12.0), fd, max_relative = 1e-8);

        // Asymptotically m(z) ~ -z for z -> -inf.
        let m = mills_ratio(-40.0);
        assert!(m > 40.0 && m < 40.05, "m(-40) = {m}");
        let m = mills_ratio(-100.0);
        assert!(m > 100.0 && m < 100.02, "m(-100) = {m}");
    }

    #[test]
    fn log_norm_cdf_is_continuous_at_switch_points() {
        for x0 in [6.0, -37.0] {
            let below = log_norm_cdf(x0 - 1e-9);
            let above = log_norm_cdf(x0 + 1e-9);
            assert_relative_eq!(below, above, max_relative = 1e-6);
        }
    }
}
