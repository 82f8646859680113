//! Signal-variance selection by maximizing the Laplace-approximate marginal
//! likelihood over a bounded interval, using a Brent-style combination of
//! golden-section steps and successive parabolic interpolation. The length
//! scale and nugget stay fixed (see `KernelParams`); only the signal
//! variance is free.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{build_cov_matrix, KernelParams};
use crate::laplace::{find_mode, log_marginal_grad};
use crate::links::LinkKind;

const GOLDEN: f64 = 0.381_966_011_250_105_2; // (3 - sqrt(5)) / 2
const MAX_EVALS: usize = 200;

/// Result of a bounded scalar maximization.
#[derive(Debug, Clone)]
pub struct ScalarMax {
    /// Argmax estimate.
    pub x: f64,
    /// Objective value at `x`.
    pub value: f64,
    /// Every probe in evaluation order.
    pub trace: Vec<(f64, f64)>,
    pub evaluations: usize,
}

/// Maximize a scalar function on `[a, b]` to bracket width `tol`.
///
/// Non-finite probes are treated as worthless rather than fatal, which
/// shrinks the bracket away from them; if every probe is non-finite the
/// optimization fails. At most 200 evaluations are spent.
pub fn maximize_scalar<F>(mut f: F, bounds: (f64, f64), tol: f64) -> Result<ScalarMax>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = bounds;
    if !a.is_finite() || !b.is_finite() || a >= b {
        return Err(Error::InvalidInput(format!(
            "bounds must be a finite non-empty interval, got [{a}, {b}]"
        )));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {tol}"
        )));
    }

    let mut trace = Vec::new();
    let mut evals = 0usize;
    // Minimize the negated objective; non-finite values become +inf.
    let mut probe = |x: f64, trace: &mut Vec<(f64, f64)>, evals: &mut usize| -> f64 {
        let v = f(x);
        trace.push((x, v));
        *evals += 1;
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    };

    let mut x = a + GOLDEN * (b - a);
    let mut fx = probe(x, &mut trace, &mut evals);
    let (mut w, mut fw) = (x, fx);
    let (mut v, mut fv) = (x, fx);
    let mut prev_step = 0.0f64;
    let mut prev_prev_step = 0.0f64;

    while b - a > tol && evals < MAX_EVALS {
        let mid = 0.5 * (a + b);
        let smallest = f64::EPSILON.sqrt() * x.abs() + tol * 0.25;

        // Parabola through (x, w, v); fall back to a golden-section step
        // into the larger side when the trial is unusable.
        let mut step = f64::NAN;
        if prev_prev_step.abs() > smallest {
            let r = (x - w) * (fx - fv);
            let q0 = (x - v) * (fx - fw);
            let p = (x - v) * q0 - (x - w) * r;
            let q = 2.0 * (q0 - r);
            let (p, q) = if q > 0.0 { (-p, q) } else { (p, -q) };
            if q != 0.0 {
                let trial = p / q;
                let u = x + trial;
                if u > a + smallest && u < b - smallest && trial.abs() < 0.5 * prev_prev_step.abs()
                {
                    step = trial;
                }
            }
        }
        if !step.is_finite() {
            let e = if x < mid { b - x } else { a - x };
            step = GOLDEN * e;
        }
        if step.abs() < smallest {
            step = if step >= 0.0 { smallest } else { -smallest };
        }
        prev_prev_step = prev_step;
        prev_step = step;

        let u = x + step;
        let fu = probe(u, &mut trace, &mut evals);
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u >= x {
                b = u;
            } else {
                a = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }

    if !fx.is_finite() {
        return Err(Error::OptimizationFailed(
            "objective non-finite at every probe".into(),
        ));
    }
    Ok(ScalarMax {
        x,
        value: -fx,
        trace,
        evaluations: evals,
    })
}

/// Outcome of marginal-likelihood selection of the signal variance.
#[derive(Debug, Clone)]
pub struct LambdaSelection {
    pub lambda: f64,
    pub log_marginal: f64,
    /// Every `(lambda, log marginal)` probe in evaluation order.
    pub trace: Vec<(f64, f64)>,
    pub evaluations: usize,
}

/// Default bracket-width tolerance relative to the bound span.
pub fn default_lambda_tol(bounds: (f64, f64)) -> f64 {
    1e-4 * (bounds.1 - bounds.0)
}

/// Choose the signal variance by maximizing the approximate log marginal
/// likelihood over `bounds`, holding every other kernel parameter at its
/// `kernel_template` value.
pub fn optimize_lambda(
    x2: &DMatrix<f64>,
    y: &[u8],
    offset: &DVector<f64>,
    kernel_template: &KernelParams,
    link: LinkKind,
    bounds: (f64, f64),
    tol: Option<f64>,
) -> Result<LambdaSelection> {
    if bounds.0 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "signal variance bounds must be non-negative, got [{}, {}]",
            bounds.0, bounds.1
        )));
    }
    kernel_template.validate()?;
    let tol = tol.unwrap_or_else(|| default_lambda_tol(bounds));
    let objective = |lambda: f64| -> f64 {
        let p = kernel_template.with_lambda(lambda);
        match build_cov_matrix(x2, &p).and_then(|k| find_mode(&k, y, offset, link)) {
            Ok(state) => state.log_marginal,
            Err(_) => f64::NAN,
        }
    };
    let out = maximize_scalar(objective, bounds, tol)?;
    Ok(LambdaSelection {
        lambda: out.x,
        log_marginal: out.value,
        trace: out.trace,
        evaluations: out.evaluations,
    })
}

/// Agreement report between the analytic marginal-likelihood gradient and a
/// central finite difference.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub lambda: f64,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(|numeric|, 1e-8)`.
    pub rel_error: f64,
}

/// Validate the analytic A + B gradient of the log marginal likelihood with
/// respect to the signal variance at `lambda0`, against central finite
/// differences with a relative step of 1e-5.
pub fn grad_check_lambda(
    x2: &DMatrix<f64>,
    y: &[u8],
    offset: &DVector<f64>,
    kernel_template: &KernelParams,
    link: LinkKind,
    lambda0: f64,
) -> Result<GradCheck> {
    kernel_template.validate()?;
    if !lambda0.is_finite() || lambda0 < 0.0 {
        return Err(Error::InvalidInput(format!(
            "lambda0 must be finite and non-negative, got {lambda0}"
        )));
    }
    let at = |lambda: f64| -> Result<f64> {
        let k = build_cov_matrix(x2, &kernel_template.with_lambda(lambda))?;
        Ok(find_mode(&k, y, offset, link)?.log_marginal)
    };

    let p0 = kernel_template.with_lambda(lambda0);
    let k = build_cov_matrix(x2, &p0)?;
    let state = find_mode(&k, y, offset, link)?;
    let dk = dk_dlambda(x2, &p0);
    let analytic = log_marginal_grad(&state, &k, std::slice::from_ref(&dk))?[0];

    let h = 1e-5 * lambda0.max(0.1);
    let numeric = (at(lambda0 + h)? - at((lambda0 - h).max(0.0))?)
        / (h + (lambda0 - (lambda0 - h).max(0.0)));
    let rel_error = (analytic - numeric).abs() / numeric.abs().max(1e-8);
    Ok(GradCheck {
        lambda: lambda0,
        analytic,
        numeric,
        rel_error,
    })
}

/// Entrywise derivative of the covariance matrix in the signal variance:
/// `eta * exp(-rho ||xi - xj||^2)` (diagonal included).
pub fn dk_dlambda(x: &DMatrix<f64>, p: &KernelParams) -> DMatrix<f64> {
    let n = x.nrows();
    DMatrix::from_fn(n, n, |i, j| {
        let mut d2 = 0.0;
        for c in 0..x.ncols() {
            let d = x[(i, c)] - x[(j, c)];
            d2 += d * d;
        }
        p.eta * (-p.rho * d2).exp()
    })
}
