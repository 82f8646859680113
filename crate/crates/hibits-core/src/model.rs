//! End-to-end two-stage estimator: fixed-effect MLE, signal-variance
//! selection, Laplace-approximated GP conditioning on the fitted linear
//! effects, prediction, classification and one-step forecasting.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, BinarySeriesDataset};
use crate::error::{Error, Result};
use crate::glm::{fit_glm, FixedEffectFit};
use crate::kernels::{build_cov_matrix, build_cross_cov, kernel_value, CovMatrix, KernelParams};
use crate::laplace::{find_mode, predict_latent, predict_probability, LaplaceState, PredictiveDistribution};
use crate::links::LinkKind;
use crate::select::{optimize_lambda, LambdaSelection};

/// Per-column affine map applied to GP inputs before any kernel evaluation.
///
/// Fitted on the training block, then reused verbatim on test inputs so
/// train and test live on the same scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct X2Transform {
    pub offsets: Vec<f64>,
    pub scales: Vec<f64>,
}

impl X2Transform {
    pub fn identity(q: usize) -> Self {
        Self {
            offsets: vec![0.0; q],
            scales: vec![1.0; q],
        }
    }

    /// Map each training column onto [0, 1]; constant columns map to 0.
    pub fn unit_interval(x: &DMatrix<f64>) -> Self {
        let q = x.ncols();
        let mut offsets = vec![0.0; q];
        let mut scales = vec![1.0; q];
        for c in 0..q {
            let col = x.column(c);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in col.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if lo.is_finite() && hi.is_finite() {
                offsets[c] = lo;
                scales[c] = if hi > lo { hi - lo } else { 1.0 };
            }
        }
        Self { offsets, scales }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.offsets.len() {
            return Err(Error::DimensionMismatch(format!(
                "GP input has {} columns, transform expects {}",
                x.ncols(),
                self.offsets.len()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, c| {
            (x[(i, c)] - self.offsets[c]) / self.scales[c]
        }))
    }
}

/// Options controlling a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Kernel template; the signal variance is replaced when selection runs.
    pub kernel: KernelParams,
    pub link: LinkKind,
    pub select_lambda: bool,
    pub lambda_bounds: (f64, f64),
    /// Bracket tolerance for selection; `None` uses 1e-4 of the bound span.
    pub select_tol: Option<f64>,
    /// Rescale GP inputs to [0, 1] over the training span. Simulation
    /// studies on a raw integer grid switch this off.
    pub rescale_x2: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            kernel: KernelParams::squared_exp(1.0, 1.0, 0.01),
            link: LinkKind::Logit,
            select_lambda: true,
            lambda_bounds: (0.0, 10.0),
            select_tol: None,
            rescale_x2: true,
        }
    }
}

/// The fitted two-stage model.
#[derive(Debug, Clone)]
pub struct HibitsModel {
    pub stage1: FixedEffectFit,
    pub link: LinkKind,
    /// Kernel with the selected (or supplied) signal variance.
    pub kernel: KernelParams,
    pub laplace: LaplaceState,
    pub x1_names: Vec<String>,
    pub x2_names: Vec<String>,
    pub lag_col: Option<usize>,
    pub train_t: Vec<i64>,
    pub train_y: Vec<u8>,
    pub train_x1: DMatrix<f64>,
    /// GP inputs in raw (untransformed) coordinates.
    pub train_x2: DMatrix<f64>,
    /// GP inputs after `x2_transform`; the coordinates the kernel sees.
    pub train_x2t: DMatrix<f64>,
    pub x2_transform: X2Transform,
    /// Selection probes, when selection ran.
    pub lambda_trace: Option<Vec<(f64, f64)>>,
}

impl HibitsModel {
    /// Stage-1 intercept (fitted but excluded from the stage-2 offset).
    pub fn intercept(&self) -> f64 {
        self.stage1.intercept().unwrap_or(0.0)
    }

    /// Fixed-effect coefficients excluding the intercept.
    pub fn slopes(&self) -> DVector<f64> {
        self.stage1.slopes()
    }

    /// Covariance matrix of the fitted kernel over the training GP inputs.
    pub fn train_cov(&self) -> Result<CovMatrix> {
        build_cov_matrix(&self.train_x2t, &self.kernel)
    }
}

/// Fit the two-stage model.
///
/// Stage 1 maximizes the joint likelihood with an intercept, treating the
/// latent process as a constant level. Stage 2 conditions on the fitted
/// slopes through the offset `x1 beta` (no intercept; the GP mode absorbs
/// the level), optionally selecting the signal variance by marginal
/// likelihood first.
pub fn fit_hibits(data: &BinarySeriesDataset, opts: &FitOptions) -> Result<HibitsModel> {
    opts.kernel.validate()?;
    let (lo, hi) = opts.lambda_bounds;
    if opts.select_lambda && (lo.is_nan() || hi.is_nan() || lo >= hi) {
        return Err(Error::InvalidInput(format!(
            "signal-variance bounds must have positive length, got [{}, {}]",
            opts.lambda_bounds.0, opts.lambda_bounds.1
        )));
    }

    let stage1 = fit_glm(&data.x1, &data.y, opts.link, None, true)?;
    let offset = &data.x1 * stage1.slopes();

    struct Stage2 {
        kernel: KernelParams,
        laplace: LaplaceState,
        transform: X2Transform,
        x2t: DMatrix<f64>,
        trace: Option<Vec<(f64, f64)>>,
    }

    let stage2 = (|| -> Result<Stage2> {
        let transform = if opts.rescale_x2 {
            X2Transform::unit_interval(&data.x2)
        } else {
            X2Transform::identity(data.x2.ncols())
        };
        let x2t = transform.apply(&data.x2)?;

        let (kernel, trace) = if opts.select_lambda {
            let LambdaSelection { lambda, trace, .. } = optimize_lambda(
                &x2t,
                &data.y,
                &offset,
                &opts.kernel,
                opts.link,
                opts.lambda_bounds,
                opts.select_tol,
            )?;
            (opts.kernel.with_lambda(lambda), Some(trace))
        } else {
            (opts.kernel, None)
        };

        let k = build_cov_matrix(&x2t, &kernel)?;
        let laplace = find_mode(&k, &data.y, &offset, opts.link)?;
        Ok(Stage2 { kernel, laplace, transform, x2t, trace })
    })();

    let Stage2 { kernel, laplace, transform: x2_transform, x2t: train_x2t, trace: lambda_trace } =
        match stage2 {
            Ok(v) => v,
            Err(source) => {
                return Err(Error::Stage2Failed {
                    stage1: Box::new(stage1),
                    source: Box::new(source),
                });
            }
        };

    Ok(HibitsModel {
        stage1,
        link: opts.link,
        kernel,
        laplace,
        x1_names: data.x1_names.clone(),
        x2_names: data.x2_names.clone(),
        lag_col: data.lag_col,
        train_t: data.t.clone(),
        train_y: data.y.clone(),
        train_x1: data.x1.clone(),
        train_x2: data.x2.clone(),
        train_x2t,
        x2_transform,
        lambda_trace,
    })
}

/// Predictive distribution on test inputs (raw GP coordinates).
pub fn predict(
    model: &HibitsModel,
    x1_test: &DMatrix<f64>,
    x2_test: &DMatrix<f64>,
) -> Result<PredictiveDistribution> {
    if x1_test.ncols() != model.train_x1.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "x1 test has {} columns, model expects {}",
            x1_test.ncols(),
            model.train_x1.ncols()
        )));
    }
    if x1_test.nrows() != x2_test.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "x1/x2 test row counts {}/{} differ",
            x1_test.nrows(),
            x2_test.nrows()
        )));
    }
    let m = x1_test.nrows();
    if m == 0 {
        return Ok(PredictiveDistribution {
            f_bar: DVector::zeros(0),
            v: DVector::zeros(0),
            pi_bar: DVector::zeros(0),
        });
    }

    let x2t = model.x2_transform.apply(x2_test)?;
    let k_star = build_cross_cov(&x2t, &model.train_x2t, &model.kernel)?;
    let prior_var = kernel_value(&[0.0], &[0.0], &model.kernel, true)?;
    let k_ss = DVector::from_element(m, prior_var);
    let (f_bar, v) = predict_latent(&model.laplace, &k_star, &k_ss)?;

    let offsets = x1_test * model.slopes();
    let mut pi_bar = DVector::zeros(m);
    for i in 0..m {
        pi_bar[i] = predict_probability(f_bar[i], v[i], offsets[i], model.link)?;
    }
    Ok(PredictiveDistribution { f_bar, v, pi_bar })
}

/// Threshold predictive probabilities; ties go to 1.
pub fn classify(dist: &PredictiveDistribution, threshold: f64) -> Result<Vec<u8>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidInput(format!(
            "threshold must lie strictly inside (0, 1), got {threshold}"
        )));
    }
    Ok(dist
        .pi_bar
        .iter()
        .map(|&p| u8::from(p >= threshold))
        .collect())
}

/// Predictive probability for the next time step, using the last observed
/// response as the lagged regressor and the next time index as GP input.
pub fn one_step_forecast(
    model: &HibitsModel,
    history: &BinarySeriesDataset,
    next_exogenous: &[f64],
) -> Result<f64> {
    let lag = model.lag_col.ok_or_else(|| {
        Error::Schema("one-step forecasting needs a lagged-response column".into())
    })? ;
    if history.x1_names != model.x1_names {
        return Err(Error::Schema(format!(
            "history covariates {:?} do not match the model schema {:?}",
            history.x1_names, model.x1_names
        )));
    }
    if !history.x2_is_time() || model.x2_names.len() != 1 {
        return Err(Error::Schema(
            "one-step forecasting needs the time-derived GP input".into(),
        ));
    }
    if history.is_empty() {
        return Err(Error::Empty("history".into()));
    }
    let p = model.train_x1.ncols();
    if next_exogenous.len() != p - 1 {
        return Err(Error::DimensionMismatch(format!(
            "expected {} exogenous values, got {}",
            p - 1,
            next_exogenous.len()
        )));
    }

    let last_y = f64::from(*history.y.last().unwrap());
    let mut x1 = DMatrix::zeros(1, p);
    let mut exo = next_exogenous.iter();
    for c in 0..p {
        x1[(0, c)] = if c == lag { last_y } else { *exo.next().unwrap() };
    }
    let next_t = history.t.last().unwrap() + 1;
    let x2 = DMatrix::from_element(1, 1, next_t as f64);
    Ok(predict(model, &x1, &x2)?.pi_bar[0])
}

/// On-disk form of the fitted model: a self-describing JSON document with
/// every field named, embedding the run configuration and seed.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: String,
    config_hash: String,
    seed: u64,
    config: serde_json::Value,
    link: LinkKind,
    kernel: KernelParams,
    stage1: FixedEffectFit,
    f_hat: Vec<f64>,
    log_marginal: f64,
    laplace_iterations: usize,
    x1_names: Vec<String>,
    x2_names: Vec<String>,
    lag_col: Option<usize>,
    x2_transform: X2Transform,
    lambda_trace: Option<Vec<(f64, f64)>>,
    train_t: Vec<i64>,
    train_y: Vec<u8>,
    train_x1: Vec<Vec<f64>>,
    train_x2: Vec<Vec<f64>>,
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j])
}

pub const MODEL_FORMAT: &str = "hibits-model";

impl HibitsModel {
    /// Serialize to the model-file JSON document.
    pub fn to_json(&self, config: serde_json::Value, config_hash: &str, seed: u64) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash.to_string(),
            seed,
            config,
            link: self.link,
            kernel: self.kernel,
            stage1: self.stage1.clone(),
            f_hat: self.laplace.f_hat.iter().copied().collect(),
            log_marginal: self.laplace.log_marginal,
            laplace_iterations: self.laplace.iterations,
            x1_names: self.x1_names.clone(),
            x2_names: self.x2_names.clone(),
            lag_col: self.lag_col,
            x2_transform: self.x2_transform.clone(),
            lambda_trace: self.lambda_trace.clone(),
            train_t: self.train_t.clone(),
            train_y: self.train_y.clone(),
            train_x1: matrix_to_rows(&self.train_x1),
            train_x2: matrix_to_rows(&self.train_x2),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn save<P: AsRef<Path>>(
        &self,
        path: P,
        config: serde_json::Value,
        config_hash: &str,
        seed: u64,
    ) -> Result<()> {
        let json = self.to_json(config, config_hash, seed)?;
        write_atomic(path.as_ref(), json.as_bytes())
    }

    /// Reload a saved model, rebuilding the Laplace factorization from the
    /// stored mode. Predictions from the reloaded model are identical.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Schema(format!(
                "not a model file (format '{}')",
                file.format
            )));
        }
        let n = file.train_t.len();
        let train_x1 = rows_to_matrix(&file.train_x1, file.x1_names.len());
        let train_x2 = rows_to_matrix(&file.train_x2, file.x2_names.len());
        if file.train_y.len() != n
            || train_x1.nrows() != n
            || train_x2.nrows() != n
            || file.f_hat.len() != n
        {
            return Err(Error::Schema(
                "model file row counts are inconsistent".into(),
            ));
        }
        let train_x2t = file.x2_transform.apply(&train_x2)?;
        let k = build_cov_matrix(&train_x2t, &file.kernel)?;
        let offset = &train_x1 * file.stage1.slopes();
        let laplace = LaplaceState::from_mode(
            &k,
            &file.train_y,
            &offset,
            DVector::from_vec(file.f_hat),
            file.link,
            file.laplace_iterations,
        )?;
        Ok(HibitsModel {
            stage1: file.stage1,
            link: file.link,
            kernel: file.kernel,
            laplace,
            x1_names: file.x1_names,
            x2_names: file.x2_names,
            lag_col: file.lag_col,
            train_t: file.train_t,
            train_y: file.train_y,
            train_x1,
            train_x2,
            train_x2t,
            x2_transform: file.x2_transform,
            lambda_trace: file.lambda_trace,
        })
    }
}
