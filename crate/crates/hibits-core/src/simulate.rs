//! Autoregressive binary-series generators for the five benchmark
//! scenarios, plus the empirical diagnostics (transition table, per-bin log
//! odds) used in exploratory analysis.
//!
//! The latent process is indexed by the exogenous covariate: the GP input
//! of observation i is `x1_i`, so the stochastic component is a smooth
//! random function of the covariate rather than of time.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{BinarySeriesDataset, LAG_COL};
use crate::error::{Error, Result};
use crate::kernels::{sample_gp, KernelParams};
use crate::links::{inverse_link, LinkKind};

/// Name of the covariate-valued GP-input column written by the generators.
pub const COV_X2_COL: &str = "x2_cov";

/// The five benchmark data-generating processes: S1/S2 logistic with and
/// without a latent process, S3/S4 their probit counterparts, S5 logistic
/// with a mixture-kernel latent process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    S1,
    S2,
    S3,
    S4,
    S5,
}

impl Scenario {
    pub fn link(self) -> LinkKind {
        match self {
            Scenario::S1 | Scenario::S2 | Scenario::S5 => LinkKind::Logit,
            Scenario::S3 | Scenario::S4 => LinkKind::Probit,
        }
    }

    pub fn has_latent_process(self) -> bool {
        !matches!(self, Scenario::S2 | Scenario::S4)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" | "1" => Ok(Scenario::S1),
            "s2" | "2" => Ok(Scenario::S2),
            "s3" | "3" => Ok(Scenario::S3),
            "s4" | "4" => Ok(Scenario::S4),
            "s5" | "5" => Ok(Scenario::S5),
            other => Err(Error::InvalidInput(format!(
                "unknown scenario '{other}' (expected s1..s5)"
            ))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::S3 => "s3",
            Scenario::S4 => "s4",
            Scenario::S5 => "s5",
        };
        write!(f, "{s}")
    }
}

/// Full description of one simulated series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    /// (beta0, beta1): exogenous coefficient and lag coefficient.
    pub beta: (f64, f64),
    /// Kernel of the latent process; ignored by S2/S4.
    pub kernel: KernelParams,
    pub n: usize,
    /// State conditioning the first lag.
    pub y_init: u8,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn new(scenario: Scenario, beta: (f64, f64), kernel: KernelParams, n: usize) -> Self {
        Self {
            scenario,
            beta,
            kernel,
            n,
            y_init: 1,
            seed: 0,
        }
    }
}

/// A generated series plus the latent process that produced it.
#[derive(Debug, Clone)]
pub struct Generated {
    pub data: BinarySeriesDataset,
    /// The sampled latent process; absent for scenarios without one.
    pub latent: Option<DVector<f64>>,
}

/// Generate one series: exogenous covariate iid standard normal, latent
/// process a GP over the covariate values, responses drawn sequentially
/// through the scenario's link from `beta0 x1_i + beta1 y_{i-1} + f_i`.
pub fn generate(config: &ScenarioConfig) -> Result<Generated> {
    if config.n == 0 {
        return Err(Error::Empty("cannot generate an empty series".into()));
    }
    if config.y_init > 1 {
        return Err(Error::InvalidInput(format!(
            "initial state must be 0 or 1, got {}",
            config.y_init
        )));
    }
    config.kernel.validate()?;

    let n = config.n;
    let link = config.scenario.link();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let x1_cov = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    // The GP runs over the covariate, so the stochastic component is a
    // nonlinear random effect of x1 on top of the linear one.
    let x2 = DMatrix::from_fn(n, 1, |i, _| x1_cov[i]);
    let latent = if config.scenario.has_latent_process() {
        Some(sample_gp(&x2, &config.kernel, &mut rng)?)
    } else {
        None
    };

    let (beta0, beta1) = config.beta;
    let mut y = Vec::with_capacity(n);
    let mut lag = Vec::with_capacity(n);
    let mut prev = f64::from(config.y_init);
    for i in 0..n {
        let f = latent.as_ref().map_or(0.0, |f| f[i]);
        let p = inverse_link(link, beta0 * x1_cov[i] + beta1 * prev + f)?;
        let yi = u8::from(rng.gen::<f64>() < p);
        lag.push(prev);
        y.push(yi);
        prev = f64::from(yi);
    }

    let mut x1 = DMatrix::zeros(n, 2);
    for i in 0..n {
        x1[(i, 0)] = x1_cov[i];
        x1[(i, 1)] = lag[i];
    }
    let data = BinarySeriesDataset::new(
        (1..=n as i64).collect(),
        y,
        x1,
        vec!["x1_cov".into(), LAG_COL.into()],
        x2,
        vec![COV_X2_COL.into()],
        Some(1),
    )?;
    Ok(Generated { data, latent })
}

/// Counts of `(previous state, current state)` transitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransitionTable {
    /// `counts[prev][cur]`.
    pub counts: [[usize; 2]; 2],
}

impl TransitionTable {
    /// Total transitions (series length minus one).
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Cell frequencies normalized by the number of transitions.
    pub fn frequencies(&self) -> [[f64; 2]; 2] {
        let t = self.total().max(1) as f64;
        self.counts.map(|row| row.map(|c| c as f64 / t))
    }

    /// Fraction of steps that stay in the same state.
    pub fn persistence(&self) -> f64 {
        (self.counts[0][0] + self.counts[1][1]) as f64 / self.total().max(1) as f64
    }
}

/// Tabulate the empirical transitions of a binary series.
pub fn empirical_transition_table(y: &[u8]) -> Result<TransitionTable> {
    if y.len() < 2 {
        return Err(Error::InvalidInput(
            "transition table needs at least two observations".into(),
        ));
    }
    let mut counts = [[0usize; 2]; 2];
    for w in y.windows(2) {
        counts[w[0] as usize][w[1] as usize] += 1;
    }
    Ok(TransitionTable { counts })
}

/// Per-bin empirical log odds of `y = 1` over equal-width covariate bins.
#[derive(Debug, Clone, PartialEq)]
pub struct LogOddsBin {
    pub lo: f64,
    pub hi: f64,
    pub count0: usize,
    pub count1: usize,
    /// `ln(count1 / count0)`; undefined when either class is absent.
    pub log_odds: Option<f64>,
}

/// Bin the covariate into `n_bins` equal-width intervals and report the
/// empirical log odds per bin; bins missing a class are flagged undefined
/// rather than imputed.
pub fn empirical_log_odds_by_bin(
    covariate: &[f64],
    y: &[u8],
    n_bins: usize,
) -> Result<Vec<LogOddsBin>> {
    if covariate.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "covariate has {} entries, response has {}",
            covariate.len(),
            y.len()
        )));
    }
    if n_bins < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two bins, got {n_bins}"
        )));
    }
    if covariate.is_empty() {
        return Err(Error::Empty("log-odds binning".into()));
    }
    let lo = covariate.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = covariate.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidInput("non-finite covariate".into()));
    }
    let width = if hi > lo { (hi - lo) / n_bins as f64 } else { 1.0 };
    let mut bins: Vec<LogOddsBin> = (0..n_bins)
        .map(|b| LogOddsBin {
            lo: lo + b as f64 * width,
            hi: lo + (b + 1) as f64 * width,
            count0: 0,
            count1: 0,
            log_odds: None,
        })
        .collect();
    for (&x, &yi) in covariate.iter().zip(y) {
        let b = (((x - lo) / width) as usize).min(n_bins - 1);
        if yi == 1 {
            bins[b].count1 += 1;
        } else {
            bins[b].count0 += 1;
        }
    }
    for bin in &mut bins {
        if bin.count0 > 0 && bin.count1 > 0 {
            bin.log_odds = Some((bin.count1 as f64 / bin.count0 as f64).ln());
        }
    }
    Ok(bins)
}
