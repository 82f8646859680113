//! Run configuration: one serializable document with a full set of
//! documented defaults, shared by the CLI commands and embedded in every
//! model file together with its hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SplitSpec;
use crate::error::Result;
use crate::kernels::KernelParams;
use crate::links::LinkKind;
use crate::model::FitOptions;

/// Train/test sizes without the seed (the seed always comes from the run).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SplitConfig {
    Sequential { train: usize, test: usize },
    Random { train: usize, test: usize },
}

impl SplitConfig {
    pub fn to_spec(self, seed: u64) -> SplitSpec {
        match self {
            SplitConfig::Sequential { train, test } => SplitSpec::Sequential { train, test },
            SplitConfig::Random { train, test } => SplitSpec::Random { train, test, seed },
        }
    }
}

/// Batch-run configuration. Every field has a default; a config file may
/// set any subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub link: LinkKind,
    /// Kernel noise standard deviation (the nugget variance is its square).
    pub sigma: f64,
    /// Inverse squared length-scale, held fixed during selection.
    pub rho: f64,
    /// Signal variance; used directly when `select_lambda` is off, and as
    /// the template value otherwise.
    pub lambda: f64,
    /// Mixture weight on the squared-exponential component (1 = pure).
    pub eta: f64,
    /// Cauchy scale of the mixture component.
    pub tau: f64,
    pub select_lambda: bool,
    pub lambda_bounds: (f64, f64),
    /// Train/test carving; absent means fit on every row.
    pub split: Option<SplitConfig>,
    pub threshold: f64,
    pub bootstrap_iters: usize,
    pub seed: u64,
    /// Rescale GP inputs onto [0, 1] over the training span.
    pub rescale_x2: bool,
    /// Auto-build the lagged-response column when absent.
    pub add_lag: bool,
    /// Missing-data mode: drop the lag column and split randomly.
    pub missing_data: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            link: LinkKind::Logit,
            sigma: 0.1,
            rho: 1.0,
            lambda: 1.0,
            eta: 1.0,
            tau: 1.0,
            select_lambda: true,
            lambda_bounds: (0.0, 10.0),
            split: None,
            threshold: 0.5,
            bootstrap_iters: 1000,
            seed: 42,
            rescale_x2: true,
            add_lag: true,
            missing_data: false,
        }
    }
}

impl RunConfig {
    pub fn kernel(&self) -> KernelParams {
        KernelParams::mixture(self.lambda, self.rho, self.sigma * self.sigma, self.eta, self.tau)
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            kernel: self.kernel(),
            link: self.link,
            select_lambda: self.select_lambda,
            lambda_bounds: self.lambda_bounds,
            select_tol: None,
            rescale_x2: self.rescale_x2,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Hex SHA-256 of the canonical JSON form; stamped into every report.
    pub fn hash(&self) -> Result<String> {
        let canonical = serde_json::to_string(self)?;
        let digest = Sha256::digest(canonical.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
