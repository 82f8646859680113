//! Hybrid estimator for binary time series: a fixed-effect generalized
//! linear model combined with a latent Gaussian-process component fitted by
//! Laplace approximation, with marginal-likelihood hyperparameter selection,
//! parametric bootstrap inference, scenario simulators and an evaluation
//! harness.

pub mod bootstrap;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod glm;
pub mod kernels;
pub mod laplace;
pub mod links;
pub mod model;
pub mod select;
pub mod simulate;

pub use bootstrap::{bootstrap_beta, percentile, BootstrapSummary};
pub use config::{RunConfig, SplitConfig};
pub use data::{load_csv, save_csv, split_data, BinarySeriesDataset, SplitSpec};
pub use error::{Error, Result};
pub use eval::{error_rate, paired_bonferroni_ci, PairedInterval};
pub use glm::{fit_glm, select_by_ic, wald_ci, Criterion, FixedEffectFit, Selection};
pub use kernels::{
    build_cov_matrix, build_cross_cov, kernel_value, sample_gp, CovMatrix, KernelParams,
};
pub use laplace::{
    find_mode, gauss_hermite_probability, log_marginal_grad, predict_latent, predict_probability,
    LaplaceState, PredictiveDistribution,
};
pub use links::{inverse_link, loglik_terms, LinkKind, LogLikTerms};
pub use model::{
    classify, fit_hibits, one_step_forecast, predict, FitOptions, HibitsModel, X2Transform,
};
pub use select::{
    grad_check_lambda, maximize_scalar, optimize_lambda, GradCheck, LambdaSelection, ScalarMax,
};
pub use simulate::{
    empirical_log_odds_by_bin, empirical_transition_table, generate, Generated, LogOddsBin,
    Scenario, ScenarioConfig, TransitionTable, COV_X2_COL,
};
