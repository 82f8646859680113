//! Shared fixtures for the estimator benchmarks.

use nalgebra::DMatrix;

use hibits::data::BinarySeriesDataset;
use hibits::kernels::KernelParams;
use hibits::simulate::{generate, Scenario, ScenarioConfig};

/// Benchmark dataset: one Scenario-1 series at the usual parameters.
pub fn scenario1_data(n: usize, seed: u64) -> BinarySeriesDataset {
    let cfg = ScenarioConfig {
        scenario: Scenario::S1,
        beta: (0.5, 3.0),
        kernel: KernelParams::squared_exp(5.0, 1.0, 0.01),
        n,
        y_init: 1,
        seed,
    };
    generate(&cfg).expect("generation succeeds").data
}

/// GP inputs of the benchmark dataset (1-D covariate values).
pub fn gp_inputs(data: &BinarySeriesDataset) -> DMatrix<f64> {
    data.x2.clone()
}
