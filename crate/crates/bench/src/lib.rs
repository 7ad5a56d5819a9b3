//! Shared fixtures for the benchmarks.

use erf_core::gpd::{gpd_quantile, ExceedanceSample, GpdParams};
use erf_core::rng::seeded_rng;
use erf_core::sim::{generate, SimSpec};
use erf_core::{ErfConfig, Family, ForestParams, TrainingSet};
use rand::Rng;

/// Example 1 training data.
pub fn example1(n: usize, p: usize, seed: u64) -> TrainingSet {
    generate(&SimSpec::new(Family::Example1, n, p, seed).expect("valid spec")).expect("generate")
}

pub fn erf_config(trees: usize) -> ErfConfig {
    ErfConfig { forest: ForestParams::default().with_trees(trees), ..ErfConfig::default() }
}

/// `k` GPD exceedances with random positive weights.
pub fn gpd_sample(k: usize, xi: f64, seed: u64) -> ExceedanceSample {
    let mut rng = seeded_rng(seed);
    let theta = GpdParams::new(1.0, xi).expect("valid params");
    let z = (0..k).map(|_| gpd_quantile(rng.random::<f64>(), &theta).expect("quantile")).collect();
    let w = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
    ExceedanceSample::new(z, w).expect("sample")
}

/// Test points in `[-1, 1]^p`.
pub fn test_points(count: usize, p: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    (0..count).map(|_| (0..p).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}
