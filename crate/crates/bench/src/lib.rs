//! Shared fixtures for the criterion benchmarks.

use ndarray::Array2;
use netloc::scenario::{generate_scenario, measure_distances, MeasurementMatrix, NoiseConfig, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deployment at the reference density of 500 nodes on 5 m x 5 m.
pub fn fixture(n: usize, seed: u64) -> (Scenario, MeasurementMatrix) {
    let side = 5.0 * (n as f64 / 500.0).sqrt();
    let s = generate_scenario(n, n / 10, (side, side), seed).expect("valid scenario");
    let x = measure_distances(&s, &NoiseConfig::default(), seed).expect("valid noise");
    (s, x)
}

pub fn random_features(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}
