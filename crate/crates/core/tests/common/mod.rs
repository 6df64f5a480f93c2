#![allow(dead_code)]

use d2c_core::{CostSpec, DMatrix, DVector, Plant, SystemSpec, Task};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// `M M' + floor·I`, well conditioned for small sizes.
pub fn random_pd(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> DMatrix<f64> {
    let m = uniform(rng, n, n, 1.0);
    &m * m.transpose() + DMatrix::identity(n, n) * floor
}

pub fn double_integrator() -> SystemSpec {
    SystemSpec::linear(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.005, 0.1]),
        20,
        DVector::from_vec(vec![1.0, 0.0]),
    )
}

/// Double integrator regulated to the origin.
pub fn linear_task() -> Task {
    let plant = Plant::new(double_integrator()).unwrap();
    let cost = CostSpec::quadratic(&DVector::zeros(2), 1.0, 0.1, 10.0, 1);
    Task::new(plant, cost).unwrap()
}
