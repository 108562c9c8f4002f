#![allow(dead_code)]

use hinfq::lq::{CostSpec, Dims, SystemDynamics};
use hinfq::riccati;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random plant with open-loop spectral radius 0.8 and twice the smallest
/// feasible attenuation level found by doubling from 1.
pub fn random_instance(dims: Dims, seed: u64) -> (SystemDynamics, CostSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_mat = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let mut a = rand_mat(dims.state, dims.state);
    let rho = hinfq::linalg::spectral_radius(&a);
    if rho > 0.0 {
        a *= 0.8 / rho;
    }
    let b = rand_mat(dims.state, dims.control);
    let l = rand_mat(dims.state, dims.disturbance) * 0.5;
    let dyn_ = SystemDynamics::new(a, b, l).unwrap();
    let cost = CostSpec::new(DMatrix::identity(dims.state, dims.state), DMatrix::identity(dims.control, dims.control), 1.0).unwrap();
    let gamma = riccati::suggest_gamma(&dyn_, &cost, 40).expect("feasible gamma");
    (dyn_, cost.with_gamma(2.0 * gamma).unwrap())
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}
