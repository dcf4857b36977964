//! Random Fourier features `cos(ωᵀx + b)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct RandomFeatureBank {
    /// One frequency vector per row.
    pub omega: Matrix,
    pub phase: Vector,
}

impl RandomFeatureBank {
    /// Standard-normal frequencies and phases uniform on `[0, 2π)`.
    pub fn new(count: usize, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let omega = Matrix::from_fn(count, input_dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let phase = Vector::from_fn(count, |_, _| rng.random_range(0.0..std::f64::consts::TAU));
        RandomFeatureBank { omega, phase }
    }

    pub fn count(&self) -> usize {
        self.phase.len()
    }

    pub fn eval(&self, x: &Vector) -> Vector {
        (&self.omega * x + &self.phase).map(f64::cos)
    }

    /// The features as a `1 × count` basis row.
    pub fn row(&self, x: &Vector) -> Matrix {
        Matrix::from_row_slice(1, self.count(), self.eval(x).as_slice())
    }
}
