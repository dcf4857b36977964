//! Discrete-time infinite-horizon LQR by Riccati fixed-point iteration.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAX_ITERATIONS: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    pub p: Matrix,
    pub k: Matrix,
    pub iterations: usize,
    /// `‖P − (Q + AᵀPA − AᵀPBK)‖` in max-abs norm.
    pub residual: f64,
}

fn gain(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let lhs = r + b.transpose() * p * b;
    let rhs = b.transpose() * p * a;
    lhs.lu()
        .solve(&rhs)
        .ok_or_else(|| Error::NoConvergence("R + BᵀPB is singular".into()))
}

/// Iterates `P ← Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA` from `P = Q` until the
/// max-abs change is below 1e-12 relative, then checks the residual
/// against 1e-9·max(1, ‖P‖).
pub fn discrete_lqr(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<LqrSolution> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols()) {
        return Err(Error::Config("LQR matrices have inconsistent shapes".into()));
    }
    let mut p = q.clone();
    for it in 1..=MAX_ITERATIONS {
        let k = gain(a, b, r, &p)?;
        let next = q + a.transpose() * &p * a - a.transpose() * &p * b * &k;
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let change = (&next - &p).amax();
        p = next;
        if change <= 1e-12 * p.amax() {
            let k = gain(a, b, r, &p)?;
            let residual = (&p - (q + a.transpose() * &p * a - a.transpose() * &p * b * &k)).amax();
            if residual > 1e-9 * p.amax().max(1.0) {
                return Err(Error::NoConvergence(format!("Riccati residual {residual:e} above tolerance")));
            }
            return Ok(LqrSolution { p, k, iterations: it, residual });
        }
    }
    Err(Error::NoConvergence(
        "Riccati iteration did not converge; (A, B) may not be stabilizable".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_dynamics() {
        let q = Matrix::from_diagonal(&crate::linalg::Vector::from_vec(vec![2.0, 3.0]));
        let s = discrete_lqr(&Matrix::zeros(2, 2), &Matrix::identity(2, 1), &q, &Matrix::identity(1, 1)).unwrap();
        assert_eq!(s.p, q);
        assert_eq!(s.k, Matrix::zeros(1, 2));
    }

    #[test]
    fn scalar_golden_ratio() {
        let one = Matrix::identity(1, 1);
        let s = discrete_lqr(&one, &one, &one, &one).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(s.p[(0, 0)], phi, epsilon = 1e-10);
        assert_relative_eq!(s.k[(0, 0)], phi / (phi + 1.0), epsilon = 1e-10);
    }

    #[test]
    fn closed_loop_is_stable() {
        let a = Matrix::from_row_slice(2, 2, &[1.1, 0.3, 0.0, 0.95]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let s = discrete_lqr(&a, &b, &Matrix::identity(2, 2), &Matrix::identity(1, 1)).unwrap();
        let cl = &a - &b * &s.k;
        let radius = cl.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(radius < 1.0);
    }

    #[test]
    fn unstabilizable_pair_fails() {
        let a = Matrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
        let b = Matrix::from_row_slice(2, 1, &[0.0, 1.0]);
        assert!(discrete_lqr(&a, &b, &Matrix::identity(2, 2), &Matrix::identity(1, 1)).is_err());
    }
}
