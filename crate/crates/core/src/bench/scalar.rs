//! `x_{t+1} = a·x + (u − α) + w` with `B = Y = 1`.

use std::sync::Arc;

use crate::dynamics::SystemModel;
use crate::error::Result;
use crate::linalg::{Matrix, Vector};
use crate::stability::LyapunovCertificate;

/// Scalar model `f(x) = a·x`, `B = Y = 1`, hidden parameter `alpha`.
/// The basis does not depend on the state, so delays are allowed.
pub fn try_scalar_model(a: f64, alpha: f64, radius: f64, m: f64) -> Result<SystemModel> {
    SystemModel::builder(1, 1, 1)
        .nominal(move |x, _| x * a)
        .input_matrix(|_, _| Matrix::identity(1, 1))
        .basis(|_, _| Matrix::identity(1, 1))
        .true_param(Vector::from_element(1, alpha))
        .param_radius(radius)
        .op_norm_bound(m)
        .state_dependent_basis(false)
        .build()
}

/// As [`try_scalar_model`].
///
/// # Panics
/// If `|alpha| > radius` or a bound is not positive.
pub fn scalar_model(a: f64, alpha: f64, radius: f64, m: f64) -> SystemModel {
    try_scalar_model(a, alpha, radius, m).expect("invalid scalar model parameters")
}

/// `Q(x) = x²` for `f(x) = 0.5x`: decrease rate 0.75, `μ = L_Q = 2`, `L_f = 0.5`.
pub fn scalar_certificate() -> LyapunovCertificate {
    LyapunovCertificate::quadratic(Matrix::identity(1, 1), 0.75, 0.5)
}

/// `Q(x) = x²` for `f(x) = a·x` with `|a| < 1`: rate `1 − a²`.
pub fn scalar_certificate_for(a: f64) -> LyapunovCertificate {
    LyapunovCertificate::quadratic(Matrix::identity(1, 1), 1.0 - a * a, a.abs())
}

/// `∇Q(x) = 2x`.
pub fn scalar_grad_q() -> crate::adapt::GradFn {
    Arc::new(|x: &Vector, _| x * 2.0)
}
