//! Forward-Euler limit-cycle system with sinusoidal features.
//!
//! `x⁺ = x + τ(−y + x/r − x)`, `y⁺ = y + τ(x + y/r − y)` plus matched
//! feature terms, where `r = ‖(x, y)‖`. The unit circle attracts every
//! nonzero state.

use std::f64::consts::TAU;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adapt::{ogd_gain, LawKind, LawSpec};
use crate::dynamics::{NoiseSpec, SystemModel};
use crate::error::{Error, Result};
use crate::linalg::{fd_jacobian, spectral_norm, Matrix, Vector};
use crate::regret::RegretConstants;
use crate::stability::{annulus_grid, ContractionCertificate, IncrementalStabilityConstants};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitCycleParams {
    pub tau: f64,
    /// Gaussian noise scale; the per-step noise is `√τ·σ·N(0, I)`.
    pub sigma: f64,
    pub features: usize,
    pub seed: u64,
    /// `‖α‖` of the hidden parameter.
    pub alpha_norm: f64,
    /// Projection radius `D`.
    pub radius: f64,
    /// Bound `W` of the bounded-ball noise used for regret runs.
    pub noise_bound: f64,
    pub x0: [f64; 2],
    /// Annulus on which the metric certificate is stated.
    pub annulus: (f64, f64),
}

impl Default for LimitCycleParams {
    fn default() -> Self {
        LimitCycleParams {
            tau: 0.05,
            sigma: 0.1,
            features: 100,
            seed: 7,
            alpha_norm: 0.8,
            radius: 1.0,
            noise_bound: 0.1,
            x0: [2.0, 0.0],
            annulus: (0.5, 2.0),
        }
    }
}

impl LimitCycleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.sigma > 0.0) {
            return Err(Error::Config(format!("tau and sigma must be positive, got ({}, {})", self.tau, self.sigma)));
        }
        if self.features == 0 {
            return Err(Error::Config("limit cycle needs at least one feature".into()));
        }
        if !(self.radius > 0.0) || !(self.alpha_norm >= 0.0) || self.alpha_norm > self.radius {
            return Err(Error::Config(format!(
                "need 0 <= |alpha| = {} <= D = {}",
                self.alpha_norm, self.radius
            )));
        }
        if !(self.noise_bound >= 0.0) {
            return Err(Error::Config("noise bound must be nonnegative".into()));
        }
        let (lo, hi) = self.annulus;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Config(format!("invalid annulus ({lo}, {hi})")));
        }
        Ok(())
    }

    /// Input gain `c` with `B = cI`; chosen so `‖B‖ = ‖Y‖_F bound = c`.
    pub fn input_scale(&self) -> f64 {
        (self.tau * (2.0 * self.features as f64).sqrt()).sqrt()
    }

    pub fn ball_noise(&self) -> NoiseSpec {
        NoiseSpec::BoundedBall { bound: self.noise_bound }
    }

    pub fn gaussian_noise(&self) -> NoiseSpec {
        NoiseSpec::ScaledGaussian {
            sigma: self.sigma,
            tau: self.tau,
        }
    }
}

/// Nominal map; the origin is kept fixed.
pub fn nominal_map(tau: f64, z: &Vector) -> Vector {
    let (x, y) = (z[0], z[1]);
    let r = x.hypot(y);
    if r == 0.0 {
        return z.clone();
    }
    Vector::from_vec(vec![x + tau * (-y + x / r - x), y + tau * (x + y / r - y)])
}

/// Radius after one nominal step from radius `r`.
pub fn radial_step(tau: f64, r: f64) -> f64 {
    (r + tau * (1.0 - r)).hypot(tau * r)
}

/// `∂r⁺/∂r` of [`radial_step`].
pub fn radial_derivative(tau: f64, r: f64) -> f64 {
    let a = r + tau * (1.0 - r);
    (a * (1.0 - tau) + tau * tau * r) / radial_step(tau, r)
}

/// `max (∂r⁺/∂r)²` over `count` evenly spaced radii in `[r_lo, r_hi]`.
pub fn radial_rate(tau: f64, r_lo: f64, r_hi: f64, count: usize) -> f64 {
    let n = count.max(2);
    (0..n)
        .map(|i| r_lo + (r_hi - r_lo) * i as f64 / (n - 1) as f64)
        .map(|r| radial_derivative(tau, r).powi(2))
        .fold(0.0, f64::max)
}

/// `M = J_pᵀJ_p` for the polar map `(x, y) ↦ (r, θ)`; eigenvalues `1` and `1/r²`.
pub fn polar_metric(z: &Vector) -> Matrix {
    let (x, y) = (z[0], z[1]);
    let r2 = x * x + y * y;
    let r = r2.sqrt();
    let jp = Matrix::from_row_slice(2, 2, &[x / r, y / r, -y / r2, x / r2]);
    jp.transpose() * jp
}

/// Sinusoidal features `sin(ω(s + sin t))` per coordinate of `s`, scaled by `scale`.
fn feature_block(omega: &[f64], s: &Vector, t: usize, scale: f64) -> Matrix {
    let shift = (t as f64).sin();
    Matrix::from_fn(2, omega.len(), |i, j| scale * (omega[j] * (s[i] + shift)).sin())
}

/// Reference point on the unit circle at step `t`, used by the delay variant.
pub fn reference(tau: f64, t: usize) -> Vector {
    let a = tau * t as f64;
    Vector::from_vec(vec![a.cos(), a.sin()])
}

pub struct LimitCycleExperiment {
    pub params: LimitCycleParams,
    pub model: SystemModel,
    /// Polar-metric certificate on the annulus; `gamma` is the radial rate.
    pub certificate: ContractionCertificate,
    /// `(β, ρ, γ) = (√(L/μ), √γ_r, √(L/μ))` from the radial rate `γ_r`.
    pub iss: IncrementalStabilityConstants,
    pub omega: Vec<f64>,
    /// `M`, bounding both `‖B‖` and `‖Y‖`.
    pub op_norm: f64,
}

impl LimitCycleExperiment {
    pub fn x0(&self) -> Vector {
        Vector::from_row_slice(&self.params.x0)
    }

    /// OGD with `G = M²(2DM² + W)`.
    pub fn ogd_law(&self) -> LawSpec {
        LawSpec {
            kind: LawKind::Ogd,
            radius: self.params.radius,
            lambda: 1.0,
            eta: 1.0,
            gain: Some(ogd_gain(self.op_norm, self.params.radius, self.params.noise_bound)),
        }
    }

    pub fn newton_law(&self) -> LawSpec {
        LawSpec {
            kind: LawKind::Newton,
            radius: self.params.radius,
            lambda: 1.0,
            eta: 1.0,
            gain: None,
        }
    }

    pub fn regret_constants(&self, lambda: f64) -> RegretConstants {
        RegretConstants::from_problem(
            self.iss,
            self.x0().norm(),
            self.params.radius,
            self.op_norm,
            self.params.noise_bound,
            lambda,
            self.params.features,
        )
    }
}

/// Draws `ω` uniform on `[0, 2π)` and `α` as a Gaussian direction scaled to
/// `alpha_norm`, both from one seeded stream.
pub fn draw_features(params: &LimitCycleParams) -> (Vec<f64>, Vector) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let omega: Vec<f64> = (0..params.features).map(|_| rng.random_range(0.0..TAU)).collect();
    let g = Vector::from_fn(params.features, |_, _| rng.sample::<f64, _>(StandardNormal));
    let n = g.norm();
    let alpha = if n > 0.0 { g * (params.alpha_norm / n) } else { g };
    (omega, alpha)
}

/// State-dependent features; no input delay allowed.
pub fn build_limit_cycle_experiment(params: &LimitCycleParams) -> Result<LimitCycleExperiment> {
    build(params, false)
}

/// Features evaluated on [`reference`] instead of the state so the basis is
/// known ahead of time.
pub fn build_limit_cycle_delay_experiment(params: &LimitCycleParams) -> Result<LimitCycleExperiment> {
    build(params, true)
}

fn build(params: &LimitCycleParams, delayed: bool) -> Result<LimitCycleExperiment> {
    params.validate()?;
    let (omega, alpha) = draw_features(params);
    let tau = params.tau;
    let c = params.input_scale();
    let scale = tau / c;
    let om = omega.clone();
    let builder = SystemModel::builder(2, 2, params.features)
        .nominal(move |z, _| nominal_map(tau, z))
        .input_matrix(move |_, _| Matrix::identity(2, 2) * c)
        .true_param(alpha)
        .param_radius(params.radius)
        .op_norm_bound(c)
        .state_dependent_basis(!delayed);
    let builder = if delayed {
        builder.basis(move |_, t| feature_block(&om, &reference(tau, t), t, scale))
    } else {
        builder.basis(move |z, t| feature_block(&om, z, t, scale))
    };
    let model = builder.build()?;

    let (lo, hi) = params.annulus;
    let gamma_r = radial_rate(tau, lo, hi, 2001);
    let grid = annulus_grid(lo, hi, 16, 64);
    let l_f = grid
        .iter()
        .map(|z| spectral_norm(&fd_jacobian(&|v: &Vector| nominal_map(tau, v), z)))
        .fold(0.0, f64::max);
    let l_m = grid.iter().map(metric_slope).fold(0.0, f64::max);
    let certificate = ContractionCertificate {
        metric: Arc::new(|z, _| polar_metric(z)),
        gamma: gamma_r,
        mu: 1.0 / (hi * hi),
        l: 1.0 / (lo * lo),
        l_m,
        l_f,
    };
    let kappa = (certificate.l / certificate.mu).sqrt();
    let iss = IncrementalStabilityConstants::new(kappa, gamma_r.sqrt(), kappa)?;

    Ok(LimitCycleExperiment {
        params: params.clone(),
        model,
        certificate,
        iss,
        omega,
        op_norm: c,
    })
}

/// Largest directional-derivative norm of the metric at `z`.
fn metric_slope(z: &Vector) -> f64 {
    let h = 1e-6;
    (0..2)
        .map(|i| {
            let mut d = Vector::zeros(2);
            d[i] = h;
            spectral_norm(&((polar_metric(&(z + &d)) - polar_metric(&(z - &d))) / (2.0 * h)))
        })
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}
