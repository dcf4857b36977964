//! Parameter-update laws and their projection subroutines.

mod projection;

pub use projection::{project_ball, project_ball_weighted};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, lambda_min_sym, spd_inverse, Matrix, Vector};

/// Gradient of a Lyapunov function, `(x, t) -> ∇Q(x, t)`.
pub type GradFn = Arc<dyn Fn(&Vector, usize) -> Vector + Send + Sync>;

/// What a law sees after step `t`: the realized next state plus the model
/// terms evaluated at `(x_t, t)` and the input that was actually applied.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub t: usize,
    pub x: &'a Vector,
    pub x_next: &'a Vector,
    pub nominal: &'a Vector,
    pub input_matrix: &'a Matrix,
    pub basis: &'a Matrix,
    pub applied_input: &'a Vector,
}

impl Observation<'_> {
    /// `M_t = B_tY_t`.
    pub fn regressor(&self) -> Matrix {
        self.input_matrix * self.basis
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateInfo {
    /// Squared norm of the gradient the law stepped along.
    pub grad_sq: f64,
}

pub trait AdaptationLaw: Send {
    fn name(&self) -> &'static str;
    fn estimate(&self) -> &Vector;
    fn update(&mut self, obs: &Observation<'_>) -> Result<UpdateInfo>;
}

/// `∇f_t(α̂_t) = M_tᵀ(x_{t+1} − f(x_t,t) − B_t(ξ_t − Y_tα̂_t))`.
/// Without delay `ξ_t = Y_tα̂_t` and the correction vanishes.
pub fn prediction_gradient(obs: &Observation<'_>, m: &Matrix, alpha_hat: &Vector) -> Vector {
    let correction = obs.input_matrix * (obs.applied_input - obs.basis * alpha_hat);
    m.transpose() * (obs.x_next - obs.nominal - correction)
}

fn check_finite(v: &Vector, step: usize, what: &str) -> Result<()> {
    if all_finite(v) {
        Ok(())
    } else {
        Err(Error::Numerical {
            step,
            message: format!("non-finite {what}"),
        })
    }
}

fn check_radius(radius: f64) -> Result<()> {
    if radius > 0.0 && radius.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("projection radius D must be positive, got {radius}")))
    }
}

/// Never updates. With `α̂ = α` this is the oracle.
#[derive(Debug, Clone)]
pub struct FrozenLaw {
    estimate: Vector,
}

impl FrozenLaw {
    pub fn new(estimate: Vector) -> Self {
        FrozenLaw { estimate }
    }
}

impl AdaptationLaw for FrozenLaw {
    fn name(&self) -> &'static str {
        "frozen"
    }
    fn estimate(&self) -> &Vector {
        &self.estimate
    }
    fn update(&mut self, _obs: &Observation<'_>) -> Result<UpdateInfo> {
        Ok(UpdateInfo::default())
    }
}

/// Velocity gradient with the adaptive rate `η_t = D/√(λ + Σ_{i≤t}‖g_i‖²)`.
#[derive(Clone)]
pub struct VelocityGradientLaw {
    estimate: Vector,
    accum: f64,
    lambda: f64,
    radius: f64,
    grad_q: GradFn,
}

impl VelocityGradientLaw {
    pub fn new(initial: Vector, radius: f64, lambda: f64, grad_q: GradFn) -> Result<Self> {
        check_radius(radius)?;
        if !(lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        Ok(VelocityGradientLaw {
            estimate: project_ball(&initial, radius),
            accum: lambda,
            lambda,
            radius,
            grad_q,
        })
    }

    pub fn grad_norm_accum(&self) -> f64 {
        self.accum
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl AdaptationLaw for VelocityGradientLaw {
    fn name(&self) -> &'static str {
        "vg"
    }
    fn estimate(&self) -> &Vector {
        &self.estimate
    }
    fn update(&mut self, obs: &Observation<'_>) -> Result<UpdateInfo> {
        let dq = (self.grad_q)(obs.x_next, obs.t + 1);
        let g = obs.basis.transpose() * (obs.input_matrix.transpose() * dq);
        check_finite(&g, obs.t, "velocity gradient")?;
        let grad_sq = g.norm_squared();
        // The sum defining η_t includes index t.
        self.accum += grad_sq;
        let eta = self.radius / self.accum.sqrt();
        self.estimate = project_ball(&(&self.estimate - g * eta), self.radius);
        Ok(UpdateInfo { grad_sq })
    }
}

/// `G = M²(2DM² + W)`.
pub fn ogd_gain(m: f64, radius: f64, w: f64) -> f64 {
    m * m * (2.0 * radius * m * m + w)
}

/// Projected online gradient descent with `η_t = D/(G√(t+1))`.
#[derive(Debug, Clone)]
pub struct OgdLaw {
    estimate: Vector,
    radius: f64,
    gain: f64,
}

impl OgdLaw {
    pub fn new(initial: Vector, radius: f64, m: f64, w: f64) -> Result<Self> {
        Self::with_gain(initial, radius, ogd_gain(m, radius, w))
    }

    pub fn with_gain(initial: Vector, radius: f64, gain: f64) -> Result<Self> {
        check_radius(radius)?;
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(Error::Config(format!("gradient bound G must be positive, got {gain}")));
        }
        Ok(OgdLaw {
            estimate: project_ball(&initial, radius),
            radius,
            gain,
        })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn step_size(&self, t: usize) -> f64 {
        self.radius / (self.gain * ((t + 1) as f64).sqrt())
    }
}

impl AdaptationLaw for OgdLaw {
    fn name(&self) -> &'static str {
        "ogd"
    }
    fn estimate(&self) -> &Vector {
        &self.estimate
    }
    fn update(&mut self, obs: &Observation<'_>) -> Result<UpdateInfo> {
        let m = obs.regressor();
        let g = prediction_gradient(obs, &m, &self.estimate);
        check_finite(&g, obs.t, "prediction gradient")?;
        let eta = self.step_size(obs.t);
        let grad_sq = g.norm_squared();
        self.estimate = project_ball(&(&self.estimate - g * eta), self.radius);
        Ok(UpdateInfo { grad_sq })
    }
}

const NEWTON_REFRESH: usize = 512;
const NEWTON_DRIFT_TOL: f64 = 1e-6;

/// Online Newton step with `A_t = λI + Σ_{s≤t} M_sᵀM_s` and projection in the
/// `A_t`-norm. `A⁻¹` is maintained with Woodbury updates.
#[derive(Debug, Clone)]
pub struct OnlineNewtonLaw {
    estimate: Vector,
    info: Matrix,
    info_inv: Matrix,
    lambda: f64,
    eta: f64,
    radius: f64,
    since_refresh: usize,
    probe: Vector,
    refreshes: usize,
}

impl OnlineNewtonLaw {
    pub fn new(initial: Vector, radius: f64, lambda: f64, eta: f64) -> Result<Self> {
        check_radius(radius)?;
        if !(lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        if !(eta >= 1.0) || !eta.is_finite() {
            return Err(Error::Config(format!("online Newton needs eta >= 1, got {eta}")));
        }
        let p = initial.len();
        let probe = Vector::from_fn(p, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }) / (p as f64).sqrt();
        Ok(OnlineNewtonLaw {
            estimate: project_ball(&initial, radius),
            info: Matrix::identity(p, p) * lambda,
            info_inv: Matrix::identity(p, p) / lambda,
            lambda,
            eta,
            radius,
            since_refresh: 0,
            probe,
            refreshes: 0,
        })
    }

    pub fn info_matrix(&self) -> &Matrix {
        &self.info
    }

    pub fn info_inverse(&self) -> &Matrix {
        &self.info_inv
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Number of from-scratch re-inversions performed so far.
    pub fn refreshes(&self) -> usize {
        self.refreshes
    }

    fn drift(&self) -> f64 {
        (&self.info * (&self.info_inv * &self.probe) - &self.probe).norm()
    }

    fn refresh(&mut self, step: usize) -> Result<()> {
        self.info_inv = spd_inverse(&self.info).map_err(|_| Error::Numerical {
            step,
            message: "information matrix lost positive definiteness".into(),
        })?;
        self.since_refresh = 0;
        self.refreshes += 1;
        Ok(())
    }

    fn absorb(&mut self, m: &Matrix, step: usize) -> Result<()> {
        let n = m.nrows();
        self.info += m.transpose() * m;
        // (A + MᵀM)⁻¹ = A⁻¹ − A⁻¹Mᵀ(I + MA⁻¹Mᵀ)⁻¹MA⁻¹
        let am = &self.info_inv * m.transpose();
        let s = Matrix::identity(n, n) + m * &am;
        match s.cholesky() {
            Some(c) => {
                let corr = &am * c.solve(&am.transpose());
                self.info_inv -= corr;
                self.info_inv = (&self.info_inv + self.info_inv.transpose()) * 0.5;
                self.since_refresh += 1;
            }
            None => self.refresh(step)?,
        }
        if self.since_refresh >= NEWTON_REFRESH {
            self.refresh(step)?;
        }
        if self.drift() > NEWTON_DRIFT_TOL {
            self.refresh(step)?;
            if self.drift() > NEWTON_DRIFT_TOL {
                return Err(Error::Numerical {
                    step,
                    message: "information inverse inconsistent after re-inversion".into(),
                });
            }
        }
        Ok(())
    }
}

impl AdaptationLaw for OnlineNewtonLaw {
    fn name(&self) -> &'static str {
        "newton"
    }
    fn estimate(&self) -> &Vector {
        &self.estimate
    }
    fn update(&mut self, obs: &Observation<'_>) -> Result<UpdateInfo> {
        let m = obs.regressor();
        let g = prediction_gradient(obs, &m, &self.estimate);
        check_finite(&g, obs.t, "prediction gradient")?;
        self.absorb(&m, obs.t)?;
        let target = &self.estimate - (&self.info_inv * &g) * self.eta;
        self.estimate = project_ball_weighted(&target, &self.info, self.radius)?;
        Ok(UpdateInfo { grad_sq: g.norm_squared() })
    }
}

/// Projected regularized least squares:
/// `ᾱ_t = V_t⁻¹ Σ M_kᵀφ_k`, `α̂_t = Π[ᾱ_t]` with `φ_k = f + Bξ − x_{k+1}`.
#[derive(Debug, Clone)]
pub struct RlsLaw {
    estimate: Vector,
    unprojected: Vector,
    info: Matrix,
    info_inv: Matrix,
    moment: Vector,
    lambda: f64,
    radius: f64,
}

impl RlsLaw {
    pub fn new(p: usize, radius: f64, lambda: f64) -> Result<Self> {
        check_radius(radius)?;
        if !(lambda > 0.0) {
            return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
        }
        Ok(RlsLaw {
            estimate: Vector::zeros(p),
            unprojected: Vector::zeros(p),
            info: Matrix::identity(p, p) * lambda,
            info_inv: Matrix::identity(p, p) / lambda,
            moment: Vector::zeros(p),
            lambda,
            radius,
        })
    }

    pub fn unprojected(&self) -> &Vector {
        &self.unprojected
    }

    pub fn info_matrix(&self) -> &Matrix {
        &self.info
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl AdaptationLaw for RlsLaw {
    fn name(&self) -> &'static str {
        "rls"
    }
    fn estimate(&self) -> &Vector {
        &self.estimate
    }
    fn update(&mut self, obs: &Observation<'_>) -> Result<UpdateInfo> {
        let m = obs.regressor();
        let phi = obs.nominal + obs.input_matrix * obs.applied_input - obs.x_next;
        check_finite(&phi, obs.t, "least-squares target")?;
        let n = m.nrows();
        self.info += m.transpose() * &m;
        let contribution = m.transpose() * phi;
        self.moment += &contribution;

        let am = &self.info_inv * m.transpose();
        let s = Matrix::identity(n, n) + &m * &am;
        self.info_inv = match s.cholesky() {
            Some(c) => {
                let inv = &self.info_inv - &am * c.solve(&am.transpose());
                (&inv + inv.transpose()) * 0.5
            }
            None => spd_inverse(&self.info)?,
        };
        let mut bar = &self.info_inv * &self.moment;
        let tol = 1e-8 * self.moment.norm().max(1.0);
        if (&self.info * &bar - &self.moment).norm() > tol {
            self.info_inv = spd_inverse(&self.info)?;
            bar = &self.info_inv * &self.moment;
            if (&self.info * &bar - &self.moment).norm() > tol {
                return Err(Error::Numerical {
                    step: obs.t,
                    message: "least-squares solve residual above 1e-8".into(),
                });
            }
        }
        self.unprojected = bar;
        self.estimate = project_ball(&self.unprojected, self.radius);
        Ok(UpdateInfo {
            grad_sq: contribution.norm_squared(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    Vg,
    Ogd,
    Newton,
    Rls,
    Frozen,
}

impl LawKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LawKind::Vg => "vg",
            LawKind::Ogd => "ogd",
            LawKind::Newton => "newton",
            LawKind::Rls => "rls",
            LawKind::Frozen => "frozen",
        }
    }
}

/// Everything needed to build a fresh law instance for one rollout.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawSpec {
    pub kind: LawKind,
    pub radius: f64,
    pub lambda: f64,
    pub eta: f64,
    /// Gradient bound G for online gradient descent.
    pub gain: Option<f64>,
}

impl LawSpec {
    pub fn build(&self, initial: &Vector, grad_q: Option<&GradFn>) -> Result<Box<dyn AdaptationLaw>> {
        Ok(match self.kind {
            LawKind::Frozen => Box::new(FrozenLaw::new(initial.clone())),
            LawKind::Vg => {
                let g = grad_q.ok_or_else(|| {
                    Error::Config("velocity gradient law needs a Lyapunov gradient".into())
                })?;
                Box::new(VelocityGradientLaw::new(initial.clone(), self.radius, self.lambda, g.clone())?)
            }
            LawKind::Ogd => {
                let gain = self
                    .gain
                    .ok_or_else(|| Error::Config("online gradient descent needs G (set M, D and W)".into()))?;
                Box::new(OgdLaw::with_gain(initial.clone(), self.radius, gain)?)
            }
            LawKind::Newton => Box::new(OnlineNewtonLaw::new(initial.clone(), self.radius, self.lambda, self.eta)?),
            LawKind::Rls => Box::new(RlsLaw::new(initial.len(), self.radius, self.lambda)?),
        })
    }
}

/// Lower bound `A ⪰ λI` on an information matrix (tolerance 1e-9).
pub fn info_dominates_ridge(info: &Matrix, lambda: f64) -> bool {
    lambda_min_sym(info) >= lambda - 1e-9
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn one() -> Matrix {
        Matrix::identity(1, 1)
    }

    /// Scalar system f=0.5x, B=Y=1, α=1, stepped from x=1 with α̂=0 and no noise.
    struct ScalarStep {
        x: Vector,
        x_next: Vector,
        f: Vector,
        b: Matrix,
        y: Matrix,
        u: Vector,
    }

    fn scalar_step(alpha_hat: f64) -> ScalarStep {
        let x = 1.0;
        let f = 0.5 * x;
        ScalarStep {
            x: v(&[x]),
            x_next: v(&[f + (alpha_hat - 1.0)]),
            f: v(&[f]),
            b: one(),
            y: one(),
            u: v(&[alpha_hat]),
        }
    }

    fn obs(s: &ScalarStep, t: usize) -> Observation<'_> {
        Observation {
            t,
            x: &s.x,
            x_next: &s.x_next,
            nominal: &s.f,
            input_matrix: &s.b,
            basis: &s.y,
            applied_input: &s.u,
        }
    }

    #[test]
    fn vg_scalar_hand_example() {
        let s = scalar_step(0.0);
        let gq: GradFn = Arc::new(|x: &Vector, _| x * 2.0);
        let mut law = VelocityGradientLaw::new(v(&[0.0]), 1.0, 1.0, gq).unwrap();
        let info = law.update(&obs(&s, 0)).unwrap();
        assert_eq!(info.grad_sq, 1.0);
        assert_eq!(law.grad_norm_accum(), 2.0);
        assert_relative_eq!(law.estimate()[0], 1.0 / 2f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn vg_zero_gradient_leaves_state() {
        let s = scalar_step(0.3);
        let gq: GradFn = Arc::new(|x: &Vector, _| x * 0.0);
        let mut law = VelocityGradientLaw::new(v(&[0.3]), 1.0, 1.0, gq).unwrap();
        law.update(&obs(&s, 4)).unwrap();
        assert_eq!(law.estimate()[0], 0.3);
        assert_eq!(law.grad_norm_accum(), 1.0);
    }

    #[test]
    fn vg_fixed_point_when_cancelled() {
        // α̂ = α and ∇Q(f(x)) = 0 because f(x) sits at the minimizer.
        let x = v(&[0.0]);
        let f = v(&[0.0]);
        let b = one();
        let y = one();
        let u = v(&[1.0]);
        let o = Observation {
            t: 0,
            x: &x,
            x_next: &f,
            nominal: &f,
            input_matrix: &b,
            basis: &y,
            applied_input: &u,
        };
        let gq: GradFn = Arc::new(|x: &Vector, _| x * 2.0);
        let mut law = VelocityGradientLaw::new(v(&[1.0]), 1.0, 1.0, gq).unwrap();
        law.update(&o).unwrap();
        assert_eq!(law.estimate()[0], 1.0);
    }

    #[test]
    fn ogd_scalar_hand_example() {
        let s = scalar_step(0.0);
        let mut law = OgdLaw::new(v(&[0.0]), 1.0, 1.0, 0.0).unwrap();
        assert_eq!(law.gain(), 2.0);
        let info = law.update(&obs(&s, 0)).unwrap();
        assert_eq!(info.grad_sq, 1.0);
        assert_eq!(law.estimate()[0], 0.5);
    }

    #[test]
    fn ogd_at_truth_does_not_move() {
        let s = scalar_step(1.0);
        let mut law = OgdLaw::new(v(&[1.0]), 1.0, 1.0, 0.0).unwrap();
        let info = law.update(&obs(&s, 3)).unwrap();
        assert_eq!(info.grad_sq, 0.0);
        assert_eq!(law.estimate()[0], 1.0);
    }

    #[test]
    fn ogd_rejects_missing_gain() {
        let spec = LawSpec {
            kind: LawKind::Ogd,
            radius: 1.0,
            lambda: 1.0,
            eta: 1.0,
            gain: None,
        };
        assert!(matches!(spec.build(&v(&[0.0]), None), Err(Error::Config(_))));
    }

    #[test]
    fn delayed_gradient_uses_applied_input() {
        // With ξ ≠ Yα̂ the gradient still equals MᵀM(α̂ − α) when w = 0.
        let (alpha, alpha_hat, xi) = (1.0, 0.2, -0.7);
        let x = v(&[1.0]);
        let f = v(&[0.5]);
        let b = Matrix::from_element(1, 1, 2.0);
        let y = Matrix::from_element(1, 1, 0.5);
        let next = v(&[0.5 + 2.0 * (xi - 0.5 * alpha)]);
        let u = v(&[xi]);
        let o = Observation {
            t: 0,
            x: &x,
            x_next: &next,
            nominal: &f,
            input_matrix: &b,
            basis: &y,
            applied_input: &u,
        };
        let m = o.regressor();
        let g = prediction_gradient(&o, &m, &v(&[alpha_hat]));
        assert_relative_eq!(g[0], alpha_hat - alpha, epsilon = 1e-15);
    }

    #[test]
    fn newton_scalar_hand_example() {
        let s = scalar_step(0.0);
        let mut law = OnlineNewtonLaw::new(v(&[0.0]), 1.0, 1.0, 1.0).unwrap();
        law.update(&obs(&s, 0)).unwrap();
        assert_eq!(law.info_matrix()[(0, 0)], 2.0);
        assert_relative_eq!(law.estimate()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn newton_zero_regressor_changes_nothing() {
        let x = v(&[1.0, 2.0]);
        let f = v(&[0.5, 1.0]);
        let b = Matrix::zeros(2, 1);
        let y = Matrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let a0 = v(&[0.1, 0.2, 0.3]);
        let u = &y * &a0;
        let o = Observation {
            t: 0,
            x: &x,
            x_next: &f,
            nominal: &f,
            input_matrix: &b,
            basis: &y,
            applied_input: &u,
        };
        let mut law = OnlineNewtonLaw::new(a0.clone(), 1.0, 2.0, 1.0).unwrap();
        law.update(&o).unwrap();
        assert_eq!(law.estimate(), &a0);
        assert_eq!(law.info_matrix(), &(Matrix::identity(3, 3) * 2.0));
    }

    #[test]
    fn newton_woodbury_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = 2;
        let mut law = OnlineNewtonLaw::new(Vector::zeros(p), 10.0, 0.5, 1.0).unwrap();
        let mut direct = Matrix::identity(p, p) * 0.5;
        for t in 0..50 {
            let m = Matrix::from_fn(2, p, |_, _| rng.random_range(-1.0..1.0));
            law.absorb(&m, t).unwrap();
            direct += m.transpose() * &m;
            let inv = direct.clone().try_inverse().unwrap();
            assert!((law.info_inverse() - &inv).norm() <= 1e-10 * inv.norm().max(1.0));
        }
    }

    #[test]
    fn newton_inverse_stays_consistent_over_many_updates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = 6;
        let mut law = OnlineNewtonLaw::new(Vector::zeros(p), 1.0, 1.0, 1.0).unwrap();
        for t in 0..1500 {
            let m = Matrix::from_fn(2, p, |_, _| rng.random_range(-1.0..1.0));
            law.absorb(&m, t).unwrap();
            let prod = law.info_matrix() * law.info_inverse();
            assert!((prod - Matrix::identity(p, p)).norm() <= 1e-8);
            assert!(info_dominates_ridge(law.info_matrix(), 1.0));
        }
        assert!(law.refreshes() >= 2);
    }

    #[test]
    fn newton_rejects_small_eta() {
        assert!(OnlineNewtonLaw::new(v(&[0.0]), 1.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn rls_scalar_hand_example_and_prior() {
        let law = RlsLaw::new(1, 1.0, 1.0).unwrap();
        assert_eq!(law.estimate()[0], 0.0);
        let mut law = law;
        let s = scalar_step(0.0);
        law.update(&obs(&s, 0)).unwrap();
        assert_eq!(law.info_matrix()[(0, 0)], 2.0);
        assert_relative_eq!(law.unprojected()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(law.estimate()[0], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn rls_matches_ridge_closed_form() {
        // M_k = 1, w = 0: ᾱ_t = t/(t+λ)·α.
        let lambda = 2.0;
        let alpha = 0.8;
        let mut law = RlsLaw::new(1, 1.0, lambda).unwrap();
        for t in 0..500 {
            let a = law.estimate()[0];
            let s = ScalarStep {
                x: v(&[0.0]),
                x_next: v(&[a - alpha]),
                f: v(&[0.0]),
                b: one(),
                y: one(),
                u: v(&[a]),
            };
            law.update(&obs(&s, t)).unwrap();
            let k = (t + 1) as f64;
            assert_relative_eq!(law.estimate()[0], k / (k + lambda) * alpha, epsilon = 1e-12);
        }
    }

    #[test]
    fn auer_lemma_on_random_sequences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let len = rng.random_range(1..300);
            let g: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..5.0)).collect();
            let (lhs, mid, rhs) = crate::regret::auer_sums(&g);
            assert!(lhs <= mid * (1.0 + 1e-9));
            assert!(mid <= rhs * (1.0 + 1e-9));
        }
    }

    proptest! {
        #[test]
        fn ogd_step_bounded_by_eta_g(seed in 0u64..5000, t in 0usize..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = 3;
            let radius = 1.0;
            let m_bound = 1.0;
            let w = 0.2;
            let a0 = project_ball(&Vector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)), radius);
            let alpha = project_ball(&Vector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)), radius);
            let mut law = OgdLaw::new(a0.clone(), radius, m_bound, w).unwrap();
            let b = project_ball(&Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)), 1.0);
            let b = Matrix::from_column_slice(2, 1, b.as_slice());
            let yrow = project_ball(&Vector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)), 1.0);
            let y = Matrix::from_row_slice(1, p, yrow.as_slice());
            let noise = project_ball(&Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0)), w);
            let x = Vector::zeros(2);
            let f = Vector::zeros(2);
            let u = &y * &a0;
            let next = &f + &b * (&u - &y * &alpha) + noise;
            let o = Observation { t, x: &x, x_next: &next, nominal: &f, input_matrix: &b, basis: &y, applied_input: &u };
            law.update(&o).unwrap();
            let shift = (law.estimate() - &a0).norm();
            prop_assert!(shift <= law.step_size(t) * law.gain() * (1.0 + 1e-12));
            prop_assert!(law.estimate().norm() <= radius + 1e-12);
        }

        #[test]
        fn vg_accumulator_monotone_and_estimate_bounded(gs in prop::collection::vec(-3.0f64..3.0, 1..50)) {
            let gq: GradFn = Arc::new(|x: &Vector, _| x.clone());
            let mut law = VelocityGradientLaw::new(v(&[0.0]), 0.7, 1.0, gq).unwrap();
            let mut prev = law.grad_norm_accum();
            for (t, g) in gs.iter().enumerate() {
                let x = v(&[0.0]);
                let next = v(&[*g]);
                let f = v(&[0.0]);
                let b = one();
                let y = one();
                let u = law.estimate().clone();
                let o = Observation { t, x: &x, x_next: &next, nominal: &f, input_matrix: &b, basis: &y, applied_input: &u };
                law.update(&o).unwrap();
                prop_assert!(law.grad_norm_accum() >= prev);
                prop_assert!(law.grad_norm_accum() >= 1.0);
                prop_assert!(law.estimate().norm() <= 0.7 + 1e-12);
                prev = law.grad_norm_accum();
            }
        }
    }
}
