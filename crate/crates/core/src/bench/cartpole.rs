//! Cartpole stabilization around the upright equilibrium with an LQR
//! controller designed on wrong parameters and random-feature adaptation.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adapt::{AdaptationLaw, FrozenLaw, GradFn, LawKind, LawSpec, VelocityGradientLaw};
use crate::bench::features::RandomFeatureBank;
use crate::bench::lqr::discrete_lqr;
use crate::dynamics::{rollout_coupled, NoiseSpec, RolloutOptions, SystemModel, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::linalg::{derive_seed, Matrix, Vector};

/// Masses in the same units as the force input, length in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CartpoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_length: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl CartpoleParams {
    pub fn truth() -> Self {
        CartpoleParams {
            cart_mass: 1.0,
            pole_mass: 1.0,
            pole_length: 1.0,
            gravity: 9.81,
            dt: 0.01,
        }
    }

    pub fn design() -> Self {
        CartpoleParams {
            cart_mass: 0.45,
            pole_mass: 0.45,
            pole_length: 0.8,
            ..Self::truth()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.cart_mass, self.pole_mass, self.pole_length, self.gravity, self.dt];
        if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config(format!("cartpole parameters must be positive: {self:?}")))
        }
    }
}

/// Upright equilibrium `(q, q̇, θ, θ̇) = (0, 0, π, 0)`.
pub fn equilibrium() -> Vector {
    Vector::from_vec(vec![0.0, 0.0, PI, 0.0])
}

/// Time derivative of `(q, q̇, θ, θ̇)` under horizontal force `u`.
pub fn cartpole_continuous(p: &CartpoleParams, x: &Vector, u: f64) -> Vector {
    let (qd, th, thd) = (x[1], x[2], x[3]);
    let (s, c) = th.sin_cos();
    let den = p.cart_mass + p.pole_mass * s * s;
    let qdd = (u + p.pole_mass * s * (p.pole_length * thd * thd + p.gravity * c)) / den;
    let thdd = (-u * c - p.pole_mass * p.pole_length * thd * thd * c * s - (p.cart_mass + p.pole_mass) * p.gravity * s)
        / (p.pole_length * den);
    Vector::from_vec(vec![qd, qdd, thd, thdd])
}

/// One classical RK4 step of length `dt` with the force held.
pub fn rk4_step(p: &CartpoleParams, x: &Vector, u: f64) -> Vector {
    let h = p.dt;
    let k1 = cartpole_continuous(p, x, u);
    let k2 = cartpole_continuous(p, &(x + &k1 * (h / 2.0)), u);
    let k3 = cartpole_continuous(p, &(x + &k2 * (h / 2.0)), u);
    let k4 = cartpole_continuous(p, &(x + &k3 * h), u);
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Energy of the unforced system; conserved along exact trajectories.
pub fn energy(p: &CartpoleParams, x: &Vector) -> f64 {
    let (qd, th, thd) = (x[1], x[2], x[3]);
    0.5 * (p.cart_mass + p.pole_mass) * qd * qd
        + p.pole_mass * p.pole_length * qd * thd * th.cos()
        + 0.5 * p.pole_mass * p.pole_length * p.pole_length * thd * thd
        - p.pole_mass * p.gravity * p.pole_length * th.cos()
}

/// Central-difference linearization of the RK4 step at `(x, u)`.
pub fn linearize(p: &CartpoleParams, x: &Vector, u: f64) -> (Matrix, Matrix) {
    let e = 1e-6;
    let mut a = Matrix::zeros(4, 4);
    for i in 0..4 {
        let mut d = Vector::zeros(4);
        d[i] = e;
        a.set_column(i, &((rk4_step(p, &(x + &d), u) - rk4_step(p, &(x - &d), u)) / (2.0 * e)));
    }
    let b = (rk4_step(p, x, u + e) - rk4_step(p, x, u - e)) / (2.0 * e);
    (a, Matrix::from_column_slice(4, 1, b.as_slice()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CartpoleConfig {
    pub truth: CartpoleParams,
    pub design: CartpoleParams,
    pub q_weight: f64,
    pub r_weight: f64,
    pub features: usize,
    pub feature_seed: u64,
    pub radius: f64,
    pub lambda: f64,
    pub horizon: usize,
    pub trajectories: usize,
    /// Half-width of the ℓ∞ box of initial conditions around the equilibrium.
    pub init_radius: f64,
    pub init_seed: u64,
    /// Angle error beyond which the pole counts as fallen.
    pub fall_angle: f64,
}

impl Default for CartpoleConfig {
    fn default() -> Self {
        CartpoleConfig {
            truth: CartpoleParams::truth(),
            design: CartpoleParams::design(),
            q_weight: 1.0,
            r_weight: 0.5,
            features: 400,
            feature_seed: 0,
            radius: 10.0,
            lambda: 1.0,
            horizon: 5000,
            trajectories: 500,
            init_radius: 0.5,
            init_seed: 1,
            fall_angle: PI / 2.0,
        }
    }
}

/// The model in error coordinates `e = x − x_eq`. The nominal map is the
/// design-parameter step under `u = −Ke`; the adaptive side runs the true
/// parameters. `B` is the design step's sensitivity to the force.
pub struct CartpoleExperiment {
    pub model: SystemModel,
    pub riccati: Matrix,
    pub gain: Matrix,
    /// `∇Q(e) = Pe` for `Q(e) = ½eᵀPe`.
    pub grad_q: GradFn,
    pub law: LawSpec,
    pub bank: Arc<RandomFeatureBank>,
}

pub fn build_cartpole_experiment(cfg: &CartpoleConfig) -> Result<CartpoleExperiment> {
    cfg.truth.validate()?;
    cfg.design.validate()?;
    if cfg.features == 0 || cfg.horizon == 0 {
        return Err(Error::Config("cartpole needs at least one feature and one step".into()));
    }
    let xeq = equilibrium();
    let (a, b) = linearize(&cfg.design, &xeq, 0.0);
    let lqr = discrete_lqr(&a, &b, &(Matrix::identity(4, 4) * cfg.q_weight), &Matrix::from_element(1, 1, cfg.r_weight))?;
    let k = lqr.k.clone();
    let bank = Arc::new(RandomFeatureBank::new(cfg.features, 4, cfg.feature_seed));

    let design = cfg.design;
    let truth = cfg.truth;
    let (k_nom, k_b, k_plant) = (k.clone(), k.clone(), k.clone());
    let (x_nom, x_b, x_y, x_plant) = (xeq.clone(), xeq.clone(), xeq.clone(), xeq.clone());
    let fb = |k: &Matrix, e: &Vector| -(k * e)[0];
    let bank_y = bank.clone();
    let fall = cfg.fall_angle;
    let model = SystemModel::builder(4, 1, cfg.features)
        .nominal(move |e, _| rk4_step(&design, &(&x_nom + e), fb(&k_nom, e)) - &x_nom)
        .input_matrix(move |e, _| {
            let x = &x_b + e;
            let u0 = fb(&k_b, e);
            let h = 1e-6;
            let col = (rk4_step(&design, &x, u0 + h) - rk4_step(&design, &x, u0 - h)) / (2.0 * h);
            Matrix::from_column_slice(4, 1, col.as_slice())
        })
        .basis(move |e, _| bank_y.row(&(&x_y + e)))
        .param_radius(cfg.radius)
        .op_norm_bound((cfg.features as f64).sqrt())
        .plant(move |e, _, applied| rk4_step(&truth, &(&x_plant + e), fb(&k_plant, e) + applied[0]) - &x_plant)
        .diverged_when(move |e| e[2].abs() > fall)
        .build()?;

    let p = lqr.p.clone();
    Ok(CartpoleExperiment {
        model,
        riccati: lqr.p,
        gain: k,
        grad_q: Arc::new(move |e: &Vector, _| &p * e),
        law: LawSpec {
            kind: LawKind::Vg,
            radius: cfg.radius,
            lambda: cfg.lambda,
            eta: 1.0,
            gain: None,
        },
        bank,
    })
}

/// Initial error states uniform in the ℓ∞ box, one seed per trajectory.
pub fn initial_conditions(cfg: &CartpoleConfig) -> Vec<Vector> {
    (0..cfg.trajectories)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.init_seed, i as u64));
            Vector::from_fn(4, |_, _| rng.random_range(-cfg.init_radius..=cfg.init_radius))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CartpoleStudy {
    pub adapt: bool,
    /// `(1/T)Σ_{t<T}‖x_t − x_eq‖²`, infinite for diverged trajectories.
    pub average_costs: Vec<f64>,
    pub diverged: Vec<bool>,
}

impl CartpoleStudy {
    pub fn fraction_below(&self, level: f64) -> f64 {
        self.average_costs.iter().filter(|&&c| c < level).count() as f64 / self.average_costs.len().max(1) as f64
    }

    pub fn fraction_diverged(&self) -> f64 {
        self.diverged.iter().filter(|&&d| d).count() as f64 / self.diverged.len().max(1) as f64
    }
}

/// One trajectory from error state `e0` with the velocity gradient law
/// (`adapt`) or with the estimate frozen at zero. No comparator is simulated.
pub fn cartpole_rollout(exp: &CartpoleExperiment, cfg: &CartpoleConfig, e0: &Vector, adapt: bool) -> Result<TrajectoryRecord> {
    let zero = Vector::zeros(cfg.features);
    let mut law: Box<dyn AdaptationLaw> = if adapt {
        Box::new(VelocityGradientLaw::new(zero, cfg.radius, cfg.lambda, exp.grad_q.clone())?)
    } else {
        Box::new(FrozenLaw::new(zero))
    };
    let opts = RolloutOptions {
        simulate_comparator: false,
        ..RolloutOptions::default()
    };
    rollout_coupled(&exp.model, e0, cfg.horizon, law.as_mut(), &NoiseSpec::Zero, 0, &opts)
}

/// `(1/T)Σ_{t<T}‖x_t − x_eq‖²`, infinite when the record diverged.
pub fn average_cost(rec: &TrajectoryRecord, horizon: usize) -> f64 {
    if rec.diverged() || rec.states_adaptive.len() < horizon {
        return f64::INFINITY;
    }
    (0..horizon).map(|t| rec.states_adaptive.norm_sq(t)).sum::<f64>() / horizon as f64
}

/// Runs every initial condition, in parallel.
pub fn run_study(cfg: &CartpoleConfig, adapt: bool) -> Result<CartpoleStudy> {
    let exp = build_cartpole_experiment(cfg)?;
    let results: Vec<Result<(f64, bool)>> = initial_conditions(cfg)
        .par_iter()
        .map(|e0| {
            let rec = cartpole_rollout(&exp, cfg, e0, adapt)?;
            Ok((average_cost(&rec, cfg.horizon), rec.diverged()))
        })
        .collect();
    let pairs = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CartpoleStudy {
        adapt,
        average_costs: pairs.iter().map(|p| p.0).collect(),
        diverged: pairs.iter().map(|p| p.1).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn upright_is_equilibrium() {
        let d = cartpole_continuous(&CartpoleParams::truth(), &equilibrium(), 0.0);
        assert!(d.norm() < 1e-14);
    }

    #[test]
    fn hand_derivative_at_upright_with_unit_force() {
        let p = CartpoleParams {
            gravity: 9.81,
            ..CartpoleParams::truth()
        };
        let d = cartpole_continuous(&p, &equilibrium(), 1.0);
        assert_relative_eq!(d[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(d[3], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unforced_energy_is_conserved() {
        let p = CartpoleParams::truth();
        let mut x = Vector::from_vec(vec![0.0, 0.1, 0.4, -0.2]);
        let e0 = energy(&p, &x);
        for _ in 0..100 {
            x = rk4_step(&p, &x, 0.0);
        }
        let drift = (energy(&p, &x) - e0).abs();
        assert!(drift < 1e-6, "{drift}");
    }

    #[test]
    fn rk4_half_step_consistency() {
        let p = CartpoleParams::truth();
        let half = CartpoleParams { dt: 0.005, ..p };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = equilibrium() + Vector::from_fn(4, |_, _| rng.random_range(-0.5..0.5));
            let u = rng.random_range(-2.0..2.0);
            let one = rk4_step(&p, &x, u);
            let two = rk4_step(&half, &rk4_step(&half, &x, u), u);
            assert!((one - two).amax() < 1e-8);
        }
    }

    #[test]
    fn lqr_from_design_stabilizes_design_linearization() {
        let cfg = CartpoleConfig::default();
        let exp = build_cartpole_experiment(&cfg).unwrap();
        let (a, b) = linearize(&cfg.design, &equilibrium(), 0.0);
        let cl = a - b * &exp.gain;
        let radius = cl.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(radius < 1.0);
        assert!(exp.model.check(&[Vector::zeros(4)], &[0]).origin_fixed);
    }

    #[test]
    fn matched_design_needs_no_adaptation() {
        let cfg = CartpoleConfig {
            design: CartpoleParams::truth(),
            trajectories: 8,
            horizon: 5000,
            init_radius: 0.05,
            features: 20,
            ..CartpoleConfig::default()
        };
        let exp = build_cartpole_experiment(&cfg).unwrap();
        let zero = Vector::zeros(cfg.features);
        for e in initial_conditions(&cfg) {
            let plant = crate::dynamics::step_adaptive(&exp.model, &e, 0, &zero, &Vector::zeros(4)).unwrap();
            assert!((plant - exp.model.nominal(&e, 0)).amax() < 1e-15);
        }
        let study = run_study(&cfg, false).unwrap();
        assert_eq!(study.fraction_diverged(), 0.0);
        assert!(study.average_costs.iter().all(|&c| c < 0.05), "{:?}", study.average_costs);
    }

    #[test]
    fn builder_is_deterministic() {
        let cfg = CartpoleConfig {
            features: 10,
            ..CartpoleConfig::default()
        };
        let a = build_cartpole_experiment(&cfg).unwrap();
        let b = build_cartpole_experiment(&cfg).unwrap();
        assert_eq!(a.gain, b.gain);
        assert_eq!(*a.bank, *b.bank);
        assert_eq!(initial_conditions(&cfg), initial_conditions(&cfg));
    }
}
