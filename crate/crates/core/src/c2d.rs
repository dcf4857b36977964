//! Zero-order-hold discretization of continuous-time closed loops and the
//! sampling-period budgets that preserve Lyapunov decrease and contraction.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::DiscreteMap;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, fd_jacobian, lambda_max_sym, spectral_norm, sym_eigen, Matrix, Vector};
use crate::stability::Witness;

pub type VectorField = Arc<dyn Fn(&Vector, &Vector, f64) -> Vector + Send + Sync>;
pub type Policy = Arc<dyn Fn(&Vector, f64) -> Vector + Send + Sync>;

pub const DEFAULT_SUBSTEPS: usize = 16;
pub const MAX_SUBSTEPS: usize = 1024;
pub const DEFAULT_GAMMA_SPLIT: f64 = 0.5;
const LYAPUNOV_BUDGET_CONSTANT: f64 = 895.0;
const CONTRACTION_BUDGET_CONSTANT: f64 = 1463.0;

/// `ẋ = f(x, u, t)` closed with `u = π(x, t)`, with regularity constants
/// `(L_f, L_π)`.
#[derive(Clone)]
pub struct ContinuousPlant {
    pub state_dim: usize,
    pub input_dim: usize,
    pub field: VectorField,
    pub policy: Policy,
    pub l_f: f64,
    pub l_pi: f64,
}

impl std::fmt::Debug for ContinuousPlant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContinuousPlant")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("l_f", &self.l_f)
            .field("l_pi", &self.l_pi)
            .finish()
    }
}

impl ContinuousPlant {
    pub fn new(
        state_dim: usize,
        input_dim: usize,
        field: impl Fn(&Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
        policy: impl Fn(&Vector, f64) -> Vector + Send + Sync + 'static,
        l_f: f64,
        l_pi: f64,
    ) -> Self {
        ContinuousPlant {
            state_dim,
            input_dim,
            field: Arc::new(field),
            policy: Arc::new(policy),
            l_f,
            l_pi,
        }
    }

    /// `f(0,0,t) = 0` and `π(0,t) = 0` at the probed times.
    pub fn check_equilibrium(&self, times: &[f64]) -> bool {
        let zx = Vector::zeros(self.state_dim);
        let zu = Vector::zeros(self.input_dim);
        times.iter().all(|&t| {
            (self.field)(&zx, &zu, t).norm() <= 1e-12 && (self.policy)(&zx, t).norm() <= 1e-12
        })
    }
}

fn rk4_held(plant: &ContinuousPlant, x: &Vector, u: &Vector, s: f64, tau: f64, substeps: usize) -> Result<Vector> {
    let h = tau / substeps as f64;
    let f = |z: &Vector, t: f64| (plant.field)(z, u, t);
    let mut z = x.clone();
    for i in 0..substeps {
        let t = s + h * i as f64;
        let k1 = f(&z, t);
        let k2 = f(&(&z + &k1 * (h / 2.0)), t + h / 2.0);
        let k3 = f(&(&z + &k2 * (h / 2.0)), t + h / 2.0);
        let k4 = f(&(&z + &k3 * h), t + h);
        z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !all_finite(&z) {
            return Err(Error::Numerical {
                step: i,
                message: format!("flow map left the finite range at substep {i}"),
            });
        }
    }
    Ok(z)
}

/// `Φ(x, s, s+τ)`: integrates `ξ̇ = f(ξ, π(x,s), t)` from `s` with classical
/// RK4 over `substeps` equal steps.
pub fn flow_map(plant: &ContinuousPlant, x: &Vector, s: f64, tau: f64, substeps: usize) -> Result<Vector> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("hold period must be positive, got {tau}")));
    }
    if substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    let u = (plant.policy)(x, s);
    rk4_held(plant, x, &u, s, tau, substeps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub state: Vector,
    pub substeps: usize,
    /// Whether two successive refinements agreed to 1e-9 relative.
    pub converged: bool,
}

/// Starts at 16 substeps and doubles until successive answers agree to 1e-9
/// relative, up to 1024.
pub fn flow_map_auto(plant: &ContinuousPlant, x: &Vector, s: f64, tau: f64) -> Result<FlowResult> {
    let mut n = DEFAULT_SUBSTEPS;
    let mut prev = flow_map(plant, x, s, tau, n)?;
    while n < MAX_SUBSTEPS {
        n *= 2;
        let next = flow_map(plant, x, s, tau, n)?;
        let scale = next.norm().max(prev.norm());
        if (&next - &prev).norm() <= 1e-9 * scale {
            return Ok(FlowResult {
                state: next,
                substeps: n,
                converged: true,
            });
        }
        prev = next;
    }
    Ok(FlowResult {
        state: prev,
        substeps: n,
        converged: false,
    })
}

/// `g(x, t) = Φ(x, τt, τ(t+1))` at a fixed substep count, so that finite
/// differences of `g` see one smooth map.
#[derive(Clone, Debug)]
pub struct ZohMap {
    pub plant: ContinuousPlant,
    pub tau: f64,
    pub substeps: usize,
}

pub fn zoh_discretize(plant: &ContinuousPlant, tau: f64, substeps: usize) -> Result<ZohMap> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("hold period must be positive, got {tau}")));
    }
    if substeps == 0 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    Ok(ZohMap {
        plant: plant.clone(),
        tau,
        substeps,
    })
}

impl DiscreteMap for ZohMap {
    fn dim(&self) -> usize {
        self.plant.state_dim
    }

    fn apply(&self, x: &Vector, t: usize) -> Vector {
        flow_map(&self.plant, x, self.tau * t as f64, self.tau, self.substeps)
            .unwrap_or_else(|_| Vector::from_element(x.len(), f64::NAN))
    }
}

/// One sampling-period budget with the terms of its minimum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetEntry {
    pub tau: f64,
    pub terms: Vec<f64>,
    /// Whether the regularity hypotheses behind the budget hold.
    pub gates_ok: bool,
}

fn budget(terms: Vec<f64>, gates_ok: bool) -> BudgetEntry {
    let tau = terms.iter().copied().fold(f64::INFINITY, f64::min);
    BudgetEntry { tau, terms, gates_ok }
}

fn check_split(gamma_split: f64) -> Result<()> {
    if gamma_split > 0.0 && gamma_split < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("gamma_split must lie in (0, 1), got {gamma_split}")))
    }
}

/// `min{1/L_f, 1/(γρ), 2(1−γ)ρμ/(895 L_Q L_f² L_π²)}` with `γ = gamma_split`.
/// Gates: `min{L_f, L_π} ≥ 1` and `L_Q ≥ 1`.
pub fn tau_budget_lyapunov(l_f: f64, l_pi: f64, l_q: f64, rho: f64, mu: f64, gamma_split: f64) -> Result<BudgetEntry> {
    check_split(gamma_split)?;
    let terms = vec![
        1.0 / l_f,
        1.0 / (gamma_split * rho),
        2.0 * (1.0 - gamma_split) * rho * mu / (LYAPUNOV_BUDGET_CONSTANT * l_q * l_f * l_f * l_pi * l_pi),
    ];
    Ok(budget(terms, l_f.min(l_pi) >= 1.0 && l_q >= 1.0))
}

/// `min{1/L_f, 1/(2λγ), 2λ(1−γ)μ/(1463 D² L L_M L_f² L_π²)}` with `γ = gamma_split`.
/// Gates: `min{L_f, L_π} ≥ 1`, `min{L, L_M} ≥ 1`, `D ≥ 1`.
#[allow(clippy::too_many_arguments)]
pub fn tau_budget_contraction(
    l_f: f64,
    l_pi: f64,
    l_m: f64,
    lambda: f64,
    mu: f64,
    l: f64,
    radius: f64,
    gamma_split: f64,
) -> Result<BudgetEntry> {
    check_split(gamma_split)?;
    let terms = vec![
        1.0 / l_f,
        1.0 / (2.0 * lambda * gamma_split),
        2.0 * lambda * (1.0 - gamma_split) * mu
            / (CONTRACTION_BUDGET_CONSTANT * radius * radius * l * l_m * l_f * l_f * l_pi * l_pi),
    ];
    Ok(budget(
        terms,
        l_f.min(l_pi) >= 1.0 && l.min(l_m) >= 1.0 && radius >= 1.0,
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct EulerReport {
    /// `‖Φ(x,s,s+τ) − (x + τf(x,π(x,s),s))‖`.
    pub euler_error: f64,
    /// `5τ²L_f²L_π e^{L_fτ}‖x‖`.
    pub euler_bound: f64,
    /// `‖Φ(x,s,s+τ) − x‖`.
    pub flow_deviation: f64,
    /// `(1 + 3L_π)(e^{L_fτ} − 1)‖x‖`.
    pub flow_deviation_bound: f64,
    pub pass: bool,
}

/// Compares the forward-Euler step and the flow deviation with their bounds.
/// The flow is integrated with 1024 substeps.
pub fn verify_euler_error(plant: &ContinuousPlant, x: &Vector, s: f64, tau: f64) -> Result<EulerReport> {
    let phi = flow_map(plant, x, s, tau, MAX_SUBSTEPS)?;
    let u = (plant.policy)(x, s);
    let euler = x + (plant.field)(x, &u, s) * tau;
    let xn = x.norm();
    let euler_error = (&phi - &euler).norm();
    let euler_bound = 5.0 * tau * tau * plant.l_f * plant.l_f * plant.l_pi * (plant.l_f * tau).exp() * xn;
    let flow_deviation = (&phi - x).norm();
    let flow_deviation_bound = (1.0 + 3.0 * plant.l_pi) * (plant.l_f * tau).exp_m1() * xn;
    Ok(EulerReport {
        euler_error,
        euler_bound,
        flow_deviation,
        flow_deviation_bound,
        pass: euler_error <= euler_bound + 1e-14 && flow_deviation <= flow_deviation_bound + 1e-14,
    })
}

/// `Q(x, s)` in continuous time with `⟨∇Q, f⟩ + ∂Q/∂t ≤ −ρQ`,
/// `Q ≥ μ‖x‖²` and `‖∂²Q/∂x²‖ ≤ L_Q`.
#[derive(Clone)]
pub struct ContinuousLyapunov {
    pub q: Arc<dyn Fn(&Vector, f64) -> f64 + Send + Sync>,
    pub rho: f64,
    pub mu: f64,
    pub l_q: f64,
}

/// Metric `M(x, s)` with `JᵀM + MJ + Ṁ ⪯ −2λM`, `μI ⪯ M ⪯ LI` and
/// derivative bound `L_M`.
#[derive(Clone)]
pub struct ContinuousContraction {
    pub metric: Arc<dyn Fn(&Vector, f64) -> Matrix + Send + Sync>,
    pub lambda: f64,
    pub mu: f64,
    pub l: f64,
    pub l_m: f64,
    /// State-norm radius `D` the guarantee covers.
    pub radius: f64,
}

#[derive(Clone)]
pub enum ZohCertificate {
    Lyapunov(ContinuousLyapunov),
    Contraction(ContinuousContraction),
}

#[derive(Debug, Clone, Serialize)]
pub struct ZohReport {
    pub kind: &'static str,
    pub tau: f64,
    pub budget: BudgetEntry,
    pub over_budget: bool,
    /// Discrete rate `1 − γτρ` or `1 − 2λγτ`.
    pub rate: f64,
    pub pass: bool,
    pub worst_margin: f64,
    pub witness: Witness,
    /// Sampled hypotheses on the certificate itself.
    pub hypotheses_ok: bool,
    pub samples: usize,
}

fn fd_hessian(q: &dyn Fn(&Vector) -> f64, x: &Vector) -> Matrix {
    let h = 1e-4 * x.norm().max(1.0);
    let n = x.len();
    let mut out = Matrix::zeros(n, n);
    let e = |i: usize| Vector::from_fn(n, |k, _| if k == i { h } else { 0.0 });
    for i in 0..n {
        for j in 0..n {
            let (ei, ej) = (e(i), e(j));
            out[(i, j)] = (q(&(x + &ei + &ej)) - q(&(x + &ei - &ej)) - q(&(x - &ei + &ej)) + q(&(x - &ei - &ej)))
                / (4.0 * h * h);
        }
    }
    out
}

/// Checks, on the samples, the discrete inequality that sampling within the budget promises:
/// `V(g(x,t),t+1) ≤ (1 − γτρ)V(x,t)` or `JᵀV₊J ⪯ (1 − 2λγτ)V`, with
/// `V(x,t)` the certificate at time `τt`. Runs even when `τ` exceeds the
/// budget and flags that case.
pub fn verify_zoh_preservation(
    plant: &ContinuousPlant,
    cert: &ZohCertificate,
    tau: f64,
    gamma_split: f64,
    substeps: usize,
    states: &[Vector],
    times: &[usize],
) -> Result<ZohReport> {
    if states.is_empty() || times.is_empty() {
        return Err(Error::Empty("ZOH verification samples"));
    }
    let g = zoh_discretize(plant, tau, substeps)?;
    let pairs: Vec<(usize, usize)> = (0..states.len())
        .flat_map(|i| times.iter().map(move |&t| (i, t)))
        .collect();
    let (kind, entry, rate, margins, hypotheses_ok) = match cert {
        ZohCertificate::Lyapunov(c) => {
            let entry = tau_budget_lyapunov(plant.l_f, plant.l_pi, c.l_q, c.rho, c.mu, gamma_split)?;
            let rate = 1.0 - gamma_split * tau * c.rho;
            let margins: Vec<f64> = pairs
                .par_iter()
                .map(|&(i, t)| {
                    let x = &states[i];
                    let v = (c.q)(x, tau * t as f64);
                    let v_next = (c.q)(&g.apply(x, t), tau * (t + 1) as f64);
                    v_next - rate * v
                })
                .collect();
            let hyp = pairs.iter().all(|&(i, t)| {
                let x = &states[i];
                let s = tau * t as f64;
                let qx = |z: &Vector| (c.q)(z, s);
                let zero = (c.q)(&Vector::zeros(x.len()), s).abs() <= 1e-12;
                let lower = qx(x) >= c.mu * x.norm_squared() * (1.0 - 1e-9) - 1e-12;
                let hess = spectral_norm(&fd_hessian(&qx, x)) <= c.l_q * (1.0 + 1e-4) + 1e-6;
                zero && lower && hess
            });
            ("lyapunov", entry, rate, margins, hyp)
        }
        ZohCertificate::Contraction(c) => {
            let entry = tau_budget_contraction(plant.l_f, plant.l_pi, c.l_m, c.lambda, c.mu, c.l, c.radius, gamma_split)?;
            let rate = 1.0 - 2.0 * c.lambda * gamma_split * tau;
            let margins: Vec<f64> = pairs
                .par_iter()
                .map(|&(i, t)| {
                    let x = &states[i];
                    let j = fd_jacobian(&|z: &Vector| g.apply(z, t), x);
                    let v = (c.metric)(x, tau * t as f64);
                    let v_next = (c.metric)(&g.apply(x, t), tau * (t + 1) as f64);
                    lambda_max_sym(&(j.transpose() * v_next * &j - v * rate))
                })
                .collect();
            let hyp = pairs.iter().all(|&(i, t)| {
                let x = &states[i];
                let eig = sym_eigen(&(c.metric)(x, tau * t as f64)).eigenvalues;
                x.norm() <= c.radius + 1e-12 && eig.iter().all(|&e| e >= c.mu - 1e-9 && e <= c.l + 1e-9)
            });
            ("contraction", entry, rate, margins, hyp)
        }
    };
    let tol = if kind == "lyapunov" { 1e-12 } else { 1e-8 };
    let mut k = 0;
    for (idx, &m) in margins.iter().enumerate() {
        if m > margins[k] || margins[k].is_nan() {
            k = idx;
        }
    }
    let (i, t) = pairs[k];
    Ok(ZohReport {
        kind,
        tau,
        over_budget: tau > entry.tau,
        budget: entry,
        rate,
        pass: margins.iter().all(|&m| m <= tol),
        worst_margin: margins[k],
        witness: Witness {
            state: states[i].as_slice().to_vec(),
            time: t,
        },
        hypotheses_ok,
        samples: pairs.len(),
    })
}
