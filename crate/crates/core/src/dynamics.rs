//! Matched-uncertainty systems, noise, and coupled adaptive/comparator rollouts.
//!
//! The adaptive closed loop is
//! `x_{t+1} = f(x_t, t) + B(x_t, t)(ξ_t − Y(x_t, t)α) + w_t`
//! where `ξ_t` is the applied input (equal to `Y(x_t, t)α̂_t` without delay),
//! and the comparator runs `x_{t+1} = f(x_t, t) + w_t` on the same noise.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adapt::{AdaptationLaw, Observation};
use crate::error::{dim_err, Error, Result, Trajectory};
use crate::linalg::{all_finite, fd_jacobian, spectral_norm, Matrix, Vector};

pub type StateFn = Arc<dyn Fn(&Vector, usize) -> Vector + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&Vector, usize) -> Matrix + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&Vector, usize) -> f64 + Send + Sync>;
/// Noise-free true plant step `(x, t, applied input) -> next state`.
pub type PlantFn = Arc<dyn Fn(&Vector, usize, &Vector) -> Vector + Send + Sync>;
pub type StatePredicate = Arc<dyn Fn(&Vector) -> bool + Send + Sync>;

pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e6;

/// A time-indexed discrete map with an optional analytic Jacobian.
pub trait DiscreteMap: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &Vector, t: usize) -> Vector;
    fn jacobian(&self, x: &Vector, t: usize) -> Matrix {
        fd_jacobian(&|z: &Vector| self.apply(z, t), x)
    }
}

/// Wraps a closure as a [`DiscreteMap`].
#[derive(Clone)]
pub struct FnMap {
    pub dim: usize,
    pub map: StateFn,
    pub jac: Option<MatrixFn>,
}

impl FnMap {
    pub fn new(dim: usize, map: impl Fn(&Vector, usize) -> Vector + Send + Sync + 'static) -> Self {
        FnMap {
            dim,
            map: Arc::new(map),
            jac: None,
        }
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&Vector, usize) -> Matrix + Send + Sync + 'static) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }
}

impl DiscreteMap for FnMap {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &Vector, t: usize) -> Vector {
        (self.map)(x, t)
    }
    fn jacobian(&self, x: &Vector, t: usize) -> Matrix {
        match &self.jac {
            Some(j) => j(x, t),
            None => fd_jacobian(&|z: &Vector| (self.map)(z, t), x),
        }
    }
}

/// The known triple (f, B, Y) together with the hidden parameter and bounds.
#[derive(Clone)]
pub struct SystemModel {
    pub state_dim: usize,
    pub input_dim: usize,
    pub param_dim: usize,
    nominal: StateFn,
    input_matrix: MatrixFn,
    basis: MatrixFn,
    pub true_param: Vector,
    pub param_radius: f64,
    pub op_norm_bound: f64,
    pub y_state_dependent: bool,
    plant: Option<PlantFn>,
    pub divergence_threshold: f64,
    extra_divergence: Option<StatePredicate>,
}

impl std::fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SystemModel")
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("param_dim", &self.param_dim)
            .field("param_radius", &self.param_radius)
            .field("op_norm_bound", &self.op_norm_bound)
            .field("y_state_dependent", &self.y_state_dependent)
            .field("custom_plant", &self.plant.is_some())
            .finish()
    }
}

pub struct SystemModelBuilder {
    n: usize,
    d: usize,
    p: usize,
    nominal: Option<StateFn>,
    input_matrix: Option<MatrixFn>,
    basis: Option<MatrixFn>,
    true_param: Option<Vector>,
    param_radius: Option<f64>,
    op_norm_bound: Option<f64>,
    y_state_dependent: bool,
    plant: Option<PlantFn>,
    divergence_threshold: f64,
    extra_divergence: Option<StatePredicate>,
}

impl SystemModelBuilder {
    pub fn nominal(mut self, f: impl Fn(&Vector, usize) -> Vector + Send + Sync + 'static) -> Self {
        self.nominal = Some(Arc::new(f));
        self
    }

    pub fn input_matrix(mut self, b: impl Fn(&Vector, usize) -> Matrix + Send + Sync + 'static) -> Self {
        self.input_matrix = Some(Arc::new(b));
        self
    }

    pub fn basis(mut self, y: impl Fn(&Vector, usize) -> Matrix + Send + Sync + 'static) -> Self {
        self.basis = Some(Arc::new(y));
        self
    }

    pub fn true_param(mut self, alpha: Vector) -> Self {
        self.true_param = Some(alpha);
        self
    }

    pub fn param_radius(mut self, d: f64) -> Self {
        self.param_radius = Some(d);
        self
    }

    pub fn op_norm_bound(mut self, m: f64) -> Self {
        self.op_norm_bound = Some(m);
        self
    }

    pub fn state_dependent_basis(mut self, yes: bool) -> Self {
        self.y_state_dependent = yes;
        self
    }

    /// Replaces the matched-uncertainty step on the adaptive side with an
    /// arbitrary true plant. The model triple is still what laws observe.
    pub fn plant(mut self, plant: impl Fn(&Vector, usize, &Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.plant = Some(Arc::new(plant));
        self
    }

    pub fn divergence_threshold(mut self, threshold: f64) -> Self {
        self.divergence_threshold = threshold;
        self
    }

    /// Extra divergence predicate checked in addition to the norm threshold.
    pub fn diverged_when(mut self, pred: impl Fn(&Vector) -> bool + Send + Sync + 'static) -> Self {
        self.extra_divergence = Some(Arc::new(pred));
        self
    }

    pub fn build(self) -> Result<SystemModel> {
        let missing = |what: &str| Error::Config(format!("system model is missing `{what}`"));
        if self.n == 0 || self.d == 0 || self.p == 0 {
            return Err(Error::Config("state, input and parameter dimensions must be positive".into()));
        }
        let nominal = self.nominal.ok_or_else(|| missing("nominal"))?;
        let input_matrix = self.input_matrix.ok_or_else(|| missing("input_matrix"))?;
        let basis = self.basis.ok_or_else(|| missing("basis"))?;
        let true_param = self.true_param.unwrap_or_else(|| Vector::zeros(self.p));
        let param_radius = self.param_radius.ok_or_else(|| missing("param_radius"))?;
        let op_norm_bound = self.op_norm_bound.ok_or_else(|| missing("op_norm_bound"))?;
        if true_param.len() != self.p {
            return Err(dim_err("true_param", self.p, true_param.len()));
        }
        if !(param_radius > 0.0) || !param_radius.is_finite() {
            return Err(Error::Config(format!("param_radius must be positive, got {param_radius}")));
        }
        if !(op_norm_bound > 0.0) || !op_norm_bound.is_finite() {
            return Err(Error::Config(format!("op_norm_bound must be positive, got {op_norm_bound}")));
        }
        if true_param.norm() > param_radius * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "true parameter norm {} exceeds param_radius {}",
                true_param.norm(),
                param_radius
            )));
        }
        Ok(SystemModel {
            state_dim: self.n,
            input_dim: self.d,
            param_dim: self.p,
            nominal,
            input_matrix,
            basis,
            true_param,
            param_radius,
            op_norm_bound,
            y_state_dependent: self.y_state_dependent,
            plant: self.plant,
            divergence_threshold: self.divergence_threshold,
            extra_divergence: self.extra_divergence,
        })
    }
}

/// Outcome of probing a model's invariants on sample points.
#[derive(Debug, Clone, Serialize)]
pub struct ModelCheck {
    pub origin_fixed: bool,
    pub max_origin_residual: f64,
    pub max_input_matrix_norm: f64,
    pub max_basis_norm: f64,
    pub norms_within_bound: bool,
    pub param_within_radius: bool,
}

impl ModelCheck {
    pub fn pass(&self) -> bool {
        self.origin_fixed && self.norms_within_bound && self.param_within_radius
    }
}

impl SystemModel {
    pub fn builder(state_dim: usize, input_dim: usize, param_dim: usize) -> SystemModelBuilder {
        SystemModelBuilder {
            n: state_dim,
            d: input_dim,
            p: param_dim,
            nominal: None,
            input_matrix: None,
            basis: None,
            true_param: None,
            param_radius: None,
            op_norm_bound: None,
            y_state_dependent: true,
            plant: None,
            divergence_threshold: DEFAULT_DIVERGENCE_THRESHOLD,
            extra_divergence: None,
        }
    }

    pub fn nominal(&self, x: &Vector, t: usize) -> Vector {
        (self.nominal)(x, t)
    }

    pub fn input_matrix(&self, x: &Vector, t: usize) -> Matrix {
        (self.input_matrix)(x, t)
    }

    pub fn basis(&self, x: &Vector, t: usize) -> Matrix {
        (self.basis)(x, t)
    }

    pub fn has_custom_plant(&self) -> bool {
        self.plant.is_some()
    }

    /// A copy with a different hidden parameter (bounds are rechecked).
    pub fn with_true_param(&self, alpha: Vector) -> Result<SystemModel> {
        if alpha.len() != self.param_dim {
            return Err(dim_err("true_param", self.param_dim, alpha.len()));
        }
        if alpha.norm() > self.param_radius * (1.0 + 1e-12) {
            return Err(Error::Config("true parameter norm exceeds param_radius".into()));
        }
        let mut m = self.clone();
        m.true_param = alpha;
        Ok(m)
    }

    pub fn is_diverged(&self, x: &Vector) -> bool {
        !all_finite(x)
            || x.norm() > self.divergence_threshold
            || self.extra_divergence.as_ref().is_some_and(|p| p(x))
    }

    /// Probes `f(0,t) = 0`, `‖B‖ ≤ M`, `‖Y‖ ≤ M` (tolerance 1e-9) and `‖α‖ ≤ D`.
    pub fn check(&self, states: &[Vector], times: &[usize]) -> ModelCheck {
        let zero = Vector::zeros(self.state_dim);
        let max_origin_residual = times
            .iter()
            .map(|&t| self.nominal(&zero, t).norm())
            .fold(0.0, f64::max);
        let mut max_b: f64 = 0.0;
        let mut max_y: f64 = 0.0;
        for x in states {
            for &t in times {
                max_b = max_b.max(spectral_norm(&self.input_matrix(x, t)));
                max_y = max_y.max(spectral_norm(&self.basis(x, t)));
            }
        }
        let tol = 1e-9;
        ModelCheck {
            origin_fixed: max_origin_residual <= tol,
            max_origin_residual,
            max_input_matrix_norm: max_b,
            max_basis_norm: max_y,
            norms_within_bound: max_b <= self.op_norm_bound + tol && max_y <= self.op_norm_bound + tol,
            param_within_radius: self.true_param.norm() <= self.param_radius + 1e-12,
        }
    }

    fn check_state(&self, x: &Vector) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(dim_err("state", self.state_dim, x.len()));
        }
        Ok(())
    }

    fn check_noise(&self, w: &Vector) -> Result<()> {
        if w.len() != self.state_dim {
            return Err(dim_err("noise", self.state_dim, w.len()));
        }
        Ok(())
    }

    fn check_estimate(&self, a: &Vector) -> Result<()> {
        if a.len() != self.param_dim {
            return Err(dim_err("parameter estimate", self.param_dim, a.len()));
        }
        Ok(())
    }

    /// The adaptive-side step for an already evaluated triple.
    fn advance(&self, x: &Vector, t: usize, ev: &Evaluated, applied: &Vector, w: &Vector) -> Vector {
        match &self.plant {
            Some(plant) => plant(x, t, applied) + w,
            None => {
                let mismatch = applied - &ev.y * &self.true_param;
                &ev.f + &ev.b * mismatch + w
            }
        }
    }

    fn evaluate(&self, x: &Vector, t: usize) -> Result<Evaluated> {
        let f = self.nominal(x, t);
        let b = self.input_matrix(x, t);
        let y = self.basis(x, t);
        if f.len() != self.state_dim {
            return Err(dim_err("nominal output", self.state_dim, f.len()));
        }
        if b.shape() != (self.state_dim, self.input_dim) {
            return Err(dim_err(
                "input matrix",
                format!("{}x{}", self.state_dim, self.input_dim),
                format!("{}x{}", b.nrows(), b.ncols()),
            ));
        }
        if y.shape() != (self.input_dim, self.param_dim) {
            return Err(dim_err(
                "basis",
                format!("{}x{}", self.input_dim, self.param_dim),
                format!("{}x{}", y.nrows(), y.ncols()),
            ));
        }
        Ok(Evaluated { f, b, y })
    }
}

struct Evaluated {
    f: Vector,
    b: Matrix,
    y: Matrix,
}

fn finite_or_diverged(x: Vector, step: usize, trajectory: Trajectory) -> Result<Vector> {
    if all_finite(&x) {
        Ok(x)
    } else {
        Err(Error::Divergence { step, trajectory })
    }
}

/// One certainty-equivalence step: `f(x,t) + B(x,t)(Y(x,t)α̂ − Y(x,t)α) + w`.
pub fn step_adaptive(model: &SystemModel, x: &Vector, t: usize, alpha_hat: &Vector, w: &Vector) -> Result<Vector> {
    model.check_state(x)?;
    model.check_noise(w)?;
    model.check_estimate(alpha_hat)?;
    let ev = model.evaluate(x, t)?;
    let u = &ev.y * alpha_hat;
    finite_or_diverged(model.advance(x, t, &ev, &u, w), t, Trajectory::Adaptive)
}

/// One comparator step: `f(x,t) + w`.
pub fn step_comparator(model: &SystemModel, x: &Vector, t: usize, w: &Vector) -> Result<Vector> {
    model.check_state(x)?;
    model.check_noise(w)?;
    let f = model.nominal(x, t);
    if f.len() != model.state_dim {
        return Err(dim_err("nominal output", model.state_dim, f.len()));
    }
    finite_or_diverged(f + w, t, Trajectory::Comparator)
}

/// FIFO transporting inputs `k` steps, initialized with zero inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    k: usize,
    buffer: VecDeque<Vector>,
}

impl DelayLine {
    pub fn new(k: usize, input_dim: usize) -> Self {
        DelayLine {
            k,
            buffer: (0..k).map(|_| Vector::zeros(input_dim)).collect(),
        }
    }

    pub fn from_buffer(buffer: Vec<Vector>) -> Self {
        DelayLine {
            k: buffer.len(),
            buffer: buffer.into(),
        }
    }

    pub fn delay(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn contents(&self) -> impl Iterator<Item = &Vector> {
        self.buffer.iter()
    }

    /// Pushes the newly computed input and returns the one applied now.
    pub fn shift(&mut self, u: Vector) -> Vector {
        if self.k == 0 {
            return u;
        }
        self.buffer.push_back(u);
        self.buffer.pop_front().expect("delay buffer holds k entries")
    }
}

/// Delayed step: applies `ξ_t` from the buffer head and enqueues `Y(t+k)α̂_t`.
pub fn step_delayed(
    model: &SystemModel,
    x: &Vector,
    t: usize,
    delay: &mut DelayLine,
    alpha_hat: &Vector,
    w: &Vector,
) -> Result<Vector> {
    model.check_state(x)?;
    model.check_noise(w)?;
    model.check_estimate(alpha_hat)?;
    if delay.delay() > 0 && model.y_state_dependent {
        return Err(Error::Unsupported(
            "input delay requires a state-independent basis".into(),
        ));
    }
    let ev = model.evaluate(x, t)?;
    let u = controller_input(model, x, t, delay.delay(), &ev.y, alpha_hat);
    let applied = delay.shift(u);
    finite_or_diverged(model.advance(x, t, &ev, &applied, w), t, Trajectory::Adaptive)
}

fn controller_input(model: &SystemModel, x: &Vector, t: usize, k: usize, y_now: &Matrix, alpha_hat: &Vector) -> Vector {
    if k == 0 {
        y_now * alpha_hat
    } else {
        model.basis(x, t + k) * alpha_hat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    Zero,
    /// Uniform on the closed ball of radius `bound`.
    BoundedBall { bound: f64 },
    /// `√τ·σ·N(0, I)`; unbounded, so outside any almost-sure noise bound.
    ScaledGaussian { sigma: f64, tau: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Zero => Ok(()),
            NoiseSpec::BoundedBall { bound } if bound >= 0.0 && bound.is_finite() => Ok(()),
            NoiseSpec::BoundedBall { bound } => Err(Error::Config(format!("noise.bound must be nonnegative, got {bound}"))),
            NoiseSpec::ScaledGaussian { sigma, tau } if sigma >= 0.0 && tau > 0.0 && sigma.is_finite() && tau.is_finite() => Ok(()),
            NoiseSpec::ScaledGaussian { .. } => Err(Error::Config("noise.sigma must be >= 0 and noise.tau > 0".into())),
        }
    }

    /// Almost-sure norm bound, when one exists.
    pub fn bound(&self) -> Option<f64> {
        match *self {
            NoiseSpec::Zero => Some(0.0),
            NoiseSpec::BoundedBall { bound } => Some(bound),
            NoiseSpec::ScaledGaussian { .. } => None,
        }
    }

    pub fn generator(&self, dim: usize, seed: u64) -> NoiseGenerator {
        NoiseGenerator {
            spec: self.clone(),
            dim,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseGenerator {
    spec: NoiseSpec,
    dim: usize,
    rng: ChaCha8Rng,
}

impl NoiseGenerator {
    pub fn next_noise(&mut self) -> Vector {
        match self.spec {
            NoiseSpec::Zero => Vector::zeros(self.dim),
            NoiseSpec::BoundedBall { bound } => {
                let dir = loop {
                    let g = Vector::from_fn(self.dim, |_, _| self.rng.sample::<f64, _>(StandardNormal));
                    let n = g.norm();
                    if n > 0.0 {
                        break g / n;
                    }
                };
                let u: f64 = self.rng.random();
                dir * (bound * u.powf(1.0 / self.dim as f64))
            }
            NoiseSpec::ScaledGaussian { sigma, tau } => {
                let s = tau.sqrt() * sigma;
                Vector::from_fn(self.dim, |_, _| s * self.rng.sample::<f64, _>(StandardNormal))
            }
        }
    }
}

/// Row-major sequence of equal-length vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    dim: usize,
    data: Vec<f64>,
}

impl Series {
    pub fn new(dim: usize) -> Self {
        Series { dim, data: Vec::new() }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Series {
            dim,
            data: Vec::with_capacity(dim * rows),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, v: &Vector) {
        debug_assert_eq!(v.len(), self.dim);
        self.data.extend_from_slice(v.as_slice());
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, i: usize) -> Vector {
        Vector::from_column_slice(self.row(i))
    }

    pub fn norm_sq(&self, i: usize) -> f64 {
        self.row(i).iter().map(|v| v * v).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.dim.max(1))
    }
}

/// Per-step log of one coupled rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub horizon: usize,
    pub delay: usize,
    pub states_adaptive: Series,
    /// Empty when the comparator was not simulated.
    pub states_comparator: Series,
    /// Applied inputs ξ_t.
    pub inputs: Series,
    pub noises: Series,
    /// Full estimates α̂_0..α̂_T, only when requested.
    pub estimates: Option<Series>,
    pub estimate_norms: Vec<f64>,
    /// ‖B_tY_t(α̂_t − α)‖.
    pub prediction_errors: Vec<f64>,
    /// Squared norm of the law's update direction at each step.
    pub law_grad_sq: Vec<f64>,
    /// Step at which the adaptive state crossed the divergence criterion.
    pub diverged_at: Option<usize>,
}

impl TrajectoryRecord {
    /// Number of completed steps.
    pub fn steps(&self) -> usize {
        self.prediction_errors.len()
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct RolloutOptions {
    pub delay: usize,
    pub record_estimates: bool,
    pub simulate_comparator: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            delay: 0,
            record_estimates: false,
            simulate_comparator: true,
        }
    }
}

/// Runs the adaptive loop and the comparator on one shared noise realization.
///
/// The law sees `(x_{t+1}, x_t, t)` after each step. A diverging comparator is
/// an error; a diverging adaptive trajectory ends the record early and sets
/// `diverged_at`.
pub fn rollout_coupled(
    model: &SystemModel,
    x0: &Vector,
    horizon: usize,
    law: &mut dyn AdaptationLaw,
    noise: &NoiseSpec,
    seed: u64,
    opts: &RolloutOptions,
) -> Result<TrajectoryRecord> {
    model.check_state(x0)?;
    if !all_finite(x0) {
        return Err(Error::Config("initial state must be finite".into()));
    }
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    noise.validate()?;
    model.check_estimate(law.estimate())?;
    if opts.delay > 0 && model.y_state_dependent {
        return Err(Error::Unsupported(
            "input delay requires a state-independent basis".into(),
        ));
    }

    let n = model.state_dim;
    let mut gen = noise.generator(n, seed);
    let mut delay = DelayLine::new(opts.delay, model.input_dim);

    let mut rec = TrajectoryRecord {
        seed,
        horizon,
        delay: opts.delay,
        states_adaptive: Series::with_capacity(n, horizon + 1),
        states_comparator: if opts.simulate_comparator {
            Series::with_capacity(n, horizon + 1)
        } else {
            Series::new(n)
        },
        inputs: Series::with_capacity(model.input_dim, horizon),
        noises: Series::with_capacity(n, horizon),
        estimates: opts
            .record_estimates
            .then(|| Series::with_capacity(model.param_dim, horizon + 1)),
        estimate_norms: Vec::with_capacity(horizon + 1),
        prediction_errors: Vec::with_capacity(horizon),
        law_grad_sq: Vec::with_capacity(horizon),
        diverged_at: None,
    };

    let mut xa = x0.clone();
    let mut xc = x0.clone();
    rec.states_adaptive.push(&xa);
    if opts.simulate_comparator {
        rec.states_comparator.push(&xc);
    }
    let push_estimate = |rec: &mut TrajectoryRecord, a: &Vector| {
        rec.estimate_norms.push(a.norm());
        if let Some(e) = rec.estimates.as_mut() {
            e.push(a);
        }
    };
    push_estimate(&mut rec, law.estimate());

    let mut adaptive_live = true;
    for t in 0..horizon {
        let w = gen.next_noise();
        if opts.simulate_comparator {
            let next = model.nominal(&xc, t) + &w;
            if !all_finite(&next) || next.norm() > model.divergence_threshold {
                return Err(Error::Divergence {
                    step: t + 1,
                    trajectory: Trajectory::Comparator,
                });
            }
            rec.states_comparator.push(&next);
            xc = next;
        }
        if !adaptive_live {
            continue;
        }

        let ev = model.evaluate(&xa, t)?;
        let alpha_hat = law.estimate().clone();
        let u = controller_input(model, &xa, t, opts.delay, &ev.y, &alpha_hat);
        let applied = delay.shift(u);
        let pred = (&ev.b * (&ev.y * (&alpha_hat - &model.true_param))).norm();
        let next = model.advance(&xa, t, &ev, &applied, &w);

        rec.noises.push(&w);
        rec.inputs.push(&applied);
        rec.prediction_errors.push(pred);

        if model.is_diverged(&next) {
            rec.diverged_at = Some(t + 1);
            rec.law_grad_sq.push(f64::NAN);
            if all_finite(&next) {
                rec.states_adaptive.push(&next);
            }
            adaptive_live = false;
            if !opts.simulate_comparator {
                break;
            }
            continue;
        }

        let obs = Observation {
            t,
            x: &xa,
            x_next: &next,
            nominal: &ev.f,
            input_matrix: &ev.b,
            basis: &ev.y,
            applied_input: &applied,
        };
        let info = law.update(&obs)?;
        rec.law_grad_sq.push(info.grad_sq);
        rec.states_adaptive.push(&next);
        push_estimate(&mut rec, law.estimate());
        xa = next;
    }
    Ok(rec)
}
