//! Monte-Carlo regret estimation on coupled rollouts and closed-form regret
//! bounds.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::adapt::{GradFn, LawKind, LawSpec};
use crate::dynamics::{rollout_coupled, NoiseSpec, RolloutOptions, SystemModel, TrajectoryRecord};
use crate::error::{Error, Result, Trajectory};
use crate::linalg::{sym_eigen, Matrix, Vector};
use crate::stability::{IncrementalStabilityConstants, LyapunovCertificate};

/// `(√A_T, Σ_t g_t²/√A_t, 2√A_T)` with `A_t = Σ_{i≤t} g_i²`. Terms with
/// `A_t = 0` contribute zero.
pub fn auer_sums(g: &[f64]) -> (f64, f64, f64) {
    let mut acc = 0.0;
    let mut mid = 0.0;
    for &gi in g {
        let sq = gi * gi;
        acc += sq;
        if acc > 0.0 {
            mid += sq / acc.sqrt();
        }
    }
    (acc.sqrt(), mid, 2.0 * acc.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    /// Sample standard deviation over √n; zero for a single sample.
    pub se: f64,
}

pub fn mean_se(values: &[f64]) -> Result<MeanSe> {
    if values.is_empty() {
        return Err(Error::Empty("rollout list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() < 2 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    };
    Ok(MeanSe { mean, se })
}

fn require_steps(rec: &TrajectoryRecord, t: usize) -> Result<()> {
    if let Some(step) = rec.diverged_at {
        if step <= t {
            return Err(Error::Divergence {
                step,
                trajectory: Trajectory::Adaptive,
            });
        }
    }
    if rec.states_adaptive.len() < t || rec.states_comparator.len() < t {
        return Err(Error::Config(format!(
            "record with seed {} is shorter than horizon {t}",
            rec.seed
        )));
    }
    Ok(())
}

/// `Σ_{t<T} ‖x^a_t‖² − ‖x^c_t‖²` for one record.
pub fn control_regret_single(rec: &TrajectoryRecord, t: usize) -> Result<f64> {
    require_steps(rec, t)?;
    Ok((0..t)
        .map(|s| rec.states_adaptive.norm_sq(s) - rec.states_comparator.norm_sq(s))
        .sum())
}

/// `½ Σ_{t<T} ‖B_tY_tα̃_t‖²` for one record.
pub fn prediction_regret_single(rec: &TrajectoryRecord, t: usize) -> Result<f64> {
    if rec.prediction_errors.len() < t {
        return Err(Error::Config(format!(
            "record with seed {} has {} prediction errors, horizon {t} requested",
            rec.seed,
            rec.prediction_errors.len()
        )));
    }
    Ok(0.5 * rec.prediction_errors[..t].iter().map(|e| e * e).sum::<f64>())
}

pub fn control_regret(records: &[TrajectoryRecord], t: usize) -> Result<MeanSe> {
    let per = records
        .iter()
        .map(|r| control_regret_single(r, t))
        .collect::<Result<Vec<_>>>()?;
    mean_se(&per)
}

pub fn prediction_regret(records: &[TrajectoryRecord], t: usize) -> Result<MeanSe> {
    let per = records
        .iter()
        .map(|r| prediction_regret_single(r, t))
        .collect::<Result<Vec<_>>>()?;
    mean_se(&per)
}

/// A bound value together with whether the hypotheses it needs were met.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundEval {
    pub value: f64,
    pub applicable: bool,
}

impl BoundEval {
    fn new(value: f64, applicable: bool) -> Self {
        BoundEval { value, applicable }
    }
}

/// `Q(x₀,0)/ρ + 5√λD/ρ + (3D/ρ)√(Σ‖Y_tᵀB_tᵀ∇Q(x_{t+1},t+1)‖²)`.
pub fn vg_path_value(q0: f64, rho: f64, lambda: f64, radius: f64, grad_sq_sum: f64) -> f64 {
    q0 / rho + 5.0 * lambda.sqrt() * radius / rho + 3.0 * radius / rho * grad_sq_sum.sqrt()
}

/// Data-dependent velocity-gradient bound at horizon `t`, using the squared
/// gradient norms the law logged. The record must come from the velocity
/// gradient law run with the same `λ` and `D`.
pub fn bound_vg_path(cert: &LyapunovCertificate, rec: &TrajectoryRecord, lambda: f64, radius: f64, t: usize) -> Result<f64> {
    if rec.law_grad_sq.len() < t {
        return Err(Error::Config(format!(
            "record has {} logged gradients, horizon {t} requested",
            rec.law_grad_sq.len()
        )));
    }
    let sum: f64 = rec.law_grad_sq[..t].iter().sum();
    if !sum.is_finite() {
        return Err(Error::Numerical {
            step: t,
            message: "logged gradient norms are not finite".into(),
        });
    }
    let q0 = cert.value(&rec.states_adaptive.vector(0), 0);
    Ok(vg_path_value(q0, cert.rho, lambda, radius, sum))
}

/// `(3/2)(Q(x₀,0)/ρ + 5√λD/ρ) + (27D²/ρ²)M⁴L_Q² max{L_f², 2ρ/μ}`.
pub fn bound_vg_uniform(cert: &LyapunovCertificate, q0: f64, radius: f64, lambda: f64, m: f64) -> f64 {
    let rho = cert.rho;
    1.5 * (q0 / rho + 5.0 * lambda.sqrt() * radius / rho)
        + 27.0 * radius * radius / (rho * rho)
            * m.powi(4)
            * cert.l_q * cert.l_q
            * (cert.l_f * cert.l_f).max(2.0 * rho / cert.mu)
}

/// Constants shared by the stochastic control-regret bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretConstants {
    pub iss: IncrementalStabilityConstants,
    pub b_x: f64,
    /// Gradient bound `G`.
    pub g: f64,
    pub radius: f64,
    pub op_norm: f64,
    pub lambda: f64,
    pub param_dim: usize,
}

impl RegretConstants {
    /// Derives `B_x = β‖x₀‖ + γ(2DM² + W)/(1−ρ)` and `G = M²(2DM² + W)`.
    pub fn from_problem(
        iss: IncrementalStabilityConstants,
        x0_norm: f64,
        radius: f64,
        op_norm: f64,
        noise_bound: f64,
        lambda: f64,
        param_dim: usize,
    ) -> Self {
        RegretConstants {
            iss,
            b_x: b_x(&iss, x0_norm, radius, op_norm, noise_bound),
            g: crate::adapt::ogd_gain(op_norm, radius, noise_bound),
            radius,
            op_norm,
            lambda,
            param_dim,
        }
    }

    fn lead(&self) -> f64 {
        2.0 * self.b_x * self.iss.gamma / (1.0 - self.iss.rho)
    }

    fn delay_constant(&self, k: usize) -> f64 {
        let m2 = self.op_norm * self.op_norm;
        let one_minus = 1.0 - self.iss.rho;
        k as f64 * self.b_x * self.b_x + 2.0 * self.b_x * m2 * self.radius * self.iss.gamma / (one_minus * one_minus)
    }
}

pub fn b_x(iss: &IncrementalStabilityConstants, x0_norm: f64, radius: f64, op_norm: f64, noise_bound: f64) -> f64 {
    iss.state_bound(x0_norm, radius, op_norm, noise_bound)
}

/// `2B_xγ/(1−ρ)·√T·√(Σ‖B_tY_tα̃_t‖²)`.
pub fn bound_transfer(iss: &IncrementalStabilityConstants, b_x: f64, t: usize, prediction_sq_sum: f64) -> f64 {
    2.0 * b_x * iss.gamma / (1.0 - iss.rho) * (t as f64).sqrt() * prediction_sq_sum.max(0.0).sqrt()
}

/// `2√6·B_xγ/(1−ρ)·√(GD)·T^{3/4}`.
pub fn bound_ogd(c: &RegretConstants, t: usize) -> f64 {
    6f64.sqrt() * c.lead() * (c.g * c.radius).sqrt() * (t as f64).powf(0.75)
}

/// `2B_xγ/(1−ρ)·√T·√(4D²(λ+M⁴) + pG²log(1+M⁴T/λ))`; needs `M ≥ 1`.
pub fn bound_newton(c: &RegretConstants, t: usize) -> BoundEval {
    let m4 = c.op_norm.powi(4);
    let inner = 4.0 * c.radius * c.radius * (c.lambda + m4)
        + c.param_dim as f64 * c.g * c.g * (1.0 + m4 * t as f64 / c.lambda).ln();
    BoundEval::new(c.lead() * (t as f64).sqrt() * inner.sqrt(), c.op_norm >= 1.0)
}

/// `kB_x² + 2B_xM²Dγ/(1−ρ)² + bound_ogd + 4B_xγM²D/(1−ρ)·k√T`; needs `T ≥ k`.
pub fn bound_ogd_delay(c: &RegretConstants, t: usize, k: usize) -> BoundEval {
    let m2 = c.op_norm * c.op_norm;
    let delay_term = 4.0 * c.b_x * c.iss.gamma * m2 * c.radius / (1.0 - c.iss.rho) * k as f64 * (t as f64).sqrt();
    BoundEval::new(c.delay_constant(k) + bound_ogd(c, t) + delay_term, t >= k)
}

/// `kB_x² + 2B_xM²Dγ/(1−ρ)² + 2B_xγGk/(1−ρ)·√(pT/λ·log(1+M²T/λ)) + bound_newton`;
/// needs `M ≥ 1` and `T ≥ k`.
pub fn bound_newton_delay(c: &RegretConstants, t: usize, k: usize) -> BoundEval {
    let tf = t as f64;
    let m2 = c.op_norm * c.op_norm;
    let log_term = (c.param_dim as f64 * tf / c.lambda * (1.0 + m2 * tf / c.lambda).ln()).sqrt();
    let delay_term = c.lead() * c.g * k as f64 * log_term;
    let newton = bound_newton(c, t);
    BoundEval::new(c.delay_constant(k) + delay_term + newton.value, newton.applicable && t >= k)
}

/// `3GD√T`.
pub fn bound_oco_gd(g: f64, radius: f64, t: usize) -> f64 {
    3.0 * g * radius * (t as f64).sqrt()
}

/// `(2D²/η)(λ+M²) + (ηp/2)(DM+Y)²log(1+M²T/λ)`; needs `η ≥ 1`.
pub fn bound_oco_newton(radius: f64, lambda: f64, m: f64, y_bound: f64, eta: f64, p: usize, t: usize) -> BoundEval {
    let value = 2.0 * radius * radius / eta * (lambda + m * m)
        + eta * p as f64 / 2.0 * (radius * m + y_bound).powi(2) * (1.0 + m * m * t as f64 / lambda).ln();
    BoundEval::new(value, eta >= 1.0)
}

/// `argmin_{‖α‖≤D} ½αᵀVα − bᵀα` for symmetric PSD `V`: the best fixed
/// parameter in hindsight for a sum of least-squares losses.
pub fn constrained_least_squares(v: &Matrix, b: &Vector, radius: f64) -> Vector {
    let eig = sym_eigen(v);
    let lam = &eig.eigenvalues;
    let z = eig.eigenvectors.transpose() * b;
    let coords = |nu: f64| {
        Vector::from_fn(z.len(), |i, _| {
            let d = lam[i].max(0.0) + nu;
            if d > 0.0 {
                z[i] / d
            } else {
                0.0
            }
        })
    };
    let unconstrained = coords(0.0);
    let singular = lam.iter().any(|&l| l <= 1e-14 * lam.amax().max(1.0));
    if unconstrained.norm() <= radius && !singular {
        return &eig.eigenvectors * unconstrained;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while coords(hi).norm() > radius {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if coords(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    &eig.eigenvectors * coords(hi)
}

/// Monte-Carlo regret curves and the bounds evaluated at each horizon.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretReport {
    pub law: LawKind,
    pub delay: usize,
    pub horizons: Vec<usize>,
    pub control: Vec<MeanSe>,
    pub prediction: Vec<MeanSe>,
    /// `per_rollout_control[i][j]`: rollout `i` at `horizons[j]`.
    pub per_rollout_control: Vec<Vec<f64>>,
    pub per_rollout_prediction: Vec<Vec<f64>>,
    pub bounds: BTreeMap<String, Vec<BoundEval>>,
    pub n_rollouts: usize,
    pub seeds: Vec<u64>,
}

impl RegretReport {
    /// Least-squares slope of log mean control regret against log T.
    /// `None` when a mean is not positive.
    pub fn control_slope(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .horizons
            .iter()
            .zip(&self.control)
            .map(|(&t, c)| ((t as f64).ln(), c.mean))
            .collect();
        if pts.iter().any(|p| !(p.1 > 0.0)) {
            return None;
        }
        let logs: Vec<(f64, f64)> = pts.into_iter().map(|(x, y)| (x, y.ln())).collect();
        loglog_slope(&logs)
    }
}

/// Ordinary least-squares slope through `(x, y)` pairs.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Everything `run_regret_experiment` needs besides the model.
#[derive(Clone)]
pub struct RegretExperiment {
    pub x0: Vector,
    pub initial_estimate: Vector,
    pub law: LawSpec,
    pub grad_q: Option<GradFn>,
    pub noise: NoiseSpec,
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
    pub delay: usize,
    /// Stochastic-bound constants; omit to skip those bounds.
    pub constants: Option<RegretConstants>,
    /// Lyapunov certificate for the velocity-gradient bounds.
    pub lyapunov: Option<LyapunovCertificate>,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

/// Runs one coupled rollout per seed at the largest horizon and evaluates the
/// regret at every requested horizon from the same records.
pub fn run_regret_experiment(model: &SystemModel, exp: &RegretExperiment) -> Result<(RegretReport, Vec<TrajectoryRecord>)> {
    if exp.seeds.is_empty() {
        return Err(Error::Empty("seed list"));
    }
    if exp.horizons.is_empty() {
        return Err(Error::Empty("horizon list"));
    }
    if exp.horizons.windows(2).any(|w| w[0] >= w[1]) || exp.horizons[0] == 0 {
        return Err(Error::Config("horizons must be positive and strictly increasing".into()));
    }
    let t_max = *exp.horizons.last().unwrap();
    let opts = RolloutOptions {
        delay: exp.delay,
        ..RolloutOptions::default()
    };
    let one = |seed: u64| -> Result<TrajectoryRecord> {
        let mut law = exp.law.build(&exp.initial_estimate, exp.grad_q.as_ref())?;
        rollout_coupled(model, &exp.x0, t_max, law.as_mut(), &exp.noise, seed, &opts)
    };
    let run_all = || exp.seeds.par_iter().map(|&s| one(s)).collect::<Vec<_>>();
    let results = match exp.jobs {
        Some(j) => rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(run_all),
        None => run_all(),
    };
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let report = aggregate(&records, exp, model.op_norm_bound)?;
    Ok((report, records))
}

/// Computes the report from finished records, in seed order. `op_norm` is
/// the model's bound M.
pub fn aggregate(records: &[TrajectoryRecord], exp: &RegretExperiment, op_norm: f64) -> Result<RegretReport> {
    let mut per_control = Vec::with_capacity(records.len());
    let mut per_pred = Vec::with_capacity(records.len());
    for rec in records {
        require_steps(rec, *exp.horizons.last().unwrap())?;
        let mut c = Vec::with_capacity(exp.horizons.len());
        let mut p = Vec::with_capacity(exp.horizons.len());
        let mut cs = 0.0;
        let mut ps = 0.0;
        let mut t = 0;
        for &h in &exp.horizons {
            while t < h {
                cs += rec.states_adaptive.norm_sq(t) - rec.states_comparator.norm_sq(t);
                ps += 0.5 * rec.prediction_errors[t] * rec.prediction_errors[t];
                t += 1;
            }
            c.push(cs);
            p.push(ps);
        }
        per_control.push(c);
        per_pred.push(p);
    }
    let column = |rows: &Vec<Vec<f64>>, j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    let mut control = Vec::new();
    let mut prediction = Vec::new();
    for j in 0..exp.horizons.len() {
        control.push(mean_se(&column(&per_control, j))?);
        prediction.push(mean_se(&column(&per_pred, j))?);
    }

    let mut bounds: BTreeMap<String, Vec<BoundEval>> = BTreeMap::new();
    if let Some(c) = &exp.constants {
        let transfer = exp
            .horizons
            .iter()
            .zip(&prediction)
            .map(|(&t, pr)| BoundEval::new(bound_transfer(&c.iss, c.b_x, t, 2.0 * pr.mean), true))
            .collect();
        bounds.insert("transfer".into(), transfer);
        let k = exp.delay;
        let curve = |f: &dyn Fn(usize) -> BoundEval| exp.horizons.iter().map(|&t| f(t)).collect::<Vec<_>>();
        match (exp.law.kind, k) {
            (LawKind::Ogd, 0) => {
                bounds.insert("ogd".into(), curve(&|t| BoundEval::new(bound_ogd(c, t), true)));
            }
            (LawKind::Ogd, _) => {
                bounds.insert("ogd_delay".into(), curve(&|t| bound_ogd_delay(c, t, k)));
            }
            (LawKind::Newton, 0) => {
                bounds.insert("newton".into(), curve(&|t| bound_newton(c, t)));
            }
            (LawKind::Newton, _) => {
                bounds.insert("newton_delay".into(), curve(&|t| bound_newton_delay(c, t, k)));
            }
            _ => {}
        }
    }
    if let (LawKind::Vg, Some(cert)) = (exp.law.kind, &exp.lyapunov) {
        let mut vg_path = Vec::new();
        for &t in &exp.horizons {
            let vals = records
                .iter()
                .map(|r| bound_vg_path(cert, r, exp.law.lambda, exp.law.radius, t))
                .collect::<Result<Vec<_>>>()?;
            vg_path.push(BoundEval::new(vals.iter().sum::<f64>() / vals.len() as f64, exp.delay == 0));
        }
        bounds.insert("vg_path".into(), vg_path);
        let q0 = cert.value(&exp.x0, 0);
        let v = bound_vg_uniform(cert, q0, exp.law.radius, exp.law.lambda, op_norm);
        let noiseless = matches!(exp.noise, NoiseSpec::Zero);
        bounds.insert(
            "vg_uniform".into(),
            vec![BoundEval::new(v, noiseless && exp.delay == 0); exp.horizons.len()],
        );
    }

    Ok(RegretReport {
        law: exp.law.kind,
        delay: exp.delay,
        horizons: exp.horizons.clone(),
        control,
        prediction,
        per_rollout_control: per_control,
        per_rollout_prediction: per_pred,
        bounds,
        n_rollouts: records.len(),
        seeds: records.iter().map(|r| r.seed).collect(),
    })
}
