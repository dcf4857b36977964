//! Sampled verification of Lyapunov and contraction certificates, and the
//! constants they feed into regret bounds.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adapt::GradFn;
use crate::dynamics::{DiscreteMap, MatrixFn, ScalarFn};
use crate::error::{Error, Result};
use crate::linalg::{fd_gradient, generalized_lambda_max, lambda_max_sym, sym_eigen, Matrix, Vector};

pub const DEFAULT_SAMPLE_COUNT: usize = 4096;
const DECREASE_TOL: f64 = 1e-9;
const PSD_TOL: f64 = 1e-8;
const METRIC_TOL: f64 = 1e-9;

/// `Q(f(x,t), t+1) ≤ Q(x,t) − ρ‖x‖²` with the constants the bounds use.
#[derive(Clone)]
pub struct LyapunovCertificate {
    pub q: ScalarFn,
    pub grad_q: GradFn,
    pub rho: f64,
    /// Strong convexity of `x ↦ Q(x,t)`.
    pub mu: f64,
    /// `‖∇Q(x,t)‖ ≤ L_Q‖x‖`.
    pub l_q: f64,
    /// `‖f(x,t)‖ ≤ L_f‖x‖`.
    pub l_f: f64,
}

impl std::fmt::Debug for LyapunovCertificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LyapunovCertificate")
            .field("rho", &self.rho)
            .field("mu", &self.mu)
            .field("l_q", &self.l_q)
            .field("l_f", &self.l_f)
            .finish()
    }
}

impl LyapunovCertificate {
    /// `Q(x) = xᵀPx`, `∇Q(x) = 2Px`; μ and L_Q follow from the spectrum of P.
    pub fn quadratic(p: Matrix, rho: f64, l_f: f64) -> Self {
        let eig = sym_eigen(&p).eigenvalues;
        let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pq = p.clone();
        let pg = p;
        LyapunovCertificate {
            q: Arc::new(move |x: &Vector, _| (x.transpose() * &pq * x)[(0, 0)]),
            grad_q: Arc::new(move |x: &Vector, _| &pg * x * 2.0),
            rho,
            mu: 2.0 * lo,
            l_q: 2.0 * hi,
            l_f,
        }
    }

    pub fn value(&self, x: &Vector, t: usize) -> f64 {
        (self.q)(x, t)
    }

    pub fn gradient(&self, x: &Vector, t: usize) -> Vector {
        (self.grad_q)(x, t)
    }

    /// Checks `Q(0,t) = 0`, `Q ≥ 0`, and `∇Q` against central differences
    /// (1e-5 relative) on the samples.
    pub fn check_invariants(&self, states: &[Vector], times: &[usize]) -> LyapunovInvariants {
        let n = states.first().map_or(0, |s| s.len());
        let zero = Vector::zeros(n);
        let max_origin_value = times.iter().map(|&t| self.value(&zero, t).abs()).fold(0.0, f64::max);
        let mut min_value = f64::INFINITY;
        let mut max_grad_rel_err: f64 = 0.0;
        for x in states {
            for &t in times {
                min_value = min_value.min(self.value(x, t));
                let fd = fd_gradient(&|z: &Vector| self.value(z, t), x);
                let g = self.gradient(x, t);
                let rel = (&g - &fd).norm() / g.norm().max(fd.norm()).max(1.0);
                max_grad_rel_err = max_grad_rel_err.max(rel);
            }
        }
        LyapunovInvariants {
            origin_zero: max_origin_value <= 1e-12,
            nonnegative: min_value >= 0.0,
            gradient_consistent: max_grad_rel_err <= 1e-5,
            max_origin_value,
            min_value,
            max_grad_rel_err,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovInvariants {
    pub origin_zero: bool,
    pub nonnegative: bool,
    pub gradient_consistent: bool,
    pub max_origin_value: f64,
    pub min_value: f64,
    pub max_grad_rel_err: f64,
}

impl LyapunovInvariants {
    pub fn pass(&self) -> bool {
        self.origin_zero && self.nonnegative && self.gradient_consistent
    }
}

/// A sample point that attained the worst value of a check.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Witness {
    pub state: Vec<f64>,
    pub time: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecreaseReport {
    pub pass: bool,
    /// max of `Q(f(x,t),t+1) − Q(x,t) + ρ‖x‖²`; pass iff ≤ 1e-9.
    pub worst_margin: f64,
    pub witness: Witness,
    pub samples: usize,
}

fn sample_pairs(states: &[Vector], times: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(states.len() * times.len());
    for i in 0..states.len() {
        for &t in times {
            out.push((i, t));
        }
    }
    out
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] || (values[best].is_nan() && !v.is_nan()) {
            best = i;
        }
    }
    best
}

pub fn check_lyapunov_decrease(
    cert: &LyapunovCertificate,
    map: &dyn DiscreteMap,
    states: &[Vector],
    times: &[usize],
) -> Result<DecreaseReport> {
    if states.is_empty() || times.is_empty() {
        return Err(Error::Empty("Lyapunov decrease samples"));
    }
    let pairs = sample_pairs(states, times);
    let margins: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, t)| {
            let x = &states[i];
            cert.value(&map.apply(x, t), t + 1) - cert.value(x, t) + cert.rho * x.norm_squared()
        })
        .collect();
    let k = argmax(&margins);
    let (i, t) = pairs[k];
    Ok(DecreaseReport {
        pass: margins.iter().all(|&m| m <= DECREASE_TOL),
        worst_margin: margins[k],
        witness: Witness {
            state: states[i].as_slice().to_vec(),
            time: t,
        },
        samples: pairs.len(),
    })
}

/// `J(x,t)ᵀ M(f(x,t), t+1) J(x,t) ⪯ γ M(x,t)` with `μI ⪯ M ⪯ LI`.
#[derive(Clone)]
pub struct ContractionCertificate {
    pub metric: MatrixFn,
    pub gamma: f64,
    pub mu: f64,
    pub l: f64,
    pub l_m: f64,
    pub l_f: f64,
}

impl std::fmt::Debug for ContractionCertificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContractionCertificate")
            .field("gamma", &self.gamma)
            .field("mu", &self.mu)
            .field("l", &self.l)
            .field("l_m", &self.l_m)
            .field("l_f", &self.l_f)
            .finish()
    }
}

impl ContractionCertificate {
    pub fn constant_metric(m: Matrix, gamma: f64, l_f: f64) -> Self {
        let eig = sym_eigen(&m).eigenvalues;
        let mu = eig.iter().copied().fold(f64::INFINITY, f64::min);
        let l = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ContractionCertificate {
            metric: Arc::new(move |_, _| m.clone()),
            gamma,
            mu,
            l,
            l_m: 0.0,
            l_f,
        }
    }

    pub fn metric_at(&self, x: &Vector, t: usize) -> Matrix {
        (self.metric)(x, t)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub pass: bool,
    /// max of `λ_max(JᵀM₊J − γM)`; pass iff ≤ 1e-8.
    pub worst_excess: f64,
    pub witness: Witness,
    /// Smallest γ for which the sampled inequality holds.
    pub minimal_rate: f64,
    pub metric_bounds_ok: bool,
    pub metric_eig_min: f64,
    pub metric_eig_max: f64,
    pub samples: usize,
}

pub fn check_contraction(
    cert: &ContractionCertificate,
    map: &dyn DiscreteMap,
    states: &[Vector],
    times: &[usize],
) -> Result<ContractionReport> {
    if states.is_empty() || times.is_empty() {
        return Err(Error::Empty("contraction samples"));
    }
    let pairs = sample_pairs(states, times);
    let rows: Vec<Result<(f64, f64, f64, f64)>> = pairs
        .par_iter()
        .map(|&(i, t)| {
            let x = &states[i];
            let j = map.jacobian(x, t);
            let m_here = cert.metric_at(x, t);
            let m_next = cert.metric_at(&map.apply(x, t), t + 1);
            let pulled = j.transpose() * &m_next * &j;
            let excess = lambda_max_sym(&(&pulled - &m_here * cert.gamma));
            let rate = generalized_lambda_max(&pulled, &m_here)?;
            let eig = sym_eigen(&m_here).eigenvalues;
            let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Ok((excess, rate, lo, hi))
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let excess: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let k = argmax(&excess);
    let (i, t) = pairs[k];
    let eig_min = rows.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    let eig_max = rows.iter().map(|r| r.3).fold(f64::NEG_INFINITY, f64::max);
    Ok(ContractionReport {
        pass: excess.iter().all(|&e| e <= PSD_TOL),
        worst_excess: excess[k],
        witness: Witness {
            state: states[i].as_slice().to_vec(),
            time: t,
        },
        minimal_rate: rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max),
        metric_bounds_ok: eig_min >= cert.mu - METRIC_TOL && eig_max <= cert.l + METRIC_TOL,
        metric_eig_min: eig_min,
        metric_eig_max: eig_max,
        samples: pairs.len(),
    })
}

/// `(β, ρ, γ)` of exponential incremental input-to-state stability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IncrementalStabilityConstants {
    pub beta: f64,
    pub rho: f64,
    pub gamma: f64,
}

impl IncrementalStabilityConstants {
    pub fn new(beta: f64, rho: f64, gamma: f64) -> Result<Self> {
        if !(beta > 0.0) || !(gamma > 0.0) || !beta.is_finite() || !gamma.is_finite() {
            return Err(Error::Certificate(format!(
                "beta and gamma must be positive, got ({beta}, {gamma})"
            )));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Certificate(format!("rho must lie in (0, 1), got {rho}")));
        }
        Ok(IncrementalStabilityConstants { beta, rho, gamma })
    }

    /// `B_x = β‖x₀‖ + γ(2DM² + W)/(1 − ρ)`.
    pub fn state_bound(&self, x0_norm: f64, radius: f64, m: f64, w: f64) -> f64 {
        self.beta * x0_norm + self.gamma * (2.0 * radius * m * m + w) / (1.0 - self.rho)
    }
}

/// `(√(L/μ), √γ, √(L/μ))`.
pub fn e_delta_iss_from_contraction(cert: &ContractionCertificate) -> Result<IncrementalStabilityConstants> {
    if !(cert.mu > 0.0) || !(cert.l >= cert.mu) {
        return Err(Error::Certificate(format!(
            "metric bounds must satisfy 0 < mu <= L, got ({}, {})",
            cert.mu, cert.l
        )));
    }
    if !(cert.gamma > 0.0 && cert.gamma < 1.0) {
        return Err(Error::Certificate(format!(
            "contraction rate must lie in (0, 1), got {}",
            cert.gamma
        )));
    }
    let c = (cert.l / cert.mu).sqrt();
    IncrementalStabilityConstants::new(c, cert.gamma.sqrt(), c)
}

/// Contraction rate of `f(x,t) + w` for ‖w‖ ≤ W, or `None` when the
/// perturbation bound is not met or the rate would reach 1.
pub fn perturbed_contraction_rate(cert: &ContractionCertificate, w: f64) -> Option<f64> {
    if cert.l_m == 0.0 {
        return Some(cert.gamma);
    }
    let slope = cert.l_f * cert.l_f * cert.l_m / cert.mu;
    if w > (1.0 - cert.gamma) / slope {
        return None;
    }
    let rate = cert.gamma + slope * w;
    (rate < 1.0).then_some(rate)
}

#[derive(Debug, Clone, Serialize)]
pub struct IssReport {
    pub pass: bool,
    /// min over t of `rhs_t − lhs_t`.
    pub worst_slack: f64,
    pub worst_step: usize,
    pub steps: usize,
}

fn envelope_check(consts: &IncrementalStabilityConstants, x0_gap: f64, inputs: &[Vector], lhs: impl Fn(usize) -> f64) -> IssReport {
    let mut discounted = 0.0;
    let mut worst_slack = f64::INFINITY;
    let mut worst_step = 0;
    let mut pass = true;
    for t in 0..=inputs.len() {
        if t > 0 {
            discounted = consts.rho * discounted + inputs[t - 1].norm();
        }
        let rhs = consts.beta * consts.rho.powi(t as i32) * x0_gap + consts.gamma * discounted;
        let l = lhs(t);
        let slack = rhs - l;
        if !(l <= rhs + 1e-9 * rhs.max(1.0)) {
            pass = false;
        }
        if slack < worst_slack {
            worst_slack = slack;
            worst_step = t;
        }
    }
    IssReport {
        pass,
        worst_slack,
        worst_step,
        steps: inputs.len(),
    }
}

/// Simulates `x_{t+1} = f(x_t,t) + u_t`, `y_{t+1} = f(y_t,t)` and checks
/// `‖x_t − y_t‖ ≤ βρᵗ‖x₀ − y₀‖ + γ Σ_{k<t} ρ^{t−1−k}‖u_k‖` at every step.
pub fn verify_e_delta_iss_empirical(
    consts: &IncrementalStabilityConstants,
    map: &dyn DiscreteMap,
    inputs: &[Vector],
    x0: &Vector,
    y0: &Vector,
) -> IssReport {
    let mut gaps = Vec::with_capacity(inputs.len() + 1);
    let mut x = x0.clone();
    let mut y = y0.clone();
    gaps.push((&x - &y).norm());
    for (t, u) in inputs.iter().enumerate() {
        x = map.apply(&x, t) + u;
        y = map.apply(&y, t);
        gaps.push((&x - &y).norm());
    }
    envelope_check(consts, (x0 - y0).norm(), inputs, |t| gaps[t])
}

/// Single-trajectory analogue: `‖x_t‖ ≤ βρᵗ‖x₀‖ + γ Σ ρ^{t−1−k}‖u_k‖`.
pub fn check_e_iss_empirical(
    consts: &IncrementalStabilityConstants,
    map: &dyn DiscreteMap,
    inputs: &[Vector],
    x0: &Vector,
) -> IssReport {
    let mut norms = Vec::with_capacity(inputs.len() + 1);
    let mut x = x0.clone();
    norms.push(x.norm());
    for (t, u) in inputs.iter().enumerate() {
        x = map.apply(&x, t) + u;
        norms.push(x.norm());
    }
    envelope_check(consts, x0.norm(), inputs, |t| norms[t])
}

#[derive(Debug, Clone, Serialize)]
pub struct PeReport {
    pub satisfied: bool,
    /// `curve[t−1] = λ_min((1/t) Σ_{k<t} M_kᵀM_k)`.
    pub curve: Vec<f64>,
}

/// Persistence of excitation: `λ_min` of the running average information
/// matrix stays above μ from `t0` on.
pub fn pe_monitor(ms: &[Matrix], mu: f64, t0: usize) -> Result<PeReport> {
    if t0 == 0 {
        return Err(Error::Config("pe_monitor needs T0 >= 1".into()));
    }
    let Some(first) = ms.first() else {
        return Err(Error::Empty("excitation sequence"));
    };
    let p = first.ncols();
    let mut sum = Matrix::zeros(p, p);
    let mut curve = Vec::with_capacity(ms.len());
    for (k, m) in ms.iter().enumerate() {
        sum += m.transpose() * m;
        let avg = &sum / (k + 1) as f64;
        curve.push(crate::linalg::lambda_min_sym(&avg));
    }
    let satisfied = curve.iter().skip(t0 - 1).all(|&l| l >= mu - 1e-12);
    Ok(PeReport { satisfied, curve })
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    /// `max_{1≤t≤T} max_{0≤k<t} [−(t−k)ψ + B Σ_{s=k}^{t−1}‖d_s‖]`.
    pub value: f64,
    /// Same functional over the first half of the horizon.
    pub half_value: f64,
    pub unbounded_trend: bool,
}

impl AdmissibilityReport {
    /// Whether the sequence fits the family with bound `h`.
    pub fn within(&self, h: f64) -> bool {
        self.value <= h
    }
}

fn max_window(norms: &[f64], psi: f64, b: f64) -> f64 {
    // Kadane scan over a_s = B‖d_s‖ − ψ.
    let mut best = f64::NEG_INFINITY;
    let mut ending = f64::NEG_INFINITY;
    for &d in norms {
        let a = b * d - psi;
        ending = if ending > 0.0 { ending + a } else { a };
        best = best.max(ending);
    }
    best
}

pub fn admissibility_functional(d_norms: &[f64], psi: f64, b: f64) -> Result<AdmissibilityReport> {
    if !(psi > 0.0) || !(b > 0.0) {
        return Err(Error::Config(format!("admissibility needs psi > 0 and B > 0, got ({psi}, {b})")));
    }
    if d_norms.is_empty() {
        return Err(Error::Empty("admissibility sequence"));
    }
    let value = max_window(d_norms, psi, b);
    let half = d_norms.len() / 2;
    let half_value = if half == 0 { value } else { max_window(&d_norms[..half], psi, b) };
    Ok(AdmissibilityReport {
        value,
        half_value,
        unbounded_trend: value - half_value > psi,
    })
}

/// O(T²) evaluation of the admissibility functional, for cross-checks.
pub fn admissibility_brute_force(d_norms: &[f64], psi: f64, b: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for t in 1..=d_norms.len() {
        for k in 0..t {
            let s: f64 = d_norms[k..t].iter().sum();
            best = best.max(-((t - k) as f64) * psi + b * s);
        }
    }
    best
}

/// Latin-hypercube samples in the box `[lo, hi]`.
pub fn latin_hypercube(lo: &[f64], hi: &[f64], count: usize, seed: u64) -> Vec<Vector> {
    let n = lo.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut strata: Vec<usize> = (0..count).collect();
        for i in (1..count).rev() {
            let k = rng.random_range(0..=i);
            strata.swap(i, k);
        }
        columns.push(
            strata
                .into_iter()
                .map(|s| {
                    let u = (s as f64 + rng.random::<f64>()) / count as f64;
                    lo[j] + u * (hi[j] - lo[j])
                })
                .collect(),
        );
    }
    (0..count)
        .map(|i| Vector::from_fn(n, |j, _| columns[j][i]))
        .collect()
}

/// Evenly spaced grid over the box `[lo, hi]` with `per_axis` points per axis.
pub fn box_grid(lo: &[f64], hi: &[f64], per_axis: usize) -> Vec<Vector> {
    let n = lo.len();
    let total = per_axis.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            Vector::from_fn(n, |j, _| {
                let k = idx % per_axis;
                idx /= per_axis;
                if per_axis == 1 {
                    0.5 * (lo[j] + hi[j])
                } else {
                    lo[j] + (hi[j] - lo[j]) * k as f64 / (per_axis - 1) as f64
                }
            })
        })
        .collect()
}

/// Polar grid on the annulus `r_lo ≤ r ≤ r_hi`.
pub fn annulus_grid(r_lo: f64, r_hi: f64, n_r: usize, n_theta: usize) -> Vec<Vector> {
    let mut out = Vec::with_capacity(n_r * n_theta);
    for i in 0..n_r {
        let r = if n_r == 1 {
            r_lo
        } else {
            r_lo + (r_hi - r_lo) * i as f64 / (n_r - 1) as f64
        };
        for j in 0..n_theta {
            let th = 2.0 * std::f64::consts::PI * j as f64 / n_theta as f64;
            out.push(Vector::from_vec(vec![r * th.cos(), r * th.sin()]));
        }
    }
    out
}
