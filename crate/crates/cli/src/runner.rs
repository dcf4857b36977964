//! Builds the experiment a config describes, runs it and writes the reports.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use adreg::adapt::{ogd_gain, GradFn, LawKind, LawSpec};
use adreg::bench::cartpole::{
    average_cost, build_cartpole_experiment, cartpole_rollout, equilibrium, initial_conditions, linearize,
    CartpoleConfig, CartpoleExperiment,
};
use adreg::bench::limit_cycle::{
    build_limit_cycle_delay_experiment, build_limit_cycle_experiment, nominal_map, LimitCycleParams,
};
use adreg::bench::scalar::{scalar_certificate_for, try_scalar_model};
use adreg::c2d::{tau_budget_contraction, tau_budget_lyapunov};
use adreg::dynamics::{DiscreteMap, FnMap, SystemModel};
use adreg::linalg::{derive_seed, derive_seeds, spectral_norm, Matrix, Vector};
use adreg::regret::{run_regret_experiment, RegretConstants, RegretExperiment};
use adreg::stability::{
    annulus_grid, box_grid, check_contraction, check_lyapunov_decrease, e_delta_iss_from_contraction,
    latin_hypercube, ContractionCertificate, IncrementalStabilityConstants, LyapunovCertificate,
};

use crate::config::{ConfigError, ExperimentConfig, ExperimentId, InitialEstimate, SampleBox};
use crate::output;

/// Largest grid the sampled checks enumerate before switching to a
/// Latin hypercube of `LHS_SAMPLES` points.
const MAX_GRID: usize = 20_000;
const LHS_SAMPLES: usize = 4096;

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Runtime(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(e) => e.fmt(f),
            Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

fn config_err(key: &str, message: impl std::fmt::Display) -> Failure {
    Failure::Config(ConfigError {
        key: key.into(),
        message: message.to_string(),
    })
}

fn runtime(context: &str) -> impl Fn(adreg::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{context}: {e}"))
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("cannot write {}: {e}", path.display()))
}

/// One certificate check or budget with its verdict.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: Value,
}

fn check(name: &str, pass: bool, detail: impl Serialize) -> Check {
    Check {
        name: name.into(),
        pass,
        detail: serde_json::to_value(detail).expect("reports serialize"),
    }
}

/// What the run and verify commands report.
pub struct Outcome {
    pub checks_pass: bool,
}

fn matrix(rows: &[Vec<f64>]) -> Matrix {
    Matrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
}

fn square(key: &str, rows: &[Vec<f64>], n: usize) -> Result<Matrix, Failure> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(config_err(key, format!("must be a {n}x{n} matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(config_err(key, "entries must be finite"));
    }
    Ok(matrix(rows))
}

fn sample_region(key: &str, b: &SampleBox, n: usize) -> Result<Vec<Vector>, Failure> {
    if !(b.lo < b.hi) || !b.lo.is_finite() || !b.hi.is_finite() {
        return Err(config_err(key, format!("need finite lo < hi, got [{}, {}]", b.lo, b.hi)));
    }
    if b.per_axis < 2 {
        return Err(config_err(key, "per_axis must be at least 2"));
    }
    let lo = vec![b.lo; n];
    let hi = vec![b.hi; n];
    let grid_size = (b.per_axis as f64).powi(n as i32);
    Ok(if grid_size <= MAX_GRID as f64 {
        box_grid(&lo, &hi, b.per_axis)
    } else {
        latin_hypercube(&lo, &hi, LHS_SAMPLES, 0)
    })
}

fn spectral_radius(m: &Matrix) -> f64 {
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest `‖f(x)‖/‖x‖` over the nonzero samples.
fn growth_bound(map: &dyn DiscreteMap, samples: &[Vector]) -> f64 {
    samples
        .iter()
        .filter(|x| x.norm() > 0.0)
        .map(|x| map.apply(x, 0).norm() / x.norm())
        .fold(0.0, f64::max)
}

/// Identity-metric contraction at `γ = ‖A‖²`; the verdict also requires
/// `γ < 1`, without which no incremental stability constants exist.
fn linear_contraction(a: &Matrix, samples: &[Vector]) -> Result<(Check, Option<IncrementalStabilityConstants>), Failure> {
    let n = a.nrows();
    let norm = spectral_norm(a);
    let cert = ContractionCertificate::constant_metric(Matrix::identity(n, n), norm * norm, norm);
    let am = a.clone();
    let map = FnMap::new(n, move |x, _| &am * x);
    let report = check_contraction(&cert, &map, samples, &[0]).map_err(runtime("contraction check"))?;
    let iss = e_delta_iss_from_contraction(&cert).ok();
    let pass = report.pass && cert.gamma < 1.0;
    Ok((
        check(
            "identity_metric_contraction",
            pass,
            json!({ "gamma": cert.gamma, "report": report, "iss_available": iss.is_some() }),
        ),
        iss,
    ))
}

fn lyapunov_check(name: &str, cert: &LyapunovCertificate, map: &dyn DiscreteMap, samples: &[Vector]) -> Result<Check, Failure> {
    let report = check_lyapunov_decrease(cert, map, samples, &[0]).map_err(runtime("Lyapunov check"))?;
    Ok(check(
        name,
        report.pass,
        json!({ "rho": cert.rho, "mu": cert.mu, "l_q": cert.l_q, "report": report }),
    ))
}

/// A model with everything the regret runner needs.
struct RegretSetup {
    model: SystemModel,
    x0: Vector,
    grad_q: Option<GradFn>,
    lyapunov: Option<LyapunovCertificate>,
    iss: Option<IncrementalStabilityConstants>,
    op_norm: f64,
    noise_bound: f64,
    radius: f64,
}

enum Prepared {
    Regret(RegretSetup),
    Cartpole(Box<CartpoleExperiment>, CartpoleConfig),
}

impl Prepared {
    fn model(&self) -> &SystemModel {
        match self {
            Prepared::Regret(s) => &s.model,
            Prepared::Cartpole(e, _) => &e.model,
        }
    }
}

fn noise_bound(cfg: &ExperimentConfig, fallback: f64) -> f64 {
    cfg.constants.noise_bound.or(cfg.noise.bound()).unwrap_or(fallback)
}

/// Builds the model and runs the checks that come with the experiment.
fn prepare(cfg: &ExperimentConfig) -> Result<(Prepared, Vec<Check>), Failure> {
    let c = &cfg.constants;
    let mut checks = Vec::new();
    let prepared = match cfg.experiment {
        ExperimentId::ScalarSuite => {
            let (a, alpha) = cfg.scalar.as_ref().map_or((0.5, 1.0), |s| (s.a, s.alpha));
            let radius = c.radius.unwrap_or(1.0);
            let op_norm = c.op_norm.unwrap_or(1.0);
            let model = try_scalar_model(a, alpha, radius, op_norm).map_err(|e| config_err("scalar.alpha", e))?;
            let cert = scalar_certificate_for(a);
            let map = FnMap::new(1, move |x, _| x * a);
            let samples = box_grid(&[-5.0], &[5.0], 21);
            checks.push(lyapunov_check("lyapunov_decrease", &cert, &map, &samples)?);
            let (contraction, iss) = linear_contraction(&Matrix::from_element(1, 1, a), &samples)?;
            checks.push(contraction);
            Prepared::Regret(RegretSetup {
                model,
                x0: Vector::from_vec(cfg.x0.clone().unwrap_or_else(|| vec![1.0])),
                grad_q: Some(cert.grad_q.clone()),
                lyapunov: Some(cert),
                iss,
                op_norm,
                noise_bound: noise_bound(cfg, 0.0),
                radius,
            })
        }
        ExperimentId::Custom => {
            let cs = cfg.custom.as_ref().expect("validated");
            let a = matrix(&cs.a);
            let b = matrix(&cs.b);
            let y = matrix(&cs.basis);
            let n = a.nrows();
            let alpha = Vector::from_vec(cs.alpha.clone());
            let radius = c.radius.unwrap_or(1.0);
            if alpha.norm() > radius {
                return Err(config_err("custom.alpha", format!("norm {} exceeds radius D = {radius}", alpha.norm())));
            }
            let op_norm = c.op_norm.unwrap_or_else(|| spectral_norm(&b).max(spectral_norm(&y)));
            let (am, bm, ym) = (a.clone(), b.clone(), y.clone());
            let model = SystemModel::builder(n, b.ncols(), y.ncols())
                .nominal(move |x, _| &am * x)
                .input_matrix(move |_, _| bm.clone())
                .basis(move |_, _| ym.clone())
                .true_param(alpha)
                .param_radius(radius)
                .op_norm_bound(op_norm)
                .state_dependent_basis(false)
                .build()
                .map_err(|e| config_err("custom", e))?;
            let samples = sample_region("custom", &SampleBox::default(), n)?;
            let lyapunov = match cs.rho {
                Some(rho) => {
                    let p = match &cs.lyapunov_p {
                        Some(rows) => square("custom.lyapunov_p", rows, n)?,
                        None => Matrix::identity(n, n),
                    };
                    let cert = LyapunovCertificate::quadratic(p, rho, spectral_norm(&a));
                    let am = a.clone();
                    let map = FnMap::new(n, move |x, _| &am * x);
                    checks.push(lyapunov_check("lyapunov_decrease", &cert, &map, &samples)?);
                    Some(cert)
                }
                None if cfg.law == LawKind::Vg => {
                    return Err(config_err("custom.rho", "the velocity gradient law needs a Lyapunov decrease rate"));
                }
                None => None,
            };
            let (contraction, iss) = linear_contraction(&a, &samples)?;
            checks.push(contraction);
            Prepared::Regret(RegretSetup {
                model,
                x0: Vector::from_vec(cfg.x0.clone().unwrap_or_else(|| vec![1.0; n])),
                grad_q: lyapunov.as_ref().map(|l| l.grad_q.clone()),
                lyapunov,
                iss,
                op_norm,
                noise_bound: noise_bound(cfg, 0.0),
                radius,
            })
        }
        ExperimentId::LimitCycle => {
            let defaults = LimitCycleParams::default();
            let s = cfg.limit_cycle.clone().unwrap_or_default();
            let mut params = LimitCycleParams {
                tau: s.tau.unwrap_or(defaults.tau),
                sigma: s.sigma.unwrap_or(defaults.sigma),
                features: s.features.unwrap_or(defaults.features),
                seed: s.feature_seed.unwrap_or(defaults.seed),
                alpha_norm: s.alpha_norm.unwrap_or(defaults.alpha_norm),
                radius: c.radius.unwrap_or(defaults.radius),
                noise_bound: noise_bound(cfg, defaults.noise_bound),
                ..defaults
            };
            if let Some(x0) = &cfg.x0 {
                params.x0 = [x0[0], x0[1]];
            }
            let exp = if cfg.delay > 0 {
                build_limit_cycle_delay_experiment(&params)
            } else {
                build_limit_cycle_experiment(&params)
            }
            .map_err(|e| config_err("limit_cycle", e))?;
            let tau = params.tau;
            let map = FnMap::new(2, move |z, _| nominal_map(tau, z));
            let (lo, hi) = params.annulus;
            let grid = annulus_grid(lo, hi, 16, 64);
            let report = check_contraction(&exp.certificate, &map, &grid, &[0]).map_err(runtime("contraction check"))?;
            checks.push(check(
                "polar_metric_contraction",
                report.pass,
                json!({ "gamma": exp.certificate.gamma, "annulus": [lo, hi], "report": report }),
            ));
            Prepared::Regret(RegretSetup {
                x0: exp.x0(),
                grad_q: None,
                lyapunov: None,
                iss: Some(exp.iss),
                op_norm: c.op_norm.unwrap_or(exp.op_norm),
                noise_bound: params.noise_bound,
                radius: params.radius,
                model: exp.model,
            })
        }
        ExperimentId::Cartpole => {
            let s = cfg.cartpole.clone().unwrap_or_default();
            let defaults = CartpoleConfig::default();
            let cp = CartpoleConfig {
                features: s.features.unwrap_or(defaults.features),
                feature_seed: s.feature_seed.unwrap_or(defaults.feature_seed),
                init_radius: s.init_radius.unwrap_or(defaults.init_radius),
                q_weight: s.q_weight.unwrap_or(defaults.q_weight),
                r_weight: s.r_weight.unwrap_or(defaults.r_weight),
                radius: c.radius.unwrap_or(defaults.radius),
                lambda: c.lambda.unwrap_or(defaults.lambda),
                horizon: *cfg.horizons.last().expect("validated"),
                trajectories: cfg.n_rollouts,
                init_seed: cfg.master_seed,
                ..defaults
            };
            let exp = build_cartpole_experiment(&cp).map_err(|e| config_err("cartpole", e))?;
            let (a, b) = linearize(&cp.design, &equilibrium(), 0.0);
            let design_radius = spectral_radius(&(&a - &b * &exp.gain));
            let (at, bt) = linearize(&cp.truth, &equilibrium(), 0.0);
            let truth_radius = spectral_radius(&(&at - &bt * &exp.gain));
            checks.push(check(
                "design_lqr_stability",
                design_radius < 1.0,
                json!({ "design_closed_loop_radius": design_radius, "true_closed_loop_radius": truth_radius }),
            ));
            Prepared::Cartpole(Box::new(exp), cp)
        }
    };
    Ok((prepared, checks))
}

/// Checks and budgets from the `[verify]` section, on the nominal map.
fn declared_checks(cfg: &ExperimentConfig, model: &SystemModel) -> Result<Vec<Check>, Failure> {
    let Some(v) = &cfg.verify else {
        return Ok(Vec::new());
    };
    let n = model.state_dim;
    let m = model.clone();
    let map = FnMap::new(n, move |x, t| m.nominal(x, t));
    let mut out = Vec::new();
    if let Some(l) = &v.lyapunov {
        let p = match &l.p {
            Some(rows) => square("verify.lyapunov.p", rows, n)?,
            None => Matrix::identity(n, n),
        };
        let samples = sample_region("verify.lyapunov.samples", &l.samples, n)?;
        let cert = LyapunovCertificate::quadratic(p, l.rho, growth_bound(&map, &samples));
        let mut c = lyapunov_check("declared_lyapunov_decrease", &cert, &map, &samples)?;
        c.detail["region"] = serde_json::to_value(&l.samples).expect("serializable");
        out.push(c);
    }
    if let Some(k) = &v.contraction {
        let metric = match &k.metric {
            Some(rows) => square("verify.contraction.metric", rows, n)?,
            None => Matrix::identity(n, n),
        };
        let samples = sample_region("verify.contraction.samples", &k.samples, n)?;
        let cert = ContractionCertificate::constant_metric(metric, k.gamma, growth_bound(&map, &samples));
        let report = check_contraction(&cert, &map, &samples, &[0]).map_err(runtime("contraction check"))?;
        out.push(check(
            "declared_contraction",
            report.pass,
            json!({ "gamma": k.gamma, "region": k.samples, "report": report }),
        ));
    }
    if let Some(b) = &v.zoh_lyapunov {
        let entry = tau_budget_lyapunov(b.l_f, b.l_pi, b.l_q, b.rho, b.mu, b.gamma_split)
            .map_err(|e| config_err("verify.zoh_lyapunov.gamma_split", e))?;
        out.push(check("zoh_lyapunov_budget", entry.gates_ok, &entry));
    }
    if let Some(b) = &v.zoh_contraction {
        let entry = tau_budget_contraction(b.l_f, b.l_pi, b.l_m, b.lambda, b.mu, b.l, b.radius, b.gamma_split)
            .map_err(|e| config_err("verify.zoh_contraction.gamma_split", e))?;
        out.push(check("zoh_contraction_budget", entry.gates_ok, &entry));
    }
    Ok(out)
}

/// Rollout seeds in order.
pub fn rollout_seeds(cfg: &ExperimentConfig) -> Vec<u64> {
    match &cfg.seeds {
        Some(s) => s.clone(),
        None => derive_seeds(cfg.master_seed, cfg.n_rollouts),
    }
}

fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

pub fn verify(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, Failure> {
    let (prepared, mut checks) = prepare(cfg)?;
    checks.extend(declared_checks(cfg, prepared.model())?);
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let pass = all_pass(&checks);
    let doc = json!({
        "experiment": cfg.experiment,
        "checks": checks,
        "all_pass": pass,
    });
    output::write_json(out_dir, "verify.json", &doc).map_err(io(out_dir))?;
    Ok(Outcome { checks_pass: pass })
}

pub fn run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, Failure> {
    let start = Instant::now();
    let (prepared, mut checks) = prepare(cfg)?;
    checks.extend(declared_checks(cfg, prepared.model())?);
    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let pass = all_pass(&checks);
    output::write(out_dir, "config.toml", &cfg.to_toml()).map_err(io(out_dir))?;
    let mut summary = json!({
        "experiment": cfg.experiment,
        "config": cfg,
        "checks": checks,
        "all_checks_pass": pass,
    });
    match prepared {
        Prepared::Regret(setup) => run_regret(cfg, &setup, out_dir, &mut summary)?,
        Prepared::Cartpole(exp, cp) => run_cartpole(cfg, &exp, &cp, out_dir, &mut summary)?,
    }
    summary["runtime_seconds"] = json!(start.elapsed().as_secs_f64());
    output::write_json(out_dir, "summary.json", &summary).map_err(io(out_dir))?;
    Ok(Outcome { checks_pass: pass })
}

fn run_regret(cfg: &ExperimentConfig, s: &RegretSetup, out_dir: &Path, summary: &mut Value) -> Result<(), Failure> {
    let c = &cfg.constants;
    let lambda = c.lambda.unwrap_or(1.0);
    let eta = c.eta.unwrap_or(1.0);
    let gain = c.gain.unwrap_or_else(|| ogd_gain(s.op_norm, s.radius, s.noise_bound));
    let law = LawSpec {
        kind: cfg.law,
        radius: s.radius,
        lambda,
        eta,
        gain: Some(gain),
    };
    let start_from = cfg.initial_estimate.unwrap_or(if cfg.law == LawKind::Frozen {
        InitialEstimate::Oracle
    } else {
        InitialEstimate::Zero
    });
    let initial_estimate = match start_from {
        InitialEstimate::Zero => Vector::zeros(s.model.param_dim),
        InitialEstimate::Oracle => s.model.true_param.clone(),
    };
    if s.x0.len() != s.model.state_dim {
        return Err(config_err("x0", format!("must have {} entries", s.model.state_dim)));
    }
    let constants = s.iss.map(|iss| {
        RegretConstants::from_problem(iss, s.x0.norm(), s.radius, s.op_norm, s.noise_bound, lambda, s.model.param_dim)
    });
    let exp = RegretExperiment {
        x0: s.x0.clone(),
        initial_estimate,
        law,
        grad_q: s.grad_q.clone(),
        noise: cfg.noise.clone(),
        horizons: cfg.horizons.clone(),
        seeds: rollout_seeds(cfg),
        delay: cfg.delay,
        constants,
        lyapunov: s.lyapunov.clone(),
        jobs: None,
    };
    let (report, records) = run_regret_experiment(&s.model, &exp).map_err(runtime("rollout"))?;

    output::write(out_dir, "regret.csv", &output::regret_csv(&report)).map_err(io(out_dir))?;
    let keep = cfg.trajectory_files.unwrap_or(records.len());
    for rec in records.iter().take(keep) {
        let name = format!("trajectory_{}.csv", rec.seed);
        output::write(out_dir, &name, &output::trajectory_csv(rec)).map_err(io(out_dir))?;
    }

    let applicable = output::applicable_bounds(&report);
    let holds: serde_json::Map<String, Value> = applicable
        .iter()
        .map(|id| {
            let ok = report.bounds[*id].iter().zip(&report.control).all(|(b, m)| m.mean <= b.value);
            (id.to_string(), json!(ok))
        })
        .collect();
    let inapplicable: Vec<&String> = report.bounds.keys().filter(|k| !applicable.contains(&k.as_str())).collect();
    summary["seeds"] = json!(report.seeds);
    summary["derived"] = json!({
        "radius": s.radius,
        "lambda": lambda,
        "eta": eta,
        "op_norm": s.op_norm,
        "noise_bound": s.noise_bound,
        "gain": gain,
        "b_x": constants.map(|k| k.b_x),
        "iss": s.iss,
    });
    summary["regret"] = json!({
        "horizons": report.horizons,
        "control": report.control,
        "prediction": report.prediction,
        "control_slope": report.control_slope(),
        "bounds_applicable": applicable,
        "bounds_inapplicable": inapplicable,
        "mean_within_bound": holds,
    });
    Ok(())
}

fn run_cartpole(
    cfg: &ExperimentConfig,
    exp: &CartpoleExperiment,
    cp: &CartpoleConfig,
    out_dir: &Path,
    summary: &mut Value,
) -> Result<(), Failure> {
    let adapt = cfg.law == LawKind::Vg;
    let records = initial_conditions(cp)
        .par_iter()
        .map(|e0| cartpole_rollout(exp, cp, e0, adapt))
        .collect::<adreg::Result<Vec<_>>>()
        .map_err(runtime("cartpole rollout"))?;
    let costs: Vec<f64> = records.iter().map(|r| average_cost(r, cp.horizon)).collect();
    let diverged: Vec<bool> = records.iter().map(|r| r.diverged()).collect();
    output::write(out_dir, "cartpole.csv", &output::cartpole_csv(&costs, &diverged)).map_err(io(out_dir))?;
    let keep = cfg.trajectory_files.unwrap_or(records.len());
    for (i, rec) in records.iter().enumerate().take(keep) {
        let name = format!("trajectory_{}.csv", derive_seed(cp.init_seed, i as u64));
        output::write(out_dir, &name, &output::trajectory_csv(rec)).map_err(io(out_dir))?;
    }
    let n = costs.len().max(1) as f64;
    let below = |level: f64| costs.iter().filter(|&&c| c < level).count() as f64 / n;
    summary["derived"] = json!({
        "radius": cp.radius,
        "lambda": cp.lambda,
        "op_norm": exp.model.op_norm_bound,
        "lqr_gain": exp.gain.as_slice(),
    });
    summary["cartpole"] = json!({
        "trajectories": costs.len(),
        "horizon": cp.horizon,
        "fraction_below_0.1": below(0.1),
        "fraction_below_1": below(1.0),
        "fraction_diverged": diverged.iter().filter(|&&d| d).count() as f64 / n,
        "initial_condition_seeds": (0..costs.len()).map(|i| derive_seed(cp.init_seed, i as u64)).collect::<Vec<_>>(),
    });
    Ok(())
}
