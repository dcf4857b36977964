//! Experiment configuration. Parsing is strict: unknown keys are errors.

use serde::{Deserialize, Serialize};

use adreg::adapt::LawKind;
use adreg::dynamics::NoiseSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    Cartpole,
    LimitCycle,
    ScalarSuite,
    Custom,
}

/// Starting estimate `α̂₀`: zero, or the hidden parameter itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialEstimate {
    Zero,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    pub law: LawKind,
    /// Strictly increasing horizons at which regret is reported.
    pub horizons: Vec<usize>,
    #[serde(default = "default_rollouts")]
    pub n_rollouts: usize,
    #[serde(default)]
    pub delay: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Explicit per-rollout seeds; replaces the expansion of `master_seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Defaults to `oracle` for the frozen law and `zero` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_estimate: Option<InitialEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    /// Cap on the number of `trajectory_<seed>.csv` files; all when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_files: Option<usize>,
    #[serde(default)]
    pub constants: ConstantOverrides,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<ScalarSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_cycle: Option<LimitCycleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cartpole: Option<CartpoleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
}

fn default_rollouts() -> usize {
    1
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::Zero
}

/// Overrides of `D`, `λ`, `M`, `W`, `η` and the OGD gain `G`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op_norm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_bound: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

/// `x⁺ = a·x + (u − α)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarSection {
    #[serde(default = "half")]
    pub a: f64,
    #[serde(default = "unit")]
    pub alpha: f64,
}

fn half() -> f64 {
    0.5
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitCycleSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CartpoleSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_weight: Option<f64>,
}

/// Linear system `x⁺ = Ax + B(u − Yα)` with constant `B` and `Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub basis: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    /// `Q(x) = xᵀPx`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_p: Option<Vec<Vec<f64>>>,
    /// Decrease rate of `Q`; enables the velocity-gradient bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contraction: Option<ContractionCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoh_lyapunov: Option<ZohLyapunovBudget>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zoh_contraction: Option<ZohContractionBudget>,
}

/// Sample box `[lo, hi]ⁿ` with `per_axis` points per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBox {
    #[serde(default = "minus_one")]
    pub lo: f64,
    #[serde(default = "unit")]
    pub hi: f64,
    #[serde(default = "default_per_axis")]
    pub per_axis: usize,
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox {
            lo: -1.0,
            hi: 1.0,
            per_axis: default_per_axis(),
        }
    }
}

fn minus_one() -> f64 {
    -1.0
}

fn default_per_axis() -> usize {
    9
}

/// `Q(x) = xᵀPx` with decrease rate `ρ` on the nominal map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovCheck {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    pub rho: f64,
    #[serde(default)]
    pub samples: SampleBox,
}

/// Constant metric `M` (identity when absent) with rate `γ` on the nominal map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionCheck {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<Vec<f64>>>,
    pub gamma: f64,
    #[serde(default)]
    pub samples: SampleBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZohLyapunovBudget {
    pub l_f: f64,
    pub l_pi: f64,
    pub l_q: f64,
    pub rho: f64,
    pub mu: f64,
    #[serde(default = "half")]
    pub gamma_split: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZohContractionBudget {
    pub l_f: f64,
    pub l_pi: f64,
    pub l_m: f64,
    pub lambda: f64,
    pub mu: f64,
    pub l: f64,
    pub radius: f64,
    #[serde(default = "half")]
    pub gamma_split: f64,
}

/// A configuration problem tied to the key that caused it.
#[derive(Debug)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.message)
    }
}

fn err(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.into(),
        message: message.into(),
    }
}

fn positive(key: &str, v: Option<f64>) -> Result<(), ConfigError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(err(key, format!("must be positive and finite, got {x}"))),
        _ => Ok(()),
    }
}

fn rectangular(key: &str, m: &[Vec<f64>]) -> Result<(usize, usize), ConfigError> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 || m.iter().any(|r| r.len() != cols) {
        return Err(err(key, "must be a nonempty rectangular matrix (list of equal-length rows)"));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(err(key, "entries must be finite"));
    }
    Ok((rows, cols))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| err("<document>", e.message().to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let key = if path == "." { "<document>".to_string() } else { path };
            err(&key, e.inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.horizons.is_empty() {
            return Err(err("horizons", "must list at least one horizon"));
        }
        if self.horizons[0] == 0 || self.horizons.windows(2).any(|w| w[0] >= w[1]) {
            return Err(err("horizons", "must be positive and strictly increasing"));
        }
        match &self.seeds {
            Some(s) if s.is_empty() => return Err(err("seeds", "must not be empty")),
            Some(s) if s.iter().collect::<std::collections::BTreeSet<_>>().len() != s.len() => {
                return Err(err("seeds", "must be distinct"))
            }
            None if self.n_rollouts == 0 => return Err(err("n_rollouts", "must be at least 1")),
            _ => {}
        }
        self.noise.validate().map_err(|e| err("noise", e.to_string()))?;
        let c = &self.constants;
        positive("constants.radius", c.radius)?;
        positive("constants.lambda", c.lambda)?;
        positive("constants.op_norm", c.op_norm)?;
        positive("constants.gain", c.gain)?;
        if let Some(w) = c.noise_bound {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(err("constants.noise_bound", format!("must be nonnegative, got {w}")));
            }
        }
        if let Some(eta) = c.eta {
            if !(eta >= 1.0 && eta.is_finite()) {
                return Err(err("constants.eta", format!("online Newton needs eta >= 1, got {eta}")));
            }
        }
        if let Some(x0) = &self.x0 {
            if x0.is_empty() || x0.iter().any(|v| !v.is_finite()) {
                return Err(err("x0", "must be a nonempty list of finite numbers"));
            }
        }

        let section_for = |id: ExperimentId| match id {
            ExperimentId::Cartpole => ("cartpole", self.cartpole.is_some()),
            ExperimentId::LimitCycle => ("limit_cycle", self.limit_cycle.is_some()),
            ExperimentId::ScalarSuite => ("scalar", self.scalar.is_some()),
            ExperimentId::Custom => ("custom", self.custom.is_some()),
        };
        for other in [
            ExperimentId::Cartpole,
            ExperimentId::LimitCycle,
            ExperimentId::ScalarSuite,
            ExperimentId::Custom,
        ] {
            let (name, present) = section_for(other);
            if present && other != self.experiment {
                return Err(err(name, "section does not belong to the selected experiment"));
            }
        }

        match self.experiment {
            ExperimentId::Cartpole => {
                if !matches!(self.law, LawKind::Vg | LawKind::Frozen) {
                    return Err(err("law", "cartpole supports `vg` and `frozen`"));
                }
                if self.delay > 0 {
                    return Err(err("delay", "cartpole features depend on the state; delay must be 0"));
                }
                if !matches!(self.noise, NoiseSpec::Zero) {
                    return Err(err("noise", "cartpole runs without process noise"));
                }
                if self.seeds.is_some() {
                    return Err(err("seeds", "cartpole initial conditions derive from master_seed"));
                }
                if self.x0.is_some() {
                    return Err(err("x0", "cartpole draws its initial conditions; use cartpole.init_radius"));
                }
                if let Some(cp) = &self.cartpole {
                    positive("cartpole.init_radius", cp.init_radius)?;
                    positive("cartpole.q_weight", cp.q_weight)?;
                    positive("cartpole.r_weight", cp.r_weight)?;
                    if cp.features == Some(0) {
                        return Err(err("cartpole.features", "must be at least 1"));
                    }
                }
            }
            ExperimentId::LimitCycle => {
                if self.law == LawKind::Vg {
                    return Err(err("law", "the limit cycle has no Lyapunov function configured; use ogd, newton, rls or frozen"));
                }
                if self.x0.as_ref().is_some_and(|x| x.len() != 2) {
                    return Err(err("x0", "must have 2 entries"));
                }
                if let Some(lc) = &self.limit_cycle {
                    positive("limit_cycle.tau", lc.tau)?;
                    positive("limit_cycle.sigma", lc.sigma)?;
                    if lc.features == Some(0) {
                        return Err(err("limit_cycle.features", "must be at least 1"));
                    }
                }
            }
            ExperimentId::ScalarSuite => {
                if self.x0.as_ref().is_some_and(|x| x.len() != 1) {
                    return Err(err("x0", "must have 1 entry"));
                }
                if let Some(s) = &self.scalar {
                    if !(s.a.abs() < 1.0) {
                        return Err(err("scalar.a", format!("must satisfy |a| < 1, got {}", s.a)));
                    }
                }
            }
            ExperimentId::Custom => {
                let cs = self.custom.as_ref().ok_or_else(|| err("custom", "section required for experiment `custom`"))?;
                let (n, na) = rectangular("custom.a", &cs.a)?;
                if n != na {
                    return Err(err("custom.a", "must be square"));
                }
                let (nb, d) = rectangular("custom.b", &cs.b)?;
                if nb != n {
                    return Err(err("custom.b", format!("must have {n} rows")));
                }
                let (dy, p) = rectangular("custom.basis", &cs.basis)?;
                if dy != d {
                    return Err(err("custom.basis", format!("must have {d} rows (columns of b)")));
                }
                if cs.alpha.len() != p {
                    return Err(err("custom.alpha", format!("must have {p} entries (columns of basis)")));
                }
                if let Some(pm) = &cs.lyapunov_p {
                    let (r, c) = rectangular("custom.lyapunov_p", pm)?;
                    if r != n || c != n {
                        return Err(err("custom.lyapunov_p", format!("must be {n}x{n}")));
                    }
                }
                positive("custom.rho", cs.rho)?;
                if let Some(x0) = &self.x0 {
                    if x0.len() != n {
                        return Err(err("x0", format!("must have {n} entries")));
                    }
                }
            }
        }
        Ok(())
    }
}
