//! JSON scenario files.

use crate::linalg::{mat_from_rows, mat_to_rows, LinalgError, Mat, Vector};
use crate::model::{
    riccati_gain, CostForm, InputBox, InputConstraint, LinearStochasticSystem, ModelError, QuadCost, RiskConstraints,
    StateConstraint,
};
use crate::noise::{DisturbanceSampler, GaussianSampler, UniformSampler};
use crate::risk::RiskSpec;
use crate::sim::InitialCondition;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// The DC-DC converter regulation scenario.
pub const DCDC_JSON: &str = include_str!("scenarios/dcdc.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {msg}")]
    Json { line: usize, column: usize, msg: String },
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("{0}")]
    Invalid(String),
    #[error("unknown gain label '{0}'")]
    UnknownGain(String),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<serde_json::Error> for ConfigError {
    fn from(e: serde_json::Error) -> Self {
        ConfigError::Json { line: e.line(), column: e.column(), msg: e.to_string() }
    }
}

impl From<LinalgError> for ConfigError {
    fn from(e: LinalgError) -> Self {
        ConfigError::Invalid(e.to_string())
    }
}

/// How the tube gain `K` is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GainSpec {
    /// The LQR gain `K*` for the stage weights.
    Riccati,
    /// The LQR gain for `(q_scale·Q, r_scale·R)`.
    ScaledRiccati { q_scale: f64, r_scale: f64 },
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledGain {
    pub label: String,
    pub gain: GainSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_w: Option<Vec<f64>>,
    pub sigma_w: Vec<Vec<f64>>,
    pub gain: GainSpec,
    #[serde(default, skip_serializing_if = "NoiseSpec::is_gaussian")]
    pub noise: NoiseSpec,
}

/// Law of the centered disturbance. Its covariance must match `sigma_w`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    #[default]
    Gaussian,
    /// Independent coordinates uniform on `[−h, h]`; covariance `diag(h²/3)`.
    Uniform { half_widths: Vec<f64> },
}

impl NoiseSpec {
    pub fn is_gaussian(&self) -> bool {
        *self == NoiseSpec::Gaussian
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBlock {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default)]
    pub form: CostForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateRow {
    pub c: Vec<f64>,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputRow {
    pub d: Vec<f64>,
    pub q: f64,
}

/// `null` entries are unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBlock {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintBlock {
    pub risk: RiskSpec,
    #[serde(default)]
    pub state: Vec<StateRow>,
    #[serde(default)]
    pub input: Vec<InputRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_box: Option<BoxBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBlock {
    pub mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    pub paths: usize,
    /// Closed-loop length for risk trajectories.
    pub steps: usize,
    /// Closed-loop length for averaged-performance runs.
    pub performance_steps: usize,
    pub seed: u64,
    pub bootstrap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Gaussian,
    MonteCarlo,
    User,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TighteningBlock {
    pub mode: ModeSpec,
    pub mc_paths: usize,
    pub mc_seed: u64,
    /// Schedule CSV for `user` mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_file: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub system: SystemBlock,
    pub cost: CostBlock,
    pub constraints: ConstraintBlock,
    pub horizon: usize,
    pub initial: InitialBlock,
    pub sim: SimBlock,
    pub tightening: TighteningBlock,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub comparison_gains: Vec<LabeledGain>,
}

/// A validated scenario with all matrices built.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub system: LinearStochasticSystem,
    pub cost: QuadCost,
    pub constraints: RiskConstraints,
    pub initial: InitialCondition,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::SchemaVersion(cfg.schema_version));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn builtin(name: &str) -> Result<Self, ConfigError> {
        match name {
            "dcdc" => Self::from_json(DCDC_JSON),
            other => Err(ConfigError::UnknownScenario(other.to_string())),
        }
    }

    pub fn build(&self) -> Result<Scenario, ConfigError> {
        let a = matrix("system.a", &self.system.a)?;
        let b = matrix("system.b", &self.system.b)?;
        let n = a.nrows();
        if a.ncols() != n {
            return Err(ConfigError::Invalid(format!("system.a must be square, got {}x{}", n, a.ncols())));
        }
        if b.nrows() != n {
            return Err(ConfigError::Invalid(format!("system.b must have {n} rows, got {}", b.nrows())));
        }
        let l = b.ncols();
        let sigma_w = square("system.sigma_w", &self.system.sigma_w, n)?;
        let mu_w = match &self.system.mu_w {
            Some(v) => vector("system.mu_w", v, n)?,
            None => Vector::zeros(n),
        };
        if let NoiseSpec::Uniform { half_widths } = &self.system.noise {
            if half_widths.len() != n || half_widths.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
                return Err(ConfigError::Invalid(format!("system.noise.uniform needs {n} nonnegative half widths")));
            }
            let cov = UniformSampler { half_widths: half_widths.clone() }.covariance();
            if (&cov - &sigma_w).amax() > 1e-12 * (1.0 + sigma_w.amax()) {
                return Err(ConfigError::Invalid("system.sigma_w must equal diag(h^2/3) for uniform noise".into()));
            }
        }
        let q = square("cost.q", &self.cost.q, n)?;
        let r = square("cost.r", &self.cost.r, l)?;
        let cost = QuadCost::new(q, r)?;
        let k = resolve_gain(&self.system.gain, &a, &b, &cost)?;
        let system = LinearStochasticSystem::new(a, b, mu_w, sigma_w, k)?;

        let mut constraints = RiskConstraints::unconstrained(self.constraints.risk);
        for (i, row) in self.constraints.state.iter().enumerate() {
            constraints.state.push(StateConstraint { c: vector(&format!("constraints.state[{i}].c"), &row.c, n)?, p: row.p });
        }
        for (i, row) in self.constraints.input.iter().enumerate() {
            constraints.input.push(InputConstraint { d: vector(&format!("constraints.input[{i}].d"), &row.d, l)?, q: row.q });
        }
        if let Some(vb) = &self.constraints.input_box {
            if vb.lower.len() != l || vb.upper.len() != l {
                return Err(ConfigError::Invalid(format!("constraints.input_box needs {l} entries per side")));
            }
            let lower = Vector::from_iterator(l, vb.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)));
            let upper = Vector::from_iterator(l, vb.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)));
            constraints.input_box = Some(InputBox::new(lower, upper)?);
        }
        if self.horizon == 0 {
            return Err(ConfigError::Invalid("horizon must be at least 1".into()));
        }
        if self.sim.paths == 0 || self.sim.steps == 0 || self.sim.performance_steps == 0 {
            return Err(ConfigError::Invalid("sim.paths, sim.steps and sim.performance_steps must be positive".into()));
        }
        let mean = vector("initial.mean", &self.initial.mean, n)?;
        let cov = match &self.initial.cov {
            Some(rows) => square("initial.cov", rows, n)?,
            None => Mat::zeros(n, n),
        };
        Ok(Scenario { config: self.clone(), system, cost, constraints, initial: InitialCondition { mean, cov } })
    }

    /// Gain for `label`: `kstar` is always the Riccati gain, `default` the
    /// system block's gain, anything else a comparison gain.
    pub fn gain_spec(&self, label: &str) -> Result<GainSpec, ConfigError> {
        match label {
            "kstar" => Ok(GainSpec::Riccati),
            "default" => Ok(self.system.gain.clone()),
            other => self
                .comparison_gains
                .iter()
                .find(|g| g.label == other)
                .map(|g| g.gain.clone())
                .ok_or_else(|| ConfigError::UnknownGain(other.to_string())),
        }
    }
}

impl Scenario {
    pub fn sampler(&self) -> Result<Box<dyn DisturbanceSampler>, ConfigError> {
        Ok(match &self.config.system.noise {
            NoiseSpec::Gaussian => Box::new(GaussianSampler::new(self.system.sigma_w())?),
            NoiseSpec::Uniform { half_widths } => Box::new(UniformSampler { half_widths: half_widths.clone() }),
        })
    }

    /// The scenario's system with the gain named by `label` (see
    /// [`ScenarioConfig::gain_spec`]).
    pub fn system_with_gain(&self, label: &str) -> Result<LinearStochasticSystem, ConfigError> {
        let spec = self.config.gain_spec(label)?;
        let k = resolve_gain(&spec, self.system.a(), self.system.b(), &self.cost)?;
        Ok(self.system.with_gain(k)?)
    }
}

pub fn resolve_gain(spec: &GainSpec, a: &Mat, b: &Mat, cost: &QuadCost) -> Result<Mat, ConfigError> {
    match spec {
        GainSpec::Riccati => Ok(riccati_gain(a, b, cost.q(), cost.r())?),
        GainSpec::ScaledRiccati { q_scale, r_scale } => {
            if !(*q_scale >= 0.0 && *r_scale > 0.0) {
                return Err(ConfigError::Invalid("scaled_riccati needs q_scale ≥ 0 and r_scale > 0".into()));
            }
            Ok(riccati_gain(a, b, &(cost.q() * *q_scale), &(cost.r() * *r_scale))?)
        }
        GainSpec::Matrix(rows) => {
            let k = matrix("system.gain.matrix", rows)?;
            if k.shape() != (b.ncols(), a.nrows()) {
                return Err(ConfigError::Invalid(format!(
                    "system.gain.matrix must be {}x{}, got {}x{}",
                    b.ncols(),
                    a.nrows(),
                    k.nrows(),
                    k.ncols()
                )));
            }
            Ok(k)
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Mat, ConfigError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(ConfigError::Invalid(format!("{name} is empty")));
    }
    mat_from_rows(rows).map_err(|e| ConfigError::Invalid(format!("{name}: {e}")))
}

fn square(name: &str, rows: &[Vec<f64>], n: usize) -> Result<Mat, ConfigError> {
    let m = matrix(name, rows)?;
    if m.shape() != (n, n) {
        return Err(ConfigError::Invalid(format!("{name} must be {n}x{n}, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(m)
}

fn vector(name: &str, v: &[f64], n: usize) -> Result<Vector, ConfigError> {
    if v.len() != n {
        return Err(ConfigError::Invalid(format!("{name} must have {n} entries, got {}", v.len())));
    }
    Ok(Vector::from_column_slice(v))
}

/// Rows of a matrix, for writing configs back out.
pub fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    mat_to_rows(m)
}
