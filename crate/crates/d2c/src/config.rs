//! TOML pipeline configuration.
//!
//! Each section is deserialized on its own so that errors name the section
//! and key. After parsing, the configuration is re-serialized with all
//! defaults filled in; its SHA-256 is the config hash stamped on every
//! artifact.

use std::collections::BTreeMap;
use std::path::Path;

use d2c_core::{
    CollectionMode, CostSpec, DMatrix, DVector, Dynamics, Estimator, EvalConfig,
    GradEstimatorConfig, LqrWeights, Plant, SysidConfig, SystemSpec, Task,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{D2cError, Result};

/// Matrix literal: a scalar (scaled identity), a vector (diagonal) or a
/// nested array of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>> {
        let m = match self {
            MatrixSpec::Scalar(s) => {
                if rows != cols {
                    return Err(D2cError::Config(format!(
                        "{what}: scalar shorthand needs a square matrix, got {rows}x{cols}"
                    )));
                }
                DMatrix::identity(rows, cols) * *s
            }
            MatrixSpec::Diagonal(d) => {
                if rows != cols || d.len() != rows {
                    return Err(D2cError::Config(format!(
                        "{what}: expected {rows} diagonal entries, got {}",
                        d.len()
                    )));
                }
                DMatrix::from_diagonal(&DVector::from_column_slice(d))
            }
            MatrixSpec::Full(r) => matrix_from_rows(r, what)?,
        };
        if m.nrows() != rows || m.ncols() != cols {
            return Err(D2cError::Config(format!(
                "{what}: expected {rows}x{cols}, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m)
    }
}

pub fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(D2cError::Config(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub name: String,
    pub horizon: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixSpec>,
}

fn default_dt() -> f64 {
    0.1
}

impl SystemSection {
    pub fn spec(&self) -> Result<SystemSpec> {
        let mut spec = match self.name.as_str() {
            "pendulum" => SystemSpec::pendulum(self.horizon, self.dt),
            "cartpole" | "cart_pole" | "cart-pole" => SystemSpec::cartpole(self.horizon, self.dt),
            "linear" => {
                let x1 = self
                    .x1
                    .as_ref()
                    .ok_or_else(|| D2cError::Config("system: linear system needs `x1`".into()))?;
                let n = x1.len();
                let a = self
                    .a
                    .as_ref()
                    .ok_or_else(|| D2cError::Config("system: linear system needs `a`".into()))?
                    .to_matrix(n, n, "system.a")?;
                let b = match self.b.as_ref() {
                    Some(MatrixSpec::Full(rows)) => matrix_from_rows(rows, "system.b")?,
                    Some(other) => other.to_matrix(n, n, "system.b")?,
                    None => return Err(D2cError::Config("system: linear system needs `b`".into())),
                };
                let mut s = SystemSpec::linear(a, b, self.horizon, DVector::from_vec(x1.clone()));
                s.dt = self.dt;
                s
            }
            other => {
                return Err(D2cError::Config(format!(
                    "system: unknown system name '{other}'"
                )))
            }
        };
        for (k, v) in &self.params {
            spec.params.insert(k.clone(), *v);
        }
        if let Some(x1) = &self.x1 {
            spec.x1 = DVector::from_vec(x1.clone());
        }
        Ok(spec)
    }

    pub fn plant(&self) -> Result<Plant> {
        Plant::new(self.spec()?).map_err(|e| D2cError::Config(format!("system: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub q: MatrixSpec,
    pub r: MatrixSpec,
    pub q_t: MatrixSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periodic: Option<Vec<bool>>,
}

impl CostSection {
    pub fn spec(&self, nx: usize, nu: usize) -> Result<CostSpec> {
        let goal = match &self.goal {
            Some(g) if g.len() != nx => {
                return Err(D2cError::Config(format!(
                    "cost.goal: expected {nx} entries, got {}",
                    g.len()
                )))
            }
            Some(g) => DVector::from_vec(g.clone()),
            None => DVector::zeros(nx),
        };
        let periodic = match &self.periodic {
            Some(p) if p.len() != nx => {
                return Err(D2cError::Config(format!(
                    "cost.periodic: expected {nx} entries, got {}",
                    p.len()
                )))
            }
            Some(p) => p.clone(),
            None => vec![false; nx],
        };
        let spec = CostSpec {
            q: self.q.to_matrix(nx, nx, "cost.q")?,
            r: self.r.to_matrix(nu, nu, "cost.r")?,
            q_terminal: self.q_t.to_matrix(nx, nx, "cost.q_t")?,
            goal,
            periodic,
        };
        spec.validate()
            .map_err(|e| D2cError::Config(format!("cost: {e}")))?;
        Ok(spec)
    }
}

/// Surrogate weights for the Riccati step. Missing entries fall back to the
/// task cost weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<MatrixSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_t: Option<MatrixSpec>,
}

impl LqrSection {
    pub fn weights(&self, cost: &CostSpec, steps: usize) -> Result<LqrWeights> {
        let (nx, nu) = (cost.q.nrows(), cost.r.nrows());
        let pick = |m: &Option<MatrixSpec>, fallback: &DMatrix<f64>, n: usize, what: &str| match m {
            Some(s) => s.to_matrix(n, n, what),
            None => Ok(fallback.clone()),
        };
        let w = LqrWeights::constant(
            pick(&self.q, &cost.q, nx, "lqr.q")?,
            pick(&self.r, &cost.r, nu, "lqr.r")?,
            pick(&self.q_t, &cost.q_terminal, nx, "lqr.q_t")?,
            steps,
        );
        w.validate()
            .map_err(|e| D2cError::Config(format!("lqr: {e}")))?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenloopSection {
    pub sigma_du: f64,
    pub m: usize,
    pub alpha: f64,
    pub max_iters: usize,
    #[serde(default = "default_decay")]
    pub decay: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_decay() -> f64 {
    1.0
}

fn default_tol() -> f64 {
    1e-6
}

impl OpenloopSection {
    pub fn grad_config(&self) -> Result<GradEstimatorConfig> {
        let cfg = GradEstimatorConfig {
            sigma_du: self.sigma_du,
            rollouts: self.m,
            alpha: self.alpha,
            decay: self.decay,
            max_iters: self.max_iters,
            tol: self.tol,
        };
        cfg.validate()
            .map_err(|e| D2cError::Config(format!("openloop: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    ExactLeastSquares,
    MomentScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModeName {
    StateReset,
    TrajectoryPropagated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SysidSection {
    #[serde(default = "default_sysid_sigma")]
    pub sigma: f64,
    #[serde(default = "default_sysid_rollouts")]
    pub rollouts: usize,
    #[serde(default = "default_estimator")]
    pub estimator: EstimatorName,
    #[serde(default = "default_mode")]
    pub mode: ModeName,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
}

fn default_sysid_sigma() -> f64 {
    1e-4
}
fn default_sysid_rollouts() -> usize {
    200
}
fn default_estimator() -> EstimatorName {
    EstimatorName::ExactLeastSquares
}
fn default_mode() -> ModeName {
    ModeName::StateReset
}
fn default_ridge() -> f64 {
    1e-10
}

impl Default for SysidSection {
    fn default() -> Self {
        Self {
            sigma: default_sysid_sigma(),
            rollouts: default_sysid_rollouts(),
            estimator: default_estimator(),
            mode: default_mode(),
            ridge: default_ridge(),
        }
    }
}

impl SysidSection {
    pub fn sysid_config(&self) -> Result<SysidConfig> {
        let cfg = SysidConfig {
            sigma: self.sigma,
            rollouts: self.rollouts,
            estimator: match self.estimator {
                EstimatorName::ExactLeastSquares => Estimator::ExactLeastSquares,
                EstimatorName::MomentScaled => Estimator::MomentScaled,
            },
            ridge: self.ridge,
            mode: match self.mode {
                ModeName::StateReset => CollectionMode::StateReset,
                ModeName::TrajectoryPropagated => CollectionMode::TrajectoryPropagated,
            },
        };
        cfg.validate()
            .map_err(|e| D2cError::Config(format!("sysid: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Noise level of the default evaluation run by `pipeline`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_rollouts")]
    pub rollouts: usize,
    #[serde(default = "default_grid")]
    pub epsilon_grid: Vec<f64>,
    /// Rollouts for the rerun when the scaling study hits the noise floor.
    #[serde(default = "default_fallback_rollouts")]
    pub fallback_rollouts: usize,
    #[serde(default = "default_linearity_rollouts")]
    pub linearity_rollouts: usize,
    #[serde(default = "default_robustness_grid")]
    pub robustness_grid: Vec<f64>,
    #[serde(default = "default_robustness_rollouts")]
    pub robustness_rollouts: usize,
    #[serde(default = "default_radius")]
    pub divergence_radius: f64,
    /// Control-channel noise covariance `W`.
    #[serde(default = "default_noise")]
    pub noise_covariance: MatrixSpec,
}

fn default_epsilon() -> f64 {
    0.1
}
fn default_rollouts() -> usize {
    5000
}
fn default_grid() -> Vec<f64> {
    d2c_core::eval::DEFAULT_SCALING_GRID.to_vec()
}
fn default_fallback_rollouts() -> usize {
    20000
}
fn default_linearity_rollouts() -> usize {
    2000
}
fn default_robustness_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}
fn default_robustness_rollouts() -> usize {
    1000
}
fn default_radius() -> f64 {
    1.0
}
fn default_noise() -> MatrixSpec {
    MatrixSpec::Scalar(1.0)
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            rollouts: default_rollouts(),
            epsilon_grid: default_grid(),
            fallback_rollouts: default_fallback_rollouts(),
            linearity_rollouts: default_linearity_rollouts(),
            robustness_grid: default_robustness_grid(),
            robustness_rollouts: default_robustness_rollouts(),
            divergence_radius: default_radius(),
            noise_covariance: default_noise(),
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self, rollouts: usize, nu: usize) -> Result<EvalConfig> {
        Ok(EvalConfig {
            rollouts,
            divergence_radius: self.divergence_radius,
            noise_covariance: Some(self.noise_covariance.to_matrix(
                nu,
                nu,
                "eval.noise_covariance",
            )?),
            keep_samples: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub system: SystemSection,
    pub cost: CostSection,
    #[serde(default)]
    pub lqr: LqrSection,
    pub openloop: OpenloopSection,
    #[serde(default)]
    pub sysid: SysidSection,
    #[serde(default)]
    pub eval: EvalSection,
}

const SECTIONS: [&str; 6] = ["system", "cost", "lqr", "openloop", "sysid", "eval"];

fn section<T: DeserializeOwned>(
    table: &toml::Table,
    name: &str,
    required: bool,
) -> Result<Option<T>> {
    match table.get(name) {
        None if required => Err(D2cError::Config(format!("missing section [{name}]"))),
        None => Ok(None),
        Some(v) => v
            .clone()
            .try_into()
            .map(Some)
            .map_err(|e: toml::de::Error| {
                D2cError::Config(format!("[{name}]: {}", e.message().trim()))
            }),
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| D2cError::Config(format!("config syntax: {e}")))?;
        for key in table.keys() {
            if !SECTIONS.contains(&key.as_str()) && key != "seed" && key != "out_dir" {
                return Err(D2cError::Config(format!("unknown top-level key `{key}`")));
            }
        }
        let seed = match table.get("seed") {
            Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
            Some(_) => {
                return Err(D2cError::Config(
                    "`seed` must be a nonnegative integer".into(),
                ))
            }
            None => {
                return Err(D2cError::Config(
                    "missing key `seed` (no wall-clock seeding)".into(),
                ))
            }
        };
        let out_dir = match table.get("out_dir") {
            Some(toml::Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(D2cError::Config("`out_dir` must be a string".into())),
            None => None,
        };
        let cfg = Self {
            seed,
            out_dir,
            system: section(&table, "system", true)?.unwrap(),
            cost: section(&table, "cost", true)?.unwrap(),
            lqr: section(&table, "lqr", false)?.unwrap_or_default(),
            openloop: section(&table, "openloop", true)?.unwrap(),
            sysid: section(&table, "sysid", false)?.unwrap_or_default(),
            eval: section(&table, "eval", false)?.unwrap_or_default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| D2cError::Io(format!("reading config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            D2cError::Config(msg) => D2cError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Builds every core object once so that bad values surface at load
    /// time rather than halfway through a pipeline.
    pub fn validate(&self) -> Result<()> {
        let task = self.task()?;
        self.lqr.weights(&task.cost, task.steps())?;
        self.openloop.grad_config()?;
        self.sysid.sysid_config()?;
        self.eval.eval_config(2, task.plant.control_dim())?;
        let e = &self.eval;
        if e.rollouts < 2
            || e.fallback_rollouts < 2
            || e.linearity_rollouts < 2
            || e.robustness_rollouts < 2
        {
            return Err(D2cError::Config(
                "[eval]: rollout counts must be at least 2".into(),
            ));
        }
        if !(e.epsilon >= 0.0 && e.epsilon.is_finite()) {
            return Err(D2cError::Config(
                "[eval]: epsilon must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn task(&self) -> Result<Task> {
        let plant = self.system.plant()?;
        let cost = self.cost.spec(plant.state_dim(), plant.control_dim())?;
        Task::new(plant, cost).map_err(|e| D2cError::Config(format!("task: {e}")))
    }

    pub fn lqr_weights(&self, task: &Task) -> Result<LqrWeights> {
        self.lqr.weights(&task.cost, task.steps())
    }

    /// Canonical JSON with defaults filled in; `out_dir` is excluded since
    /// it does not affect any result.
    pub fn normalized_json(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        serde_json::to_string_pretty(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.normalized_json().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
