//! On-disk artifact formats: JSON for models, gains, nominal plans and
//! policy bundles, CSV for trajectories, histories and reports.
//!
//! Matrices are stored as arrays of rows. Every JSON artifact carries the
//! config hash and seed it was produced under.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use d2c_core::{
    D2cPolicy, DMatrix, DVector, EvalReport, GainSchedule, IterationRecord, LtvModel, SlopeFit,
    Trajectory,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, matrix_from_rows, matrix_to_rows, CostSection, SystemSection};
use crate::error::{D2cError, Result};

pub type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    /// Errors unless `other` matches, or `force` is set.
    pub fn check(&self, other: &Stamp, what: &str, force: bool) -> Result<()> {
        if force || self == other {
            return Ok(());
        }
        Err(D2cError::Mismatch(format!(
            "{what} was produced under config {} seed {}, current config is {} seed {}",
            short(&other.config_hash),
            other.seed,
            short(&self.config_hash),
            self.seed
        )))
    }
}

fn short(h: &str) -> &str {
    &h[..h.len().min(12)]
}

fn vecs(v: &[DVector<f64>]) -> Rows {
    v.iter().map(|x| x.iter().copied().collect()).collect()
}

fn unvecs(rows: &[Vec<f64>]) -> Vec<DVector<f64>> {
    rows.iter().map(|r| DVector::from_column_slice(r)).collect()
}

fn mats(v: &[DMatrix<f64>]) -> Vec<Rows> {
    v.iter().map(matrix_to_rows).collect()
}

fn unmats(v: &[Rows], what: &str) -> Result<Vec<DMatrix<f64>>> {
    v.iter()
        .map(|m| matrix_from_rows(m, what).map_err(|e| D2cError::Artifact(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub iterations: usize,
    pub converged: bool,
    /// Noiseless cost of the final controls.
    pub total_cost: f64,
    /// Estimator mean cost at the last iteration.
    pub final_mean_cost: f64,
    pub controls: Rows,
    pub states: Rows,
}

impl NominalFile {
    pub fn controls(&self) -> Vec<DVector<f64>> {
        unvecs(&self.controls)
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        unvecs(&self.states)
    }

    pub fn new(
        stamp: Stamp,
        nominal: &Trajectory,
        history: &[IterationRecord],
        converged: bool,
    ) -> Self {
        Self {
            stamp,
            iterations: history.len(),
            converged,
            total_cost: nominal.total_cost,
            final_mean_cost: history.last().map_or(f64::NAN, |r| r.mean_cost),
            controls: vecs(&nominal.controls),
            states: vecs(&nominal.states),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub a: Vec<Rows>,
    pub b: Vec<Rows>,
}

impl ModelFile {
    pub fn new(stamp: Stamp, model: &LtvModel) -> Self {
        Self {
            stamp,
            a: mats(&model.a),
            b: mats(&model.b),
        }
    }

    pub fn model(&self) -> Result<LtvModel> {
        let m = LtvModel {
            a: unmats(&self.a, "model A")?,
            b: unmats(&self.b, "model B")?,
        };
        m.validate()
            .map_err(|e| D2cError::Artifact(format!("model: {e}")))?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainsFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub k: Vec<Rows>,
    pub p: Vec<Rows>,
}

impl GainsFile {
    pub fn new(stamp: Stamp, g: &GainSchedule) -> Self {
        Self {
            stamp,
            k: mats(&g.k),
            p: mats(&g.p),
        }
    }

    pub fn gains(&self) -> Result<GainSchedule> {
        Ok(GainSchedule {
            k: unmats(&self.k, "gains K")?,
            p: unmats(&self.p, "gains P")?,
        })
    }
}

/// Everything needed to run the policy without the original config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub system: SystemSection,
    pub cost: CostSection,
    pub nominal_controls: Rows,
    pub nominal_states: Rows,
    pub k: Vec<Rows>,
    pub p: Vec<Rows>,
    pub periodic: Vec<bool>,
    /// Noise covariance W the policy was evaluated under; `run` uses it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_covariance: Option<Rows>,
    pub metadata: BTreeMap<String, String>,
}

impl PolicyFile {
    pub fn new(stamp: Stamp, system: SystemSection, cost: CostSection, policy: &D2cPolicy) -> Self {
        Self {
            stamp,
            system,
            cost,
            nominal_controls: vecs(&policy.nominal_controls),
            nominal_states: vecs(&policy.nominal_states),
            k: mats(&policy.gains.k),
            p: mats(&policy.gains.p),
            periodic: policy.periodic.clone(),
            noise_covariance: None,
            metadata: policy.metadata.clone(),
        }
    }

    pub fn policy(&self) -> Result<D2cPolicy> {
        let p = D2cPolicy {
            nominal_controls: unvecs(&self.nominal_controls),
            nominal_states: unvecs(&self.nominal_states),
            gains: GainSchedule {
                k: unmats(&self.k, "policy K")?,
                p: unmats(&self.p, "policy P")?,
            },
            periodic: self.periodic.clone(),
            bounds: None,
            metadata: self.metadata.clone(),
        };
        p.validate()
            .map_err(|e| D2cError::Artifact(format!("policy: {e}")))?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub epsilon: f64,
    pub rollouts: usize,
    pub mean: f64,
    pub std_error: f64,
    pub var: f64,
    pub terminal_mse: f64,
    pub terminal_mse_stderr: f64,
    pub truncated: usize,
    pub diverged: usize,
    pub divergence_frac: f64,
}

impl From<&EvalReport> for ReportRow {
    fn from(r: &EvalReport) -> Self {
        Self {
            epsilon: r.epsilon,
            rollouts: r.rollouts,
            mean: r.mean_cost,
            std_error: r.std_error,
            var: r.cost_variance,
            terminal_mse: r.terminal_mse,
            terminal_mse_stderr: r.terminal_mse_stderr,
            truncated: r.truncated,
            diverged: r.diverged,
            divergence_frac: r.divergence_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitRow {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl From<&SlopeFit> for FitRow {
    fn from(f: &SlopeFit) -> Self {
        Self {
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
            ci_low: f.ci_low,
            ci_high: f.ci_high,
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| D2cError::Artifact(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| D2cError::Io(format!("writing {}: {e}", path.display())))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| D2cError::Io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| D2cError::Artifact(format!("{}: {e}", path.display())))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> D2cError + '_ {
    move |e| D2cError::Io(format!("writing {}: {e}", path.display()))
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// `t, x0.., u0.., stage_cost`; the last row holds the terminal state and
/// terminal cost with empty control columns.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let nx = traj.states[0].len();
    let nu = traj.controls.first().map_or(0, |u| u.len());
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string()];
    header.extend((0..nx).map(|i| format!("x{i}")));
    header.extend((0..nu).map(|i| format!("u{i}")));
    header.push("stage_cost".into());
    w.write_record(&header).map_err(csv_err(path))?;
    for (t, x) in traj.states.iter().enumerate() {
        let mut row = vec![(t + 1).to_string()];
        row.extend(x.iter().map(|v| num(*v)));
        match traj.controls.get(t) {
            Some(u) => {
                row.extend(u.iter().map(|v| num(*v)));
                row.push(num(traj.stage_costs[t]));
            }
            None => {
                row.extend((0..nu).map(|_| String::new()));
                row.push(num(traj.terminal_cost));
            }
        }
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_history_csv(path: &Path, history: &[IterationRecord], elapsed: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["iter", "mean_cost", "grad_norm", "elapsed_seconds"])
        .map_err(csv_err(path))?;
    for (r, s) in history.iter().zip(elapsed) {
        w.write_record([
            r.iter.to_string(),
            num(r.mean_cost),
            num(r.grad_norm),
            format!("{s:.6}"),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

/// `epsilon, mean, var, terminal_mse, divergence_frac`.
pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["epsilon", "mean", "var", "terminal_mse", "divergence_frac"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            num(r.epsilon),
            num(r.mean),
            num(r.var),
            num(r.terminal_mse),
            num(r.divergence_frac),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rmse_csv(path: &Path, rmse: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["t", "rmse"]).map_err(csv_err(path))?;
    for (t, v) in rmse.iter().enumerate() {
        w.write_record([(t + 1).to_string(), num(*v)])
            .map_err(csv_err(path))?;
    }
    w.flush()?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).map_err(|e| D2cError::Io(format!("reading {}: {e}", path.display())))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    /// Absent for timing-bearing files, whose bytes vary between runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub files: Vec<ManifestEntry>,
}

/// Files whose contents include wall-clock measurements.
pub const TIMING_FILES: [&str; 2] = ["cost_history.csv", "timings.json"];

pub const MANIFEST: &str = "manifest.json";

/// Rewrites the manifest from the files currently in `dir`.
pub fn write_manifest(dir: &Path, stamp: &Stamp) -> Result<Manifest> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST)
        .collect();
    names.sort();
    let mut files = Vec::with_capacity(names.len());
    for name in names {
        let deterministic = !TIMING_FILES.contains(&name.as_str());
        let sha256 = if deterministic {
            Some(sha256_file(&dir.join(&name))?)
        } else {
            None
        };
        files.push(ManifestEntry {
            file: name,
            sha256,
            deterministic,
        });
    }
    let m = Manifest {
        stamp: stamp.clone(),
        files,
    };
    write_json(&dir.join(MANIFEST), &m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_round_trips_exactly() {
        let a = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-17, 7.0]);
        let b = DMatrix::from_row_slice(2, 1, &[std::f64::consts::PI, 1e300]);
        let model = LtvModel::constant(a, b, 3);
        let stamp = Stamp {
            config_hash: "abc".into(),
            seed: 1,
        };
        let text = serde_json::to_string(&ModelFile::new(stamp, &model)).unwrap();
        let back: ModelFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.model().unwrap(), model);
    }

    #[test]
    fn stamp_mismatch_needs_force() {
        let a = Stamp {
            config_hash: "aaaa".into(),
            seed: 1,
        };
        let b = Stamp {
            config_hash: "bbbb".into(),
            seed: 1,
        };
        assert!(a.check(&a.clone(), "x", false).is_ok());
        assert!(matches!(
            a.check(&b, "x", false),
            Err(D2cError::Mismatch(_))
        ));
        assert!(a.check(&b, "x", true).is_ok());
    }
}
