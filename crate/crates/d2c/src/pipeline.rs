//! The four pipeline stages and the evaluation studies, each reading and
//! writing its artifacts under one output directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use d2c_core::{
    analytic_ltv, collect_perturbation_data, epsilon_scaling_study, estimate_ltv,
    execute_with_noise, model_fit_report, monte_carlo_eval, nominal_trajectory, optimize_observed,
    perturbation_linearity_check, robustness_curve, solve_riccati, variance_comparison,
    ControlSequence, D2cPolicy, DMatrix, DVector, Dynamics, EvalMode, EvalReport, LinearityReport,
    NoiseSpec, RobustnessRow, ScalingReport, Task, VarianceComparison,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::artifact::{
    read_json, write_history_csv, write_json, write_manifest, write_report_csv, write_rmse_csv,
    write_trajectory_csv, FitRow, GainsFile, Manifest, ModelFile, NominalFile, PolicyFile,
    ReportRow, Stamp, MANIFEST,
};
use crate::config::{matrix_from_rows, matrix_to_rows, PipelineConfig};
use crate::error::{D2cError, Result};
use crate::par::Pool;

pub const NOMINAL: &str = "nominal.json";
pub const MODEL: &str = "model.json";
pub const GAINS: &str = "gains.json";
pub const POLICY: &str = "policy.json";

/// Independent random stream per stage, all derived from the config seed.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    Optimize = 1,
    Identify = 2,
    Evaluate = 3,
    Scaling = 4,
    Linearity = 5,
    Variance = 6,
    Robustness = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub struct Runner {
    pub cfg: PipelineConfig,
    pub stamp: Stamp,
    pub out: PathBuf,
    pub force: bool,
    pub pool: Pool,
}

#[derive(Debug, Clone)]
pub struct OptimizeSummary {
    pub iterations: usize,
    pub converged: bool,
    pub total_cost: f64,
    pub terminal_deviation: DVector<f64>,
    pub seconds: f64,
}

impl fmt::Display for OptimizeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "optimize: cost {:.6} after {} iterations{} in {:.2} s; terminal goal deviation {}",
            self.total_cost,
            self.iterations,
            if self.converged { " (converged)" } else { "" },
            self.seconds,
            fmt_vec(&self.terminal_deviation)
        )
    }
}

#[derive(Debug, Clone)]
pub struct IdentifySummary {
    pub max_rmse: f64,
    pub mean_rmse: f64,
    /// Largest per-step Frobenius distance to the exact Jacobians.
    pub jacobian_error: f64,
    pub seconds: f64,
}

impl fmt::Display for IdentifySummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "identify: one-step RMSE mean {:.3e} max {:.3e}; max |[A B] - Jacobian|_F {:.3e}; {:.3} s",
            self.mean_rmse, self.max_rmse, self.jacobian_error, self.seconds
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub open_loop_seconds: f64,
    pub closed_loop_seconds: f64,
    pub evaluation_seconds: f64,
    pub closed_over_open: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineSummary {
    pub optimize: OptimizeSummary,
    pub identify: IdentifySummary,
    pub eval: EvalReport,
    pub timings: Timings,
}

impl fmt::Display for PipelineSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.optimize)?;
        writeln!(f, "{}", self.identify)?;
        writeln!(f, "{}", fmt_report("evaluate", &self.eval))?;
        write!(
            f,
            "timings: open-loop {:.2} s, closed-loop {:.3} s (ratio {:.4}), evaluation {:.2} s",
            self.timings.open_loop_seconds,
            self.timings.closed_loop_seconds,
            self.timings.closed_over_open,
            self.timings.evaluation_seconds
        )
    }
}

pub fn fmt_report(label: &str, r: &EvalReport) -> String {
    format!(
        "{label}: eps {} M {} mean {:.6} ± {:.2e}, var {:.4e}, terminal MSE {:.4e}, diverged {:.3}",
        r.epsilon,
        r.rollouts,
        r.mean_cost,
        r.std_error,
        r.cost_variance,
        r.terminal_mse,
        r.divergence_fraction
    )
}

fn fmt_vec(v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub mode: String,
    pub report: ReportRow,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearityFile {
    pub epsilons: Vec<f64>,
    pub mean_residual: Vec<f64>,
    pub residual_stderr: Vec<f64>,
    pub max_residual: Vec<f64>,
    pub fit: Option<FitRow>,
}

impl From<&LinearityReport> for LinearityFile {
    fn from(l: &LinearityReport) -> Self {
        Self {
            epsilons: l.epsilons.clone(),
            mean_residual: l.mean_residual.clone(),
            residual_stderr: l.residual_stderr.clone(),
            max_residual: l.max_residual.clone(),
            fit: l.fit.as_ref().map(FitRow::from),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub nominal_cost: f64,
    pub rollouts: usize,
    /// The first pass hit the noise floor and the study was rerun with
    /// `eval.fallback_rollouts`.
    pub fallback_used: bool,
    pub inconclusive: bool,
    pub rows: Vec<ReportRow>,
    pub mean_gaps: Vec<f64>,
    pub mean_gap_fit: Option<FitRow>,
    pub variance_fit: Option<FitRow>,
    pub linearity: Option<LinearityFile>,
}

#[derive(Debug, Clone)]
pub struct ScalingOutcome {
    pub report: ScalingReport,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub epsilon: f64,
    pub closed: ReportRow,
    pub open: ReportRow,
    pub ratio: f64,
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub closed_lower_significant: bool,
    pub coupled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessFile {
    #[serde(flatten)]
    pub stamp: Stamp,
    pub divergence_radius: f64,
    pub first_divergence: Option<f64>,
    pub closed: Vec<ReportRow>,
    pub open: Vec<ReportRow>,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, start.elapsed().as_secs_f64()))
}

impl Runner {
    pub fn new(
        cfg: PipelineConfig,
        out: Option<PathBuf>,
        threads: usize,
        force: bool,
    ) -> Result<Self> {
        let out = out
            .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
            .ok_or_else(|| {
                D2cError::Config("no output directory: pass --out or set `out_dir`".into())
            })?;
        let stamp = Stamp {
            config_hash: cfg.hash(),
            seed: cfg.seed,
        };
        Ok(Self {
            cfg,
            stamp,
            out,
            force,
            pool: Pool::new(threads)?,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn rng(&self, stream: Stream) -> ChaCha8Rng {
        stream_rng(self.cfg.seed, stream)
    }

    /// Creates the output directory, refuses a directory holding artifacts
    /// of another config unless forced, and echoes the normalized config.
    pub fn prepare(&self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .map_err(|e| D2cError::Io(format!("creating {}: {e}", self.out.display())))?;
        let manifest = self.path(MANIFEST);
        if manifest.exists() {
            let m: Manifest = read_json(&manifest)?;
            self.stamp.check(
                &m.stamp,
                &format!("output directory {}", self.out.display()),
                self.force,
            )?;
        }
        let mut text = self.cfg.normalized_json();
        text.push('\n');
        fs::write(self.path("config.json"), text)?;
        Ok(())
    }

    pub fn finish(&self) -> Result<Manifest> {
        write_manifest(&self.out, &self.stamp)
    }

    fn task(&self) -> Result<Task> {
        self.cfg.task()
    }

    fn load_stamped<T, F>(&self, name: &str, stamp_of: F, hint: &str) -> Result<T>
    where
        T: for<'de> Deserialize<'de>,
        F: Fn(&T) -> &Stamp,
    {
        let path = self.path(name);
        if !path.exists() {
            return Err(D2cError::Io(format!(
                "{} not found; run `{hint}` first",
                path.display()
            )));
        }
        let v: T = read_json(&path)?;
        self.stamp.check(stamp_of(&v), name, self.force)?;
        Ok(v)
    }

    /// Step 1: noiseless open-loop optimization from zero controls.
    pub fn optimize(&self) -> Result<OptimizeSummary> {
        let task = self.task()?;
        let grad = self.cfg.openloop.grad_config()?;
        let mut rng = self.rng(Stream::Optimize);
        let start = Instant::now();
        let mut elapsed = Vec::new();
        let u0 = ControlSequence::zeros(task.steps(), task.plant.control_dim());
        let result = optimize_observed(&task, u0, &grad, &mut rng, &self.pool, &mut |_| {
            elapsed.push(start.elapsed().as_secs_f64())
        });
        let seconds = start.elapsed().as_secs_f64();
        let result = match result {
            Ok(r) => r,
            Err(d2c_core::Error::Diverged { iteration, history }) => {
                write_history_csv(&self.path("cost_history.csv"), &history, &elapsed)?;
                return Err(D2cError::Stage {
                    stage: "optimize",
                    source: d2c_core::Error::Diverged { iteration, history },
                });
            }
            Err(e) => return Err(D2cError::stage("optimize")(e)),
        };
        let nominal =
            nominal_trajectory(&task, &result.controls).map_err(D2cError::stage("optimize"))?;
        write_history_csv(&self.path("cost_history.csv"), &result.history, &elapsed)?;
        write_json(
            &self.path(NOMINAL),
            &NominalFile::new(
                self.stamp.clone(),
                &nominal,
                &result.history,
                result.converged,
            ),
        )?;
        write_trajectory_csv(&self.path("nominal_trajectory.csv"), &nominal)?;
        Ok(OptimizeSummary {
            iterations: result.history.len(),
            converged: result.converged,
            total_cost: nominal.total_cost,
            terminal_deviation: task.cost.goal_deviation(nominal.terminal_state()),
            seconds,
        })
    }

    fn nominal(&self, task: &Task) -> Result<d2c_core::Trajectory> {
        let file: NominalFile =
            self.load_stamped(NOMINAL, |f: &NominalFile| &f.stamp, "optimize")?;
        let u = ControlSequence::new(file.controls());
        let traj = nominal_trajectory(task, &u).map_err(D2cError::stage("identify"))?;
        let stored = file.states();
        if stored.len() != traj.states.len()
            || stored
                .iter()
                .zip(&traj.states)
                .any(|(a, b)| (a - b).amax() > 1e-9)
        {
            return Err(D2cError::Artifact(format!(
                "{NOMINAL}: stored states are not the noiseless rollout of the stored controls"
            )));
        }
        Ok(traj)
    }

    /// Step 2: LTV identification around the stored nominal.
    pub fn identify(&self) -> Result<IdentifySummary> {
        let task = self.task()?;
        let nominal = self.nominal(&task)?;
        let sysid = self.cfg.sysid.sysid_config()?;
        let mut rng = self.rng(Stream::Identify);
        let start = Instant::now();
        let data = collect_perturbation_data(&task.plant, &nominal, &sysid, &mut rng, &self.pool)
            .map_err(D2cError::stage("identify"))?;
        let model = estimate_ltv(&data, &sysid).map_err(D2cError::stage("identify"))?;
        let seconds = start.elapsed().as_secs_f64();
        let fit = model_fit_report(&model, &data).map_err(D2cError::stage("identify"))?;
        let exact = analytic_ltv(&task.plant, &nominal).map_err(D2cError::stage("identify"))?;
        write_json(
            &self.path(MODEL),
            &ModelFile::new(self.stamp.clone(), &model),
        )?;
        write_rmse_csv(&self.path("sysid_fit.csv"), &fit.rmse)?;
        Ok(IdentifySummary {
            max_rmse: fit.max(),
            mean_rmse: fit.mean(),
            jacobian_error: model.max_frobenius_error(&exact),
            seconds,
        })
    }

    /// Step 3: Riccati gains on the stored model.
    pub fn synthesize(&self) -> Result<f64> {
        let task = self.task()?;
        let weights = self.cfg.lqr_weights(&task)?;
        let file: ModelFile = self.load_stamped(MODEL, |f: &ModelFile| &f.stamp, "identify")?;
        let model = file.model()?;
        let ((), seconds) = timed(|| {
            let gains = solve_riccati(&model, &weights).map_err(D2cError::stage("synthesize"))?;
            write_json(
                &self.path(GAINS),
                &GainsFile::new(self.stamp.clone(), &gains),
            )
        })?;
        Ok(seconds)
    }

    /// Bundles nominal plan and gains into the policy file.
    pub fn assemble(&self) -> Result<D2cPolicy> {
        let task = self.task()?;
        let nominal = self.nominal(&task)?;
        let gains: GainsFile = self.load_stamped(GAINS, |f: &GainsFile| &f.stamp, "synthesize")?;
        let mut policy = D2cPolicy::new(&nominal, gains.gains()?, task.cost.periodic.clone())
            .map_err(D2cError::stage("assemble"))?;
        policy
            .metadata
            .insert("config_hash".into(), self.stamp.config_hash.clone());
        policy
            .metadata
            .insert("seed".into(), self.stamp.seed.to_string());
        for name in [NOMINAL, MODEL, GAINS] {
            let digest = crate::artifact::sha256_file(&self.path(name))?;
            policy.metadata.insert(format!("sha256:{name}"), digest);
        }
        let nu = task.plant.control_dim();
        let noise = self
            .cfg
            .eval
            .noise_covariance
            .to_matrix(nu, nu, "eval.noise_covariance")?;
        let mut file = PolicyFile::new(
            self.stamp.clone(),
            self.cfg.system.clone(),
            self.cfg.cost.clone(),
            &policy,
        );
        file.noise_covariance = Some(matrix_to_rows(&noise));
        write_json(&self.path(POLICY), &file)?;
        Ok(policy)
    }

    /// The policy stored in the output directory.
    pub fn policy(&self) -> Result<D2cPolicy> {
        let file: PolicyFile = self.load_stamped(POLICY, |f: &PolicyFile| &f.stamp, "pipeline")?;
        let (_, policy) = load_policy_file(&file)?;
        Ok(policy)
    }

    pub fn evaluate(
        &self,
        policy: &D2cPolicy,
        epsilon: f64,
        rollouts: usize,
        mode: EvalMode,
    ) -> Result<EvalReport> {
        let task = self.task()?;
        let cfg = self
            .cfg
            .eval
            .eval_config(rollouts, task.plant.control_dim())?;
        let mut rng = self.rng(Stream::Evaluate);
        let report = monte_carlo_eval(&task, policy, epsilon, &cfg, mode, &mut rng, &self.pool)
            .map_err(D2cError::stage("evaluate"))?;
        let row = ReportRow::from(&report);
        let mode = match mode {
            EvalMode::Closed => "closed",
            EvalMode::Open => "open",
        };
        write_json(
            &self.path("eval.json"),
            &EvalFile {
                stamp: self.stamp.clone(),
                mode: mode.into(),
                report: row.clone(),
            },
        )?;
        write_report_csv(&self.path("eval.csv"), &[row])?;
        Ok(report)
    }

    /// Scaling study over `grid`, rerun with the fallback rollout count when
    /// the first pass is inconclusive, plus the linearity check against the
    /// exact Jacobians along the nominal.
    pub fn scaling_study(
        &self,
        policy: &D2cPolicy,
        grid: &[f64],
        rollouts: usize,
    ) -> Result<ScalingOutcome> {
        let task = self.task()?;
        let nu = task.plant.control_dim();
        let run = |m: usize| {
            let cfg = self.cfg.eval.eval_config(m, nu)?;
            let mut rng = self.rng(Stream::Scaling);
            epsilon_scaling_study(&task, policy, grid, &cfg, &mut rng, &self.pool)
                .map_err(D2cError::stage("scaling-study"))
        };
        let mut report = run(rollouts)?;
        let mut fallback_used = false;
        let fallback = self.cfg.eval.fallback_rollouts;
        if report.inconclusive && fallback > rollouts {
            report = run(fallback)?;
            fallback_used = true;
        }
        let used = if fallback_used { fallback } else { rollouts };

        let u = ControlSequence::new(policy.nominal_controls.clone());
        let nominal = nominal_trajectory(&task, &u).map_err(D2cError::stage("scaling-study"))?;
        let model =
            analytic_ltv(&task.plant, &nominal).map_err(D2cError::stage("scaling-study"))?;
        let lcfg = self
            .cfg
            .eval
            .eval_config(self.cfg.eval.linearity_rollouts, nu)?;
        let mut rng = self.rng(Stream::Linearity);
        let lin =
            perturbation_linearity_check(&task, policy, &model, grid, &lcfg, &mut rng, &self.pool)
                .map_err(D2cError::stage("scaling-study"))?;
        report.linearity = Some(lin);

        let rows: Vec<ReportRow> = report.reports.iter().map(ReportRow::from).collect();
        write_report_csv(&self.path("scaling.csv"), &rows)?;
        write_json(
            &self.path("scaling.json"),
            &ScalingFile {
                stamp: self.stamp.clone(),
                nominal_cost: report.nominal_cost,
                rollouts: used,
                fallback_used,
                inconclusive: report.inconclusive,
                rows,
                mean_gaps: report.mean_gaps.clone(),
                mean_gap_fit: report.mean_gap_fit.as_ref().map(FitRow::from),
                variance_fit: report.variance_fit.as_ref().map(FitRow::from),
                linearity: report.linearity.as_ref().map(LinearityFile::from),
            },
        )?;
        Ok(ScalingOutcome {
            report,
            fallback_used,
        })
    }

    pub fn variance_comparison(
        &self,
        policy: &D2cPolicy,
        epsilon: f64,
        rollouts: usize,
    ) -> Result<VarianceComparison> {
        let task = self.task()?;
        let cfg = self
            .cfg
            .eval
            .eval_config(rollouts, task.plant.control_dim())?;
        let mut rng = self.rng(Stream::Variance);
        let v = variance_comparison(&task, policy, epsilon, &cfg, &mut rng, &self.pool)
            .map_err(D2cError::stage("variance-comparison"))?;
        write_json(
            &self.path("variance.json"),
            &VarianceFile {
                stamp: self.stamp.clone(),
                epsilon,
                closed: ReportRow::from(&v.closed),
                open: ReportRow::from(&v.open),
                ratio: v.ratio,
                difference: v.difference,
                ci_low: v.ci_low,
                ci_high: v.ci_high,
                closed_lower_significant: v.closed_lower_significant,
                coupled: v.coupled,
            },
        )?;
        Ok(v)
    }

    pub fn robustness_curve(
        &self,
        policy: &D2cPolicy,
        grid: &[f64],
        rollouts: usize,
    ) -> Result<Vec<RobustnessRow>> {
        let task = self.task()?;
        let cfg = self
            .cfg
            .eval
            .eval_config(rollouts, task.plant.control_dim())?;
        let mut rng = self.rng(Stream::Robustness);
        let rows = robustness_curve(&task, policy, grid, &cfg, &mut rng, &self.pool)
            .map_err(D2cError::stage("robustness-curve"))?;
        let closed: Vec<ReportRow> = rows.iter().map(|r| ReportRow::from(&r.closed)).collect();
        let open: Vec<ReportRow> = rows.iter().map(|r| ReportRow::from(&r.open)).collect();
        write_report_csv(&self.path("robustness_closed.csv"), &closed)?;
        write_report_csv(&self.path("robustness_open.csv"), &open)?;
        write_json(
            &self.path("robustness.json"),
            &RobustnessFile {
                stamp: self.stamp.clone(),
                divergence_radius: cfg.divergence_radius,
                first_divergence: d2c_core::eval::first_divergence(&rows),
                closed,
                open,
            },
        )?;
        Ok(rows)
    }

    /// Steps 1 to 3, the policy bundle and a default closed-loop evaluation.
    pub fn pipeline(&self) -> Result<PipelineSummary> {
        self.prepare()?;
        let optimize = self.optimize()?;
        let start = Instant::now();
        let identify = self.identify()?;
        self.synthesize()?;
        let policy = self.assemble()?;
        let closed_loop_seconds = start.elapsed().as_secs_f64();
        let (eval, evaluation_seconds) = timed(|| {
            self.evaluate(
                &policy,
                self.cfg.eval.epsilon,
                self.cfg.eval.rollouts,
                EvalMode::Closed,
            )
        })?;
        let timings = Timings {
            open_loop_seconds: optimize.seconds,
            closed_loop_seconds,
            evaluation_seconds,
            closed_over_open: closed_loop_seconds / optimize.seconds,
        };
        write_json(&self.path("timings.json"), &timings)?;
        self.finish()?;
        Ok(PipelineSummary {
            optimize,
            identify,
            eval,
            timings,
        })
    }
}

/// Rebuilds task and policy from a bundle and re-verifies that the stored
/// nominal states are the noiseless rollout of the stored controls.
pub fn load_policy_file(file: &PolicyFile) -> Result<(Task, D2cPolicy)> {
    let plant = file.system.plant()?;
    let cost = file.cost.spec(plant.state_dim(), plant.control_dim())?;
    let task =
        Task::new(plant, cost).map_err(|e| D2cError::Artifact(format!("policy task: {e}")))?;
    let policy = file.policy()?;
    policy
        .verify_nominal(&task, 1e-9)
        .map_err(|e| D2cError::Artifact(format!("policy: {e}")))?;
    Ok((task, policy))
}

/// Single closed-loop run of a stored policy, written as a trajectory CSV.
pub fn run_policy(
    policy_path: &Path,
    epsilon: f64,
    seed: u64,
    out: &Path,
    open_loop: bool,
) -> Result<d2c_core::Trajectory> {
    let file: PolicyFile = read_json(policy_path)?;
    let (task, policy) = load_policy_file(&file)?;
    let nu = task.plant.control_dim();
    let w = match &file.noise_covariance {
        Some(rows) => matrix_from_rows(rows, "policy noise_covariance")?,
        None => DMatrix::identity(nu, nu),
    };
    let noise = NoiseSpec::new(epsilon, w).map_err(|e| D2cError::Config(format!("noise: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noises = noise.sample(&mut rng, task.steps());
    let traj =
        execute_with_noise(&task, &policy, &noises, !open_loop).map_err(D2cError::stage("run"))?;
    write_trajectory_csv(out, &traj)?;
    Ok(traj)
}

/// `synthesize --model --weights --out`: gains for a model file under the
/// LQR weights of a config. The model must carry the config's stamp unless
/// forced.
pub fn synthesize_files(
    model_path: &Path,
    weights: &PipelineConfig,
    out: &Path,
    force: bool,
) -> Result<GainsFile> {
    let file: ModelFile = read_json(model_path)?;
    let stamp = Stamp {
        config_hash: weights.hash(),
        seed: weights.seed,
    };
    stamp.check(&file.stamp, &model_path.display().to_string(), force)?;
    let model = file.model()?;
    let task = weights.task()?;
    let w = weights.lqr_weights(&task)?;
    let gains = solve_riccati(&model, &w).map_err(D2cError::stage("synthesize"))?;
    let out_file = GainsFile::new(stamp, &gains);
    write_json(out, &out_file)?;
    Ok(out_file)
}
