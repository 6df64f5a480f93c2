//! Monte-Carlo evaluation of a policy under control-channel noise, and the
//! small-noise scaling checks built on it.
//!
//! Every study draws its standard-normal noise block once, in rollout order,
//! and reuses it across arms and noise levels (common random numbers). The
//! applied noise is `ε L z` with `L L' = W`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dynamics::{check_dim, Dynamics, NoiseSpec};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::lqr::{closed_loop_matrices, GainSchedule};
use crate::math;
use crate::policy::{execute_with_noise, D2cPolicy};
use crate::stats;
pub use crate::stats::SlopeFit;
use crate::sysid::LtvModel;
use crate::task::{LqrWeights, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// `u_t = ū_t + K_t δx_t`
    Closed,
    /// `u_t = ū_t`
    Open,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Rollouts per noise level.
    pub rollouts: usize,
    /// A rollout counts as diverged once `‖δx_t‖_∞` exceeds this at any step
    /// (non-finite rollouts always count).
    pub divergence_radius: f64,
    pub noise_covariance: Option<DMatrix<f64>>,
    /// Keep the per-rollout costs in the report.
    pub keep_samples: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            rollouts: 5000,
            divergence_radius: 1.0,
            noise_covariance: None,
            keep_samples: false,
        }
    }
}

impl EvalConfig {
    pub fn with_rollouts(rollouts: usize) -> Self {
        Self {
            rollouts,
            ..Self::default()
        }
    }

    fn noise(&self, epsilon: f64, control_dim: usize) -> Result<NoiseSpec> {
        match &self.noise_covariance {
            Some(w) => {
                check_dim("noise covariance", control_dim, w.nrows())?;
                NoiseSpec::new(epsilon, w.clone())
            }
            None => NoiseSpec::new(epsilon, DMatrix::identity(control_dim, control_dim)),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rollouts < 2 {
            return Err(Error::InvalidConfig(
                "at least two evaluation rollouts are required".into(),
            ));
        }
        if !(self.divergence_radius > 0.0) {
            return Err(Error::InvalidConfig(
                "divergence radius must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub epsilon: f64,
    pub rollouts: usize,
    pub mean_cost: f64,
    /// `sqrt(cost_variance / n)` over the non-truncated rollouts.
    pub std_error: f64,
    pub cost_variance: f64,
    /// Mean of `‖x_T − x̄_T‖²` over the non-truncated rollouts.
    pub terminal_mse: f64,
    pub terminal_mse_stderr: f64,
    /// Rollouts that hit a non-finite state; excluded from the moments.
    pub truncated: usize,
    /// Truncated rollouts plus those that left the divergence radius.
    pub diverged: usize,
    pub divergence_fraction: f64,
    pub samples: Option<Vec<f64>>,
}

/// What one evaluation rollout contributes.
#[derive(Debug, Clone)]
struct Outcome {
    cost: f64,
    terminal_sq: f64,
    max_dev: f64,
    truncated: bool,
    terminal_dev: DVector<f64>,
    noises: Vec<DVector<f64>>,
}

fn draw_normals<R: Rng + ?Sized>(
    rng: &mut R,
    rollouts: usize,
    steps: usize,
    dim: usize,
) -> Vec<Vec<DVector<f64>>> {
    (0..rollouts)
        .map(|_| math::gaussian_block(rng, steps, dim, 1.0))
        .collect()
}

fn run_batch<E: Executor>(
    task: &Task,
    policy: &D2cPolicy,
    scale: &DMatrix<f64>,
    normals: &[Vec<DVector<f64>>],
    feedback: bool,
    keep_noise: bool,
    exec: &E,
) -> Result<Vec<Outcome>> {
    exec.map_indexed(normals.len(), |i| {
        let noises: Vec<DVector<f64>> = normals[i].iter().map(|z| scale * z).collect();
        match execute_with_noise(task, policy, &noises, feedback) {
            Ok(traj) => {
                let terminal_dev = traj.deviations.last().cloned().unwrap_or_default();
                let max_dev = traj.deviations.iter().map(|d| d.amax()).fold(0.0, f64::max);
                Ok(Outcome {
                    cost: traj.total_cost,
                    terminal_sq: terminal_dev.norm_squared(),
                    max_dev,
                    truncated: false,
                    terminal_dev,
                    noises: if keep_noise { noises } else { Vec::new() },
                })
            }
            Err(Error::Truncated { .. }) => Ok(Outcome {
                cost: f64::NAN,
                terminal_sq: f64::NAN,
                max_dev: f64::INFINITY,
                truncated: true,
                terminal_dev: DVector::zeros(0),
                noises: if keep_noise { noises } else { Vec::new() },
            }),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect()
}

fn summarize(epsilon: f64, outcomes: &[Outcome], cfg: &EvalConfig) -> EvalReport {
    let ok: Vec<&Outcome> = outcomes.iter().filter(|o| !o.truncated).collect();
    let costs: Vec<f64> = ok.iter().map(|o| o.cost).collect();
    let sq: Vec<f64> = ok.iter().map(|o| o.terminal_sq).collect();
    let (mean, var) = stats::mean_variance(&costs);
    let (mse, mse_var) = stats::mean_variance(&sq);
    let truncated = outcomes.len() - ok.len();
    let diverged = outcomes
        .iter()
        .filter(|o| o.truncated || o.max_dev > cfg.divergence_radius)
        .count();
    EvalReport {
        epsilon,
        rollouts: outcomes.len(),
        mean_cost: mean,
        std_error: stats::standard_error(var, costs.len()),
        cost_variance: var,
        terminal_mse: mse,
        terminal_mse_stderr: stats::standard_error(mse_var, sq.len()),
        truncated,
        diverged,
        divergence_fraction: diverged as f64 / outcomes.len() as f64,
        samples: cfg.keep_samples.then_some(costs),
    }
}

fn check_policy(task: &Task, policy: &D2cPolicy) -> Result<()> {
    check_dim("policy horizon", task.steps(), policy.steps())?;
    policy.validate()
}

/// Cost and terminal-error statistics over `cfg.rollouts` executions.
pub fn monte_carlo_eval<R, E>(
    task: &Task,
    policy: &D2cPolicy,
    epsilon: f64,
    cfg: &EvalConfig,
    mode: EvalMode,
    rng: &mut R,
    exec: &E,
) -> Result<EvalReport>
where
    R: Rng + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    check_policy(task, policy)?;
    let nu = task.plant.control_dim();
    let scale = cfg.noise(epsilon, nu)?.scale_matrix();
    let normals = draw_normals(rng, cfg.rollouts, task.steps(), nu);
    let outcomes = run_batch(
        task,
        policy,
        &scale,
        &normals,
        mode == EvalMode::Closed,
        false,
        exec,
    )?;
    Ok(summarize(epsilon, &outcomes, cfg))
}

/// Exact expected cost of the linear-Gaussian closed loop
/// `x_{t+1} = (A_t + B_t K_t) x_t + ε B_t w_t`, `u_t = K_t x_t`,
/// `w_t ~ N(0, W)`, started from the deterministic state `x1`, under
/// `Σ x'Q_t x + u'R_t u + x_T'Q_T x_T`.
///
/// Mean and covariance are propagated forward
/// (`Σ_{t+1} = Ā_t Σ_t Ā_t' + ε² B_t W B_t'`) and paired with the weights.
pub fn analytic_linear_cost(
    model: &LtvModel,
    gains: &GainSchedule,
    weights: &LqrWeights,
    epsilon: f64,
    noise_covariance: &DMatrix<f64>,
    x1: &DVector<f64>,
) -> Result<f64> {
    model.validate()?;
    let steps = model.steps();
    check_dim("lqr weights horizon", steps, weights.steps())?;
    check_dim("initial state", model.state_dim(), x1.len())?;
    check_dim(
        "noise covariance",
        model.control_dim(),
        noise_covariance.nrows(),
    )?;
    let abar = closed_loop_matrices(model, gains)?;
    let n = model.state_dim();
    let mut mean = x1.clone();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    let mut total = 0.0;
    let e2 = epsilon * epsilon;
    for t in 0..steps {
        let k = &gains.k[t];
        let ku = k * &mean;
        total += mean.dot(&(&weights.q[t] * &mean)) + (&weights.q[t] * &cov).trace();
        total +=
            ku.dot(&(&weights.r[t] * &ku)) + (&weights.r[t] * k * &cov * k.transpose()).trace();
        mean = &abar[t] * &mean;
        cov = &abar[t] * &cov * abar[t].transpose()
            + (&model.b[t] * noise_covariance * model.b[t].transpose()) * e2;
    }
    total += mean.dot(&(&weights.q_terminal * &mean)) + (&weights.q_terminal * &cov).trace();
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub epsilons: Vec<f64>,
    /// Cost of the noiseless nominal, `J̄`.
    pub nominal_cost: f64,
    pub reports: Vec<EvalReport>,
    /// Signed `J̃(ε) − J̄` per noise level.
    pub mean_gaps: Vec<f64>,
    /// Fit of `log |J̃ − J̄|` on `log ε`; `None` when inconclusive.
    pub mean_gap_fit: Option<SlopeFit>,
    /// Fit of `log Var(J)` on `log ε`.
    pub variance_fit: Option<SlopeFit>,
    /// Set when the smallest-ε gap is within three standard errors of zero
    /// or the gaps change sign across the grid.
    pub inconclusive: bool,
    pub linearity: Option<LinearityReport>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("epsilon grid is empty".into()));
    }
    if grid.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidConfig(
            "epsilon grid values must be positive".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "epsilon grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Default grid for the small-noise studies.
pub const DEFAULT_SCALING_GRID: [f64; 4] = [0.0125, 0.025, 0.05, 0.1];

/// Measures how the closed-loop mean cost gap and the cost variance scale
/// with the noise level.
pub fn epsilon_scaling_study<R, E>(
    task: &Task,
    policy: &D2cPolicy,
    grid: &[f64],
    cfg: &EvalConfig,
    rng: &mut R,
    exec: &E,
) -> Result<ScalingReport>
where
    R: Rng + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    check_grid(grid)?;
    check_policy(task, policy)?;
    let nu = task.plant.control_dim();
    let zeros = alloc::vec![DVector::zeros(nu); task.steps()];
    let nominal_cost = execute_with_noise(task, policy, &zeros, true)?.total_cost;
    let normals = draw_normals(rng, cfg.rollouts, task.steps(), nu);
    let mut reports = Vec::with_capacity(grid.len());
    for &eps in grid {
        let scale = cfg.noise(eps, nu)?.scale_matrix();
        let outcomes = run_batch(task, policy, &scale, &normals, true, false, exec)?;
        reports.push(summarize(eps, &outcomes, cfg));
    }
    let mean_gaps: Vec<f64> = reports.iter().map(|r| r.mean_cost - nominal_cost).collect();
    let first = &reports[0];
    let floor_ok = mean_gaps[0].abs() > 3.0 * first.std_error;
    let same_sign = mean_gaps.iter().all(|g| *g > 0.0) || mean_gaps.iter().all(|g| *g < 0.0);
    let inconclusive = !(floor_ok && same_sign);
    let abs_gaps: Vec<f64> = mean_gaps.iter().map(|g| g.abs()).collect();
    let mean_gap_fit = if inconclusive {
        None
    } else {
        stats::loglog_fit(grid, &abs_gaps)
    };
    let variances: Vec<f64> = reports.iter().map(|r| r.cost_variance).collect();
    Ok(ScalingReport {
        epsilons: grid.to_vec(),
        nominal_cost,
        reports,
        mean_gaps,
        mean_gap_fit,
        variance_fit: stats::loglog_fit(grid, &variances),
        inconclusive,
        linearity: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearityReport {
    pub epsilons: Vec<f64>,
    /// Mean of `‖δx_T − δx_T^l‖` per noise level.
    pub mean_residual: Vec<f64>,
    pub residual_stderr: Vec<f64>,
    pub max_residual: Vec<f64>,
    /// Fit of `log E‖δx_T − δx_T^l‖` on `log ε`; `None` when a residual
    /// vanishes.
    pub fit: Option<SlopeFit>,
}

/// Compares the nonlinear closed-loop terminal deviation with its linear
/// prediction `δx^l_{t+1} = Ā_t δx^l_t + B_t ε w_t`, `δx^l_1 = 0`, driven by
/// the same noise.
pub fn perturbation_linearity_check<R, E>(
    task: &Task,
    policy: &D2cPolicy,
    model: &LtvModel,
    grid: &[f64],
    cfg: &EvalConfig,
    rng: &mut R,
    exec: &E,
) -> Result<LinearityReport>
where
    R: Rng + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    check_grid(grid)?;
    check_policy(task, policy)?;
    check_dim("model horizon", task.steps(), model.steps())?;
    check_dim("model state dim", task.plant.state_dim(), model.state_dim())?;
    let abar = closed_loop_matrices(model, &policy.gains)?;
    let nu = task.plant.control_dim();
    let normals = draw_normals(rng, cfg.rollouts, task.steps(), nu);
    let mut mean_residual = Vec::new();
    let mut residual_stderr = Vec::new();
    let mut max_residual = Vec::new();
    for &eps in grid {
        let scale = cfg.noise(eps, nu)?.scale_matrix();
        let outcomes = run_batch(task, policy, &scale, &normals, true, true, exec)?;
        let residuals: Vec<f64> = outcomes
            .iter()
            .filter(|o| !o.truncated)
            .map(|o| {
                let mut lin = DVector::zeros(model.state_dim());
                for (t, w) in o.noises.iter().enumerate() {
                    lin = &abar[t] * &lin + &model.b[t] * w;
                }
                (&o.terminal_dev - lin).norm()
            })
            .collect();
        let (m, v) = stats::mean_variance(&residuals);
        mean_residual.push(m);
        residual_stderr.push(stats::standard_error(v, residuals.len()));
        max_residual.push(residuals.iter().copied().fold(0.0, f64::max));
    }
    let fit = stats::loglog_fit(grid, &mean_residual);
    Ok(LinearityReport {
        epsilons: grid.to_vec(),
        mean_residual,
        residual_stderr,
        max_residual,
        fit,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceComparison {
    pub epsilon: f64,
    pub closed: EvalReport,
    pub open: EvalReport,
    /// `Var_closed / Var_open`; 1 when both vanish.
    pub ratio: f64,
    /// Paired estimate of `Var_closed − Var_open` and its 95% interval.
    pub difference: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// The upper end of the interval is below zero.
    pub closed_lower_significant: bool,
    /// Both arms saw the identical noise realizations.
    pub coupled: bool,
}

/// Closed-loop against open-loop cost variance on shared noise.
///
/// The paired interval uses `D_i = (c_i − c̄)² − (o_i − ō)²`, whose mean is
/// the variance difference (Pitman–Morgan style pairing).
pub fn variance_comparison<R, E>(
    task: &Task,
    policy: &D2cPolicy,
    epsilon: f64,
    cfg: &EvalConfig,
    rng: &mut R,
    exec: &E,
) -> Result<VarianceComparison>
where
    R: Rng + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    check_policy(task, policy)?;
    let nu = task.plant.control_dim();
    let scale = cfg.noise(epsilon, nu)?.scale_matrix();
    let normals = draw_normals(rng, cfg.rollouts, task.steps(), nu);
    let closed_runs = run_batch(task, policy, &scale, &normals, true, true, exec)?;
    let open_runs = run_batch(task, policy, &scale, &normals, false, true, exec)?;
    let coupled = closed_runs
        .iter()
        .zip(&open_runs)
        .all(|(c, o)| c.noises == o.noises);
    let closed = summarize(epsilon, &closed_runs, cfg);
    let open = summarize(epsilon, &open_runs, cfg);

    let pairs: Vec<(f64, f64)> = closed_runs
        .iter()
        .zip(&open_runs)
        .filter(|(c, o)| !c.truncated && !o.truncated)
        .map(|(c, o)| (c.cost, o.cost))
        .collect();
    let n = pairs.len();
    let mc = pairs.iter().map(|p| p.0).sum::<f64>() / n.max(1) as f64;
    let mo = pairs.iter().map(|p| p.1).sum::<f64>() / n.max(1) as f64;
    let d: Vec<f64> = pairs
        .iter()
        .map(|(c, o)| (c - mc) * (c - mc) - (o - mo) * (o - mo))
        .collect();
    let (dm, dv) = stats::mean_variance(&d);
    let correction = if n > 1 {
        n as f64 / (n - 1) as f64
    } else {
        1.0
    };
    let difference = dm * correction;
    let half = 1.96 * stats::standard_error(dv, n) * correction;
    let ratio = if open.cost_variance == 0.0 && closed.cost_variance == 0.0 {
        1.0
    } else {
        closed.cost_variance / open.cost_variance
    };
    Ok(VarianceComparison {
        epsilon,
        ratio,
        difference,
        ci_low: difference - half,
        ci_high: difference + half,
        closed_lower_significant: difference + half < 0.0,
        coupled,
        closed,
        open,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustnessRow {
    pub epsilon: f64,
    pub closed: EvalReport,
    pub open: EvalReport,
}

/// Terminal error against noise level for the closed- and open-loop arms.
pub fn robustness_curve<R, E>(
    task: &Task,
    policy: &D2cPolicy,
    grid: &[f64],
    cfg: &EvalConfig,
    rng: &mut R,
    exec: &E,
) -> Result<Vec<RobustnessRow>>
where
    R: Rng + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    if grid.iter().any(|e| !(*e >= 0.0 && e.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(
            "robustness grid must be nonnegative and strictly increasing".into(),
        ));
    }
    check_policy(task, policy)?;
    let nu = task.plant.control_dim();
    let normals = draw_normals(rng, cfg.rollouts, task.steps(), nu);
    grid.iter()
        .map(|&eps| {
            let scale = cfg.noise(eps, nu)?.scale_matrix();
            let closed = run_batch(task, policy, &scale, &normals, true, false, exec)?;
            let open = run_batch(task, policy, &scale, &normals, false, false, exec)?;
            Ok(RobustnessRow {
                epsilon: eps,
                closed: summarize(eps, &closed, cfg),
                open: summarize(eps, &open, cfg),
            })
        })
        .collect()
}

/// Smallest grid level at which the closed loop shows any divergence.
pub fn first_divergence(rows: &[RobustnessRow]) -> Option<f64> {
    rows.iter()
        .find(|r| r.closed.divergence_fraction > 0.0)
        .map(|r| r.epsilon)
}
