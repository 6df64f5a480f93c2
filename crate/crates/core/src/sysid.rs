//! Linear time-varying identification around a nominal trajectory.
//!
//! For every timestep the dataset stacks input columns `[δx_t; δu_t]` into `X`
//! and the observed next-state deviations `δx_{t+1}` into `Y`, and the model
//! `[Â_t | B̂_t]` is fitted to `Y ≈ [Â_t | B̂_t] X`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dynamics::{check_dim, Dynamics, Trajectory};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math;

/// Perturbation dynamics `δx_{t+1} = A_t δx_t + B_t δu_t`, `t = 1..T−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtvModel {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl LtvModel {
    pub fn constant(a: DMatrix<f64>, b: DMatrix<f64>, steps: usize) -> Self {
        Self {
            a: alloc::vec![a; steps],
            b: alloc::vec![b; steps],
        }
    }

    pub fn steps(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a.first().map_or(0, |a| a.nrows())
    }

    pub fn control_dim(&self) -> usize {
        self.b.first().map_or(0, |b| b.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("model B sequence", self.a.len(), self.b.len())?;
        let (n, m) = (self.state_dim(), self.control_dim());
        for (a, b) in self.a.iter().zip(&self.b) {
            check_dim("model A rows", n, a.nrows())?;
            check_dim("model A cols", n, a.ncols())?;
            check_dim("model B rows", n, b.nrows())?;
            check_dim("model B cols", m, b.ncols())?;
            if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("LTV model"));
            }
        }
        Ok(())
    }

    /// Largest per-timestep Frobenius distance of `[A_t | B_t]` to `other`.
    pub fn max_frobenius_error(&self, other: &LtvModel) -> f64 {
        self.frobenius_errors(other).into_iter().fold(0.0, f64::max)
    }

    pub fn frobenius_errors(&self, other: &LtvModel) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.b)
            .zip(other.a.iter().zip(&other.b))
            .map(|((a, b), (oa, ob))| math::sqrt((a - oa).norm_squared() + (b - ob).norm_squared()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    /// `[Â|B̂] = Y X' / (N σ)`, using `X X' ≈ N σ I` for i.i.d. perturbations.
    MomentScaled,
    /// `[Â|B̂] = Y X' (X X' + λ I)⁻¹`.
    ExactLeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectionMode {
    /// Reset the simulator to `x̄_t + δx_t` and apply `ū_t + δu_t` for one step.
    StateReset,
    /// Roll whole episodes from `x_1` with control perturbations only and
    /// record the deviations they induce.
    TrajectoryPropagated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SysidConfig {
    /// Per-coordinate perturbation variance.
    pub sigma: f64,
    /// Number of samples per timestep.
    pub rollouts: usize,
    pub estimator: Estimator,
    /// Tikhonov term relative to the mean diagonal of `X X'`.
    pub ridge: f64,
    pub mode: CollectionMode,
}

impl Default for SysidConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            rollouts: 200,
            estimator: Estimator::ExactLeastSquares,
            ridge: 1e-10,
            mode: CollectionMode::StateReset,
        }
    }
}

impl SysidConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig("sysid sigma must be positive".into()));
        }
        if self.rollouts == 0 {
            return Err(Error::InvalidConfig(
                "sysid rollouts must be positive".into(),
            ));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidConfig("ridge must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDataset {
    /// Per timestep, `(n_x + n_u) × N`.
    pub inputs: Vec<DMatrix<f64>>,
    /// Per timestep, `n_x × N`.
    pub outputs: Vec<DMatrix<f64>>,
    pub sigma: f64,
    pub rollouts: usize,
    pub mode: CollectionMode,
    pub state_dim: usize,
}

impl PerturbationDataset {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }
}

/// Runs the perturbation experiments around `nominal`.
///
/// All perturbations are drawn from `rng` in sample order first; the
/// experiments themselves go through `exec`.
pub fn collect_perturbation_data<D, R, E>(
    sys: &D,
    nominal: &Trajectory,
    cfg: &SysidConfig,
    rng: &mut R,
    exec: &E,
) -> Result<PerturbationDataset>
where
    D: Dynamics + ?Sized,
    R: Rng + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    let (nx, nu) = (sys.state_dim(), sys.control_dim());
    let steps = nominal.controls.len();
    check_dim("nominal states", steps + 1, nominal.states.len())?;
    if steps == 0 {
        return Err(Error::InvalidConfig(
            "nominal trajectory has no steps".into(),
        ));
    }
    let n = cfg.rollouts;
    let mut inputs = alloc::vec![DMatrix::zeros(nx + nu, n); steps];
    let mut outputs = alloc::vec![DMatrix::zeros(nx, n); steps];

    match cfg.mode {
        CollectionMode::StateReset => {
            if !sys.supports_state_reset() {
                return Err(Error::StateResetUnsupported);
            }
            // sample k, step t: (δx, δu)
            let draws: Vec<Vec<(DVector<f64>, DVector<f64>)>> = (0..n)
                .map(|_| {
                    (0..steps)
                        .map(|_| {
                            let dx = math::gaussian_block(rng, 1, nx, cfg.sigma).pop().unwrap();
                            let du = math::gaussian_block(rng, 1, nu, cfg.sigma).pop().unwrap();
                            (dx, du)
                        })
                        .collect()
                })
                .collect();
            let results = exec.map_indexed(n, |k| {
                draws[k]
                    .iter()
                    .enumerate()
                    .map(|(t, (dx, du))| {
                        let x = &nominal.states[t] + dx;
                        let u = &nominal.controls[t] + du;
                        let next = sys.propagate(&x, &u);
                        if !math::all_finite(&next) {
                            return Err(Error::NonFinite("perturbation experiment"));
                        }
                        Ok(next - &nominal.states[t + 1])
                    })
                    .collect::<Result<Vec<_>>>()
            });
            for (k, res) in results.into_iter().enumerate() {
                for (t, dy) in res?.into_iter().enumerate() {
                    let (dx, du) = &draws[k][t];
                    let mut col = inputs[t].column_mut(k);
                    col.rows_mut(0, nx).copy_from(dx);
                    col.rows_mut(nx, nu).copy_from(du);
                    outputs[t].set_column(k, &dy);
                }
            }
        }
        CollectionMode::TrajectoryPropagated => {
            let draws: Vec<Vec<DVector<f64>>> = (0..n)
                .map(|_| math::gaussian_block(rng, steps, nu, cfg.sigma))
                .collect();
            let results = exec.map_indexed(n, |k| {
                let mut x = nominal.states[0].clone();
                let mut devs = Vec::with_capacity(steps + 1);
                devs.push(DVector::zeros(nx));
                for t in 0..steps {
                    x = sys.propagate(&x, &(&nominal.controls[t] + &draws[k][t]));
                    if !math::all_finite(&x) {
                        return Err(Error::NonFinite("perturbation experiment"));
                    }
                    devs.push(&x - &nominal.states[t + 1]);
                }
                Ok(devs)
            });
            for (k, res) in results.into_iter().enumerate() {
                let devs = res?;
                for t in 0..steps {
                    let mut col = inputs[t].column_mut(k);
                    col.rows_mut(0, nx).copy_from(&devs[t]);
                    col.rows_mut(nx, nu).copy_from(&draws[k][t]);
                    outputs[t].set_column(k, &devs[t + 1]);
                }
            }
        }
    }

    Ok(PerturbationDataset {
        inputs,
        outputs,
        sigma: cfg.sigma,
        rollouts: n,
        mode: cfg.mode,
        state_dim: nx,
    })
}

/// Fits `[Â_t | B̂_t]` for every timestep of `data`.
pub fn estimate_ltv(data: &PerturbationDataset, cfg: &SysidConfig) -> Result<LtvModel> {
    cfg.validate()?;
    let nx = data.state_dim;
    let mut a = Vec::with_capacity(data.steps());
    let mut b = Vec::with_capacity(data.steps());
    for (t, (x, y)) in data.inputs.iter().zip(&data.outputs).enumerate() {
        check_dim("dataset columns", x.ncols(), y.ncols())?;
        let theta = match cfg.estimator {
            Estimator::MomentScaled => (y * x.transpose()) / (x.ncols() as f64 * data.sigma),
            Estimator::ExactLeastSquares => least_squares(x, y, cfg.ridge, t)?,
        };
        let nu = theta.ncols() - nx;
        a.push(theta.columns(0, nx).into_owned());
        b.push(theta.columns(nx, nu).into_owned());
    }
    Ok(LtvModel { a, b })
}

fn least_squares(x: &DMatrix<f64>, y: &DMatrix<f64>, ridge: f64, t: usize) -> Result<DMatrix<f64>> {
    let d = x.nrows();
    let mut gram = x * x.transpose();
    if ridge == 0.0 {
        let eig = math::symmetrize(&gram).symmetric_eigenvalues();
        let max = eig.iter().copied().fold(0.0, f64::max);
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min <= max * 1e-13 {
            return Err(Error::Singular { t });
        }
    }
    // relative to the mean regressor energy so that the bias does not depend
    // on the perturbation scale
    let lambda = ridge * gram.trace() / d as f64;
    for i in 0..d {
        gram[(i, i)] += lambda;
    }
    // Θ' = (X X' + λI)⁻¹ X Y'
    let rhs = x * y.transpose();
    let chol = gram.cholesky().ok_or(Error::Singular { t })?;
    Ok(chol.solve(&rhs).transpose())
}

/// One-step-ahead prediction error of `model` on `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// `sqrt(Σ‖δx_{t+1} − Â δx_t − B̂ δu_t‖² / (N n_x))` per timestep.
    pub rmse: Vec<f64>,
}

impl FitReport {
    pub fn max(&self) -> f64 {
        self.rmse.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        if self.rmse.is_empty() {
            return 0.0;
        }
        self.rmse.iter().sum::<f64>() / self.rmse.len() as f64
    }
}

pub fn model_fit_report(model: &LtvModel, data: &PerturbationDataset) -> Result<FitReport> {
    check_dim("model steps", data.steps(), model.steps())?;
    let nx = data.state_dim;
    let rmse = data
        .inputs
        .iter()
        .zip(&data.outputs)
        .zip(model.a.iter().zip(&model.b))
        .map(|((x, y), (a, b))| {
            let mut theta = DMatrix::zeros(nx, x.nrows());
            theta.columns_mut(0, nx).copy_from(a);
            theta.columns_mut(nx, b.ncols()).copy_from(b);
            let r = y - theta * x;
            let count = (y.ncols() * nx).max(1) as f64;
            math::sqrt(r.norm_squared() / count)
        })
        .collect();
    Ok(FitReport { rmse })
}
