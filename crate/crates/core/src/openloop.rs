//! Open-loop trajectory optimization with a rollout-only gradient estimator.
//!
//! Each iteration perturbs the current control sequence `U` with i.i.d.
//! Gaussian noise of variance `σ` per coordinate, evaluates `m` noiseless
//! rollouts and folds them into running averages:
//!
//! ```text
//! J̄^{j+1} = (1 − 1/j) J̄^j + (1/j) J_j
//! g^{j+1} = (1 − 1/j) g^j + 1/(j σ) (J_j − J̄^{j+1}) δU_j
//! ```
//!
//! and then takes a plain gradient step `U ← U − α g^{m+1}`.

use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;

use crate::dynamics::{self, Dynamics, Trajectory};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::math;
use crate::task::Task;

/// Anything that scores a full control sequence with a noiseless rollout.
pub trait Objective: Sync {
    fn control_dim(&self) -> usize;
    /// Number of control steps `T − 1`.
    fn steps(&self) -> usize;
    fn cost(&self, controls: &[DVector<f64>]) -> Result<f64>;
}

impl Objective for Task {
    fn control_dim(&self) -> usize {
        self.plant.control_dim()
    }

    fn steps(&self) -> usize {
        self.plant.steps()
    }

    fn cost(&self, controls: &[DVector<f64>]) -> Result<f64> {
        let zeros = alloc::vec![DVector::zeros(self.control_dim()); self.steps()];
        Ok(dynamics::rollout_with_noise(&self.plant, &self.cost, controls, &zeros)?.total_cost)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub controls: Vec<DVector<f64>>,
    /// Optimizer iteration that produced this sequence.
    pub iteration: usize,
}

impl ControlSequence {
    pub fn zeros(steps: usize, control_dim: usize) -> Self {
        Self {
            controls: alloc::vec![DVector::zeros(control_dim); steps],
            iteration: 0,
        }
    }

    pub fn new(controls: Vec<DVector<f64>>) -> Self {
        Self {
            controls,
            iteration: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    fn check(&self, obj: &impl Objective) -> Result<()> {
        dynamics::check_dim("control sequence", obj.steps(), self.controls.len())?;
        for u in &self.controls {
            dynamics::check_dim("control", obj.control_dim(), u.len())?;
            if !math::all_finite(u) {
                return Err(Error::NonFinite("control sequence"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEstimatorConfig {
    /// Per-coordinate variance of the control perturbations.
    pub sigma_du: f64,
    /// Rollouts per iteration.
    pub rollouts: usize,
    pub alpha: f64,
    /// Geometric step-size decay; `α_n = α γ^n`.
    pub decay: f64,
    pub max_iters: usize,
    /// Convergence threshold on consecutive mean-cost changes.
    pub tol: f64,
}

impl Default for GradEstimatorConfig {
    fn default() -> Self {
        Self {
            sigma_du: 1e-3,
            rollouts: 100,
            alpha: 1e-3,
            decay: 1.0,
            max_iters: 1000,
            tol: 1e-6,
        }
    }
}

impl GradEstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.sigma_du > 0.0 && self.sigma_du.is_finite()) {
            return bad("sigma_du must be positive");
        }
        if self.rollouts < 2 {
            return bad("at least two rollouts per iteration are required");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be nonnegative");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub mean_cost: f64,
    /// Per-timestep blocks of the stacked gradient.
    pub gradient: Vec<DVector<f64>>,
    pub rollouts_used: usize,
}

impl GradientEstimate {
    pub fn norm(&self) -> f64 {
        math::sqrt(self.gradient.iter().map(|g| g.norm_squared()).sum())
    }

    /// The stacked gradient as one vector of length `(T−1)·n_u`.
    pub fn flat(&self) -> DVector<f64> {
        let data: Vec<f64> = self
            .gradient
            .iter()
            .flat_map(|g| g.iter().copied())
            .collect();
        DVector::from_vec(data)
    }
}

/// One iteration of the sequential cost/gradient estimator around `u`.
///
/// Perturbations are drawn from `rng` in rollout order before any rollout
/// runs; rollouts may then run concurrently, and the running averages are
/// folded in index order.
pub fn estimate_cost_and_gradient<O, R, E>(
    obj: &O,
    u: &ControlSequence,
    cfg: &GradEstimatorConfig,
    rng: &mut R,
    exec: &E,
) -> Result<GradientEstimate>
where
    O: Objective,
    R: Rng + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    u.check(obj)?;
    let steps = obj.steps();
    let nu = obj.control_dim();
    let perturbations: Vec<Vec<DVector<f64>>> = (0..cfg.rollouts)
        .map(|_| math::gaussian_block(rng, steps, nu, cfg.sigma_du))
        .collect();
    let costs = exec.map_indexed(cfg.rollouts, |j| {
        let perturbed: Vec<DVector<f64>> = u
            .controls
            .iter()
            .zip(&perturbations[j])
            .map(|(c, d)| c + d)
            .collect();
        obj.cost(&perturbed)
    });

    let mut mean = 0.0;
    let mut grad = alloc::vec![DVector::<f64>::zeros(nu); steps];
    for (idx, (cost, du)) in costs.into_iter().zip(&perturbations).enumerate() {
        let cost = match cost {
            Ok(c) if c.is_finite() => c,
            Ok(_) | Err(Error::NonFinite(_)) => return Err(Error::NonFiniteRollout { index: idx }),
            Err(e) => return Err(e),
        };
        let j = (idx + 1) as f64;
        let keep = 1.0 - 1.0 / j;
        mean = keep * mean + cost / j;
        let w = (cost - mean) / (j * cfg.sigma_du);
        for (g, d) in grad.iter_mut().zip(du) {
            *g *= keep;
            g.axpy(w, d, 1.0);
        }
    }
    Ok(GradientEstimate {
        mean_cost: mean,
        gradient: grad,
        rollouts_used: cfg.rollouts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub mean_cost: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub controls: ControlSequence,
    pub history: Vec<IterationRecord>,
    pub converged: bool,
}

pub const DIVERGENCE_COST: f64 = 1e12;

/// Gradient descent until the mean cost changes by less than `tol` on three
/// consecutive iterations, or `max_iters` is reached.
pub fn optimize<O, R, E>(
    obj: &O,
    u0: ControlSequence,
    cfg: &GradEstimatorConfig,
    rng: &mut R,
    exec: &E,
) -> Result<OptimizeResult>
where
    O: Objective,
    R: Rng + ?Sized,
    E: Executor,
{
    optimize_observed(obj, u0, cfg, rng, exec, &mut |_| {})
}

/// [`optimize`] with a callback invoked after every iteration.
pub fn optimize_observed<O, R, E>(
    obj: &O,
    u0: ControlSequence,
    cfg: &GradEstimatorConfig,
    rng: &mut R,
    exec: &E,
    observer: &mut dyn FnMut(&IterationRecord),
) -> Result<OptimizeResult>
where
    O: Objective,
    R: Rng + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    u0.check(obj)?;
    let mut u = u0;
    let mut history: Vec<IterationRecord> = Vec::new();
    let mut quiet = 0usize;
    let mut alpha = cfg.alpha;
    for n in 0..cfg.max_iters {
        let est = match estimate_cost_and_gradient(obj, &u, cfg, rng, exec) {
            Ok(e) => e,
            Err(Error::NonFiniteRollout { .. }) => {
                return Err(Error::Diverged {
                    iteration: n,
                    history,
                })
            }
            Err(e) => return Err(e),
        };
        let record = IterationRecord {
            iter: n,
            mean_cost: est.mean_cost,
            grad_norm: est.norm(),
        };
        history.push(record);
        observer(&record);
        if !est.mean_cost.is_finite()
            || est.mean_cost > DIVERGENCE_COST
            || !record.grad_norm.is_finite()
        {
            return Err(Error::Diverged {
                iteration: n,
                history,
            });
        }
        if let [.., prev, last] = history.as_slice() {
            if (last.mean_cost - prev.mean_cost).abs() < cfg.tol {
                quiet += 1;
            } else {
                quiet = 0;
            }
        }
        if quiet >= 3 {
            return Ok(OptimizeResult {
                controls: u,
                history,
                converged: true,
            });
        }
        for (c, g) in u.controls.iter_mut().zip(&est.gradient) {
            c.axpy(-alpha, g, 1.0);
        }
        u.iteration = n + 1;
        alpha *= cfg.decay;
    }
    Ok(OptimizeResult {
        controls: u,
        history,
        converged: false,
    })
}

/// The noiseless rollout under `u`: the nominal trajectory `x̄*`.
pub fn nominal_trajectory(task: &Task, u: &ControlSequence) -> Result<Trajectory> {
    let zeros = alloc::vec![DVector::zeros(task.plant.control_dim()); task.steps()];
    dynamics::rollout_with_noise(&task.plant, &task.cost, &u.controls, &zeros)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `J(U) = U'HU + c` on a flattened sequence.
    pub(crate) struct Quadratic {
        pub h: nalgebra::DMatrix<f64>,
        pub steps: usize,
        pub dim: usize,
        pub offset: f64,
    }

    impl Objective for Quadratic {
        fn control_dim(&self) -> usize {
            self.dim
        }
        fn steps(&self) -> usize {
            self.steps
        }
        fn cost(&self, controls: &[DVector<f64>]) -> Result<f64> {
            let flat: Vec<f64> = controls.iter().flat_map(|c| c.iter().copied()).collect();
            let x = DVector::from_vec(flat);
            Ok(x.dot(&(&self.h * &x)) + self.offset)
        }
    }

    struct Constant;
    impl Objective for Constant {
        fn control_dim(&self) -> usize {
            1
        }
        fn steps(&self) -> usize {
            4
        }
        fn cost(&self, _: &[DVector<f64>]) -> Result<f64> {
            Ok(5.0)
        }
    }

    struct Recording(std::sync::Mutex<Vec<f64>>);
    impl Objective for Recording {
        fn control_dim(&self) -> usize {
            2
        }
        fn steps(&self) -> usize {
            3
        }
        fn cost(&self, controls: &[DVector<f64>]) -> Result<f64> {
            let c = controls.iter().map(|u| u.sum()).sum::<f64>().powi(2);
            self.0.lock().unwrap().push(c);
            Ok(c)
        }
    }

    fn cfg(sigma: f64, m: usize) -> GradEstimatorConfig {
        GradEstimatorConfig {
            sigma_du: sigma,
            rollouts: m,
            ..GradEstimatorConfig::default()
        }
    }

    #[test]
    fn constant_landscape_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = ControlSequence::zeros(4, 1);
        let sigma = 0.01;
        let est =
            estimate_cost_and_gradient(&Constant, &u, &cfg(sigma, 5000), &mut rng, &Sequential)
                .unwrap();
        assert!(est.norm() < 0.05 * sigma.sqrt());
        assert!((est.mean_cost - 5.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_quadratic_gradient() {
        let obj = Quadratic {
            h: nalgebra::DMatrix::identity(1, 1),
            steps: 1,
            dim: 1,
            offset: 0.0,
        };
        let u = ControlSequence::new(alloc::vec![DVector::from_element(1, 3.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let est =
            estimate_cost_and_gradient(&obj, &u, &cfg(0.01, 5000), &mut rng, &Sequential).unwrap();
        let g = est.gradient[0][0];
        assert!((g - 6.0).abs() < 0.15 * 6.0, "{g}");
    }

    #[test]
    fn mean_is_the_arithmetic_mean() {
        let obj = Recording(std::sync::Mutex::new(Vec::new()));
        let u = ControlSequence::new(alloc::vec![DVector::from_element(2, 0.5); 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let est =
            estimate_cost_and_gradient(&obj, &u, &cfg(0.1, 37), &mut rng, &Sequential).unwrap();
        let costs = obj.0.lock().unwrap();
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        assert_eq!(costs.len(), 37);
        assert!((est.mean_cost - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    }

    #[test]
    fn zero_step_size_keeps_u0() {
        let obj = Quadratic {
            h: nalgebra::DMatrix::identity(2, 2),
            steps: 2,
            dim: 1,
            offset: 0.0,
        };
        let u0 = ControlSequence::new(alloc::vec![
            DVector::from_element(1, 1.0),
            DVector::from_element(1, -2.0)
        ]);
        let c = GradEstimatorConfig {
            alpha: 0.0,
            max_iters: 20,
            ..cfg(1e-3, 10)
        };
        let res = optimize(
            &obj,
            u0.clone(),
            &c,
            &mut ChaCha8Rng::seed_from_u64(0),
            &Sequential,
        )
        .unwrap();
        assert_eq!(res.controls.controls, u0.controls);
    }

    #[test]
    fn minimum_is_a_fixed_point() {
        let obj = Quadratic {
            h: nalgebra::DMatrix::identity(3, 3),
            steps: 3,
            dim: 1,
            offset: 1.0,
        };
        let u0 = ControlSequence::zeros(3, 1);
        let c = GradEstimatorConfig {
            alpha: 0.1,
            max_iters: 50,
            tol: 1e-4,
            ..cfg(1e-6, 50)
        };
        let res = optimize(&obj, u0, &c, &mut ChaCha8Rng::seed_from_u64(5), &Sequential).unwrap();
        assert!(res.converged);
        assert!(res.controls.controls.iter().all(|u| u[0].abs() < 1e-3));
    }

    #[test]
    fn divergence_is_reported_with_history() {
        let obj = Quadratic {
            h: nalgebra::DMatrix::identity(1, 1),
            steps: 1,
            dim: 1,
            offset: 0.0,
        };
        let u0 = ControlSequence::new(alloc::vec![DVector::from_element(1, 1.0)]);
        let c = GradEstimatorConfig {
            alpha: 10.0,
            max_iters: 100,
            ..cfg(1e-4, 20)
        };
        match optimize(&obj, u0, &c, &mut ChaCha8Rng::seed_from_u64(5), &Sequential) {
            Err(Error::Diverged { history, .. }) => assert!(!history.is_empty()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_rollout_names_its_index() {
        struct Bad;
        impl Objective for Bad {
            fn control_dim(&self) -> usize {
                1
            }
            fn steps(&self) -> usize {
                1
            }
            fn cost(&self, c: &[DVector<f64>]) -> Result<f64> {
                Ok(if c[0][0] > 0.0 { f64::NAN } else { 1.0 })
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = estimate_cost_and_gradient(
            &Bad,
            &ControlSequence::zeros(1, 1),
            &cfg(1.0, 50),
            &mut rng,
            &Sequential,
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteRollout { .. }));
    }

    #[test]
    fn rejects_bad_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = ControlSequence::zeros(4, 1);
        assert!(
            estimate_cost_and_gradient(&Constant, &u, &cfg(0.0, 10), &mut rng, &Sequential)
                .is_err()
        );
        assert!(
            estimate_cost_and_gradient(&Constant, &u, &cfg(1.0, 1), &mut rng, &Sequential).is_err()
        );
        let short = ControlSequence::zeros(3, 1);
        assert!(estimate_cost_and_gradient(
            &Constant,
            &short,
            &cfg(1.0, 10),
            &mut rng,
            &Sequential
        )
        .is_err());
    }
}
