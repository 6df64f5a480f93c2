//! Decoupled data-based control.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`openloop`] finds a nominal control sequence for the noiseless system
//!    with a zeroth-order (rollout-only) gradient estimator.
//! 2. [`sysid`] identifies a linear time-varying perturbation model around the
//!    resulting nominal trajectory from perturbed one-step experiments.
//! 3. [`lqr`] synthesizes time-varying feedback gains with a backward Riccati
//!    recursion on the identified model.
//! 4. [`policy`] wraps nominal plan and gains into `u_t = ū_t + K_t δx_t` and
//!    runs it in closed loop.
//!
//! [`eval`] measures the resulting cost statistics by Monte-Carlo and checks
//! the small-noise scaling behaviour of the decoupled design.
//!
//! The crate is `no_std` and needs only `alloc`. Rollout batches are mapped
//! through an [`Executor`]; [`Sequential`] is provided here and a thread-pool
//! backed executor lives in the companion `d2c` crate. Every batch operation
//! draws its randomness up front in index order and reduces in index order,
//! so results do not depend on the executor.
#![cfg_attr(not(test), no_std)]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod dynamics;
pub mod error;
pub mod eval;
pub mod exec;
pub mod lqr;
pub(crate) mod math;
pub mod openloop;
pub mod policy;
pub mod stats;
pub mod sysid;
pub mod task;

pub use dynamics::{
    analytic_ltv, rollout, rollout_with_noise, step, CartPole, Dynamics, LinearSystem, NoiseSpec,
    Pendulum, Plant, Simulator, SystemKind, SystemSpec, Trajectory,
};
pub use error::{Error, Result};
pub use eval::{
    analytic_linear_cost, epsilon_scaling_study, monte_carlo_eval, perturbation_linearity_check,
    robustness_curve, variance_comparison, EvalConfig, EvalMode, EvalReport, LinearityReport,
    RobustnessRow, ScalingReport, SlopeFit, VarianceComparison,
};
pub use exec::{Executor, Sequential};
pub use lqr::{closed_loop_matrices, solve_riccati, GainSchedule};
pub use openloop::{
    estimate_cost_and_gradient, nominal_trajectory, optimize, optimize_observed, ControlSequence,
    GradEstimatorConfig, GradientEstimate, IterationRecord, Objective, OptimizeResult,
};
pub use policy::{execute, execute_open_loop, execute_with_noise, ControlBounds, D2cPolicy};
pub use sysid::{
    collect_perturbation_data, estimate_ltv, model_fit_report, CollectionMode, Estimator,
    FitReport, LtvModel, PerturbationDataset, SysidConfig,
};
pub use task::{stage_cost, terminal_cost, total_cost, CostSpec, LqrWeights, Task};

pub use nalgebra::{DMatrix, DVector};
