//! Quadratic task costs `c(x, u) = d'Q d + ½ u'R u`, `c_T(x) = d'Q_T d`, where
//! `d` is the (periodic-aware) deviation from the goal state.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{check_dim, Dynamics, Plant};
use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    /// Incremental state weight `Q`.
    pub q: DMatrix<f64>,
    /// Control weight `R`, applied as `½ u'R u`.
    pub r: DMatrix<f64>,
    /// Terminal state weight `Q_T`.
    pub q_terminal: DMatrix<f64>,
    pub goal: DVector<f64>,
    /// Coordinates whose goal deviation is wrapped into (−π, π].
    pub periodic: Vec<bool>,
}

impl CostSpec {
    /// Scaled-identity weights, no periodic coordinates.
    pub fn quadratic(
        goal: &DVector<f64>,
        q: f64,
        r: f64,
        q_terminal: f64,
        control_dim: usize,
    ) -> Self {
        let n = goal.len();
        Self {
            q: DMatrix::identity(n, n) * q,
            r: DMatrix::identity(control_dim, control_dim) * r,
            q_terminal: DMatrix::identity(n, n) * q_terminal,
            goal: goal.clone(),
            periodic: vec![false; n],
        }
    }

    pub fn with_periodic(mut self, periodic: Vec<bool>) -> Self {
        self.periodic = periodic;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.goal.len()
    }

    pub fn control_dim(&self) -> usize {
        self.r.nrows()
    }

    /// Checks symmetry, definiteness and shapes.
    pub fn validate(&self) -> Result<()> {
        let n = self.goal.len();
        for (name, m, dim) in [
            ("q", &self.q, n),
            ("q_terminal", &self.q_terminal, n),
            ("r", &self.r, self.r.nrows()),
        ] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::InvalidConfig(format!(
                    "cost weight '{name}' must be {dim}x{dim}"
                )));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("cost weight"));
            }
            if !math::is_symmetric(m, 1e-12) {
                return Err(Error::InvalidConfig(format!(
                    "cost weight '{name}' is not symmetric"
                )));
            }
        }
        if math::min_eigenvalue(&self.q) < -1e-12 || math::min_eigenvalue(&self.q_terminal) < -1e-12
        {
            return Err(Error::InvalidConfig("state weights must be PSD".into()));
        }
        if self.r.nrows() == 0 || self.r.clone().cholesky().is_none() {
            return Err(Error::InvalidConfig(
                "control weight r must be positive definite".into(),
            ));
        }
        if !self.periodic.is_empty() && self.periodic.len() != n {
            return Err(Error::InvalidConfig(format!(
                "periodic flags must have length {n}"
            )));
        }
        if !math::all_finite(&self.goal) {
            return Err(Error::NonFinite("goal state"));
        }
        Ok(())
    }

    pub(crate) fn check_dims(&self, state_dim: usize, control_dim: usize) -> Result<()> {
        check_dim("cost state weight", state_dim, self.goal.len())?;
        check_dim("cost control weight", control_dim, self.r.nrows())
    }

    pub fn goal_deviation(&self, x: &DVector<f64>) -> DVector<f64> {
        math::periodic_diff(x, &self.goal, &self.periodic)
    }
}

pub(crate) fn stage_cost_unchecked(x: &DVector<f64>, u: &DVector<f64>, spec: &CostSpec) -> f64 {
    let d = spec.goal_deviation(x);
    d.dot(&(&spec.q * &d)) + 0.5 * u.dot(&(&spec.r * u))
}

pub(crate) fn terminal_cost_unchecked(x: &DVector<f64>, spec: &CostSpec) -> f64 {
    let d = spec.goal_deviation(x);
    d.dot(&(&spec.q_terminal * &d))
}

pub fn stage_cost(x: &DVector<f64>, u: &DVector<f64>, spec: &CostSpec) -> Result<f64> {
    spec.check_dims(x.len(), u.len())?;
    Ok(stage_cost_unchecked(x, u, spec))
}

pub fn terminal_cost(x: &DVector<f64>, spec: &CostSpec) -> Result<f64> {
    check_dim("state", spec.goal.len(), x.len())?;
    Ok(terminal_cost_unchecked(x, spec))
}

/// Sum of stage costs over `t = 1..T−1` plus the terminal cost of `x_T`.
pub fn total_cost(
    states: &[DVector<f64>],
    controls: &[DVector<f64>],
    spec: &CostSpec,
) -> Result<f64> {
    check_dim("trajectory states", controls.len() + 1, states.len())?;
    let mut sum = 0.0;
    for (x, u) in states.iter().zip(controls) {
        sum += stage_cost(x, u, spec)?;
    }
    Ok(sum + terminal_cost(states.last().unwrap(), spec)?)
}

/// Weights of the surrogate LQR problem on the perturbation dynamics,
/// `Σ δx'Q_t δx + δu'R_t δu + δx_T'Q_T δx_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub q_terminal: DMatrix<f64>,
}

impl LqrWeights {
    pub fn constant(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        q_terminal: DMatrix<f64>,
        steps: usize,
    ) -> Self {
        Self {
            q: vec![q; steps],
            r: vec![r; steps],
            q_terminal,
        }
    }

    /// Reuses the task weights, time-invariant.
    pub fn from_cost(cost: &CostSpec, steps: usize) -> Self {
        Self::constant(
            cost.q.clone(),
            cost.r.clone(),
            cost.q_terminal.clone(),
            steps,
        )
    }

    /// Weights under which the LQR objective equals the task's quadratic cost
    /// of a deviation (the task charges `½ u'R u`).
    pub fn matching_task(cost: &CostSpec, steps: usize) -> Self {
        Self::constant(
            cost.q.clone(),
            &cost.r * 0.5,
            cost.q_terminal.clone(),
            steps,
        )
    }

    pub fn steps(&self) -> usize {
        self.q.len()
    }

    pub fn validate(&self) -> Result<()> {
        check_dim("lqr weights r", self.q.len(), self.r.len())?;
        for (t, r) in self.r.iter().enumerate() {
            if !math::is_symmetric(r, 1e-12) || r.clone().cholesky().is_none() {
                return Err(Error::InvalidConfig(format!(
                    "R_{t} is not symmetric positive definite"
                )));
            }
        }
        for q in self.q.iter().chain(core::iter::once(&self.q_terminal)) {
            if !math::is_symmetric(q, 1e-12) || math::min_eigenvalue(q) < -1e-12 {
                return Err(Error::InvalidConfig(
                    "state weights must be symmetric PSD".into(),
                ));
            }
        }
        Ok(())
    }
}

/// A simulator together with the cost it is scored by.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub plant: Plant,
    pub cost: CostSpec,
}

impl Task {
    pub fn new(plant: Plant, cost: CostSpec) -> Result<Self> {
        cost.validate()?;
        cost.check_dims(plant.state_dim(), plant.control_dim())?;
        let mut cost = cost;
        if cost.periodic.is_empty() {
            cost.periodic = vec![false; plant.state_dim()];
        }
        Ok(Self { plant, cost })
    }

    pub fn steps(&self) -> usize {
        self.plant.steps()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn scalar(q: f64, r: f64, qt: f64) -> CostSpec {
        CostSpec::quadratic(&v(&[0.0]), q, r, qt, 1)
    }

    #[test]
    fn zero_at_goal() {
        let c = CostSpec::quadratic(&v(&[1.0, 2.0]), 3.0, 1.0, 5.0, 1);
        assert_eq!(stage_cost(&v(&[1.0, 2.0]), &v(&[0.0]), &c).unwrap(), 0.0);
        assert_eq!(terminal_cost(&v(&[1.0, 2.0]), &c).unwrap(), 0.0);
    }

    #[test]
    fn hand_values() {
        assert_eq!(
            stage_cost(&v(&[3.0]), &v(&[2.0]), &scalar(1.0, 2.0, 0.0)).unwrap(),
            13.0
        );
        assert_eq!(
            terminal_cost(&v(&[0.5]), &scalar(0.0, 1.0, 10.0)).unwrap(),
            2.5
        );
    }

    #[test]
    fn control_term_is_quadratic() {
        let c = scalar(0.0, 1.7, 0.0);
        let a = stage_cost(&v(&[0.0]), &v(&[0.3]), &c).unwrap();
        let b = stage_cost(&v(&[0.0]), &v(&[0.6]), &c).unwrap();
        assert_eq!(b, 4.0 * a);
    }

    #[test]
    fn terminal_cost_is_periodic() {
        let c =
            CostSpec::quadratic(&v(&[PI, 0.0]), 0.0, 1.0, 1.0, 1).with_periodic(vec![true, false]);
        let a = terminal_cost(&v(&[0.4, 0.1]), &c).unwrap();
        let b = terminal_cost(&v(&[0.4 + 2.0 * PI, 0.1]), &c).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn total_cost_by_hand() {
        // Q=1, R=2, Q_T=3; x = 1, 2, 3; u = 1, -1
        // stage: (1 + 1) + (4 + 1) = 7; terminal 27
        let c = scalar(1.0, 2.0, 3.0);
        let xs = [v(&[1.0]), v(&[2.0]), v(&[3.0])];
        let us = [v(&[1.0]), v(&[-1.0])];
        assert_eq!(total_cost(&xs, &us, &c).unwrap(), 34.0);
        assert!(total_cost(&xs[..2], &us, &c).is_err());
    }

    #[test]
    fn validation_catches_bad_weights() {
        let mut c = scalar(1.0, 1.0, 1.0);
        c.r = DMatrix::from_element(1, 1, 0.0);
        assert!(c.validate().is_err());
        let mut c = scalar(1.0, 1.0, 1.0);
        c.q = DMatrix::from_element(1, 1, -1.0);
        assert!(c.validate().is_err());
        assert!(scalar(1.0, 1.0, 1.0).validate().is_ok());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn costs_are_nonnegative_and_control_term_exact(
                x in proptest::collection::vec(-10.0f64..10.0, 2),
                u in proptest::collection::vec(-10.0f64..10.0, 2),
                l in proptest::collection::vec(-2.0f64..2.0, 4),
            ) {
                let lm = DMatrix::from_row_slice(2, 2, &l);
                let r = &lm * lm.transpose() + DMatrix::identity(2, 2) * 0.1;
                let mut c = CostSpec::quadratic(&v(&[0.5, -0.5]), 2.0, 1.0, 3.0, 2)
                    .with_periodic(vec![true, false]);
                c.r = math::symmetrize(&r);
                let x = DVector::from_vec(x);
                let u = DVector::from_vec(u);
                let s = stage_cost(&x, &u, &c).unwrap();
                let t = terminal_cost(&x, &c).unwrap();
                prop_assert!(s >= 0.0 && t >= 0.0);
                let mut explicit = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        explicit += u[i] * c.r[(i, j)] * u[j];
                    }
                }
                let zero_state = stage_cost(&c.goal, &u, &c).unwrap();
                prop_assert!((zero_state - 0.5 * explicit).abs() <= 1e-10 * (1.0 + explicit.abs()));
            }
        }
    }
}
