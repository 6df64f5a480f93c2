//! The decoupled policy `u_t = ū_t + K_t (x_t − x̄_t)` and its executors.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::DVector;
use rand::Rng;

use crate::dynamics::{check_dim, step, Dynamics, NoiseSpec, Trajectory};
use crate::error::{Error, Result};
use crate::lqr::GainSchedule;
use crate::math;
use crate::task::Task;

/// Per-coordinate saturation of the commanded control.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct D2cPolicy {
    pub nominal_controls: Vec<DVector<f64>>,
    pub nominal_states: Vec<DVector<f64>>,
    pub gains: GainSchedule,
    /// Coordinates whose deviation from the nominal is wrapped.
    pub periodic: Vec<bool>,
    /// Off unless set.
    pub bounds: Option<ControlBounds>,
    /// Free-form provenance (seeds, config hashes, artifact digests).
    pub metadata: BTreeMap<String, String>,
}

impl D2cPolicy {
    pub fn new(nominal: &Trajectory, gains: GainSchedule, periodic: Vec<bool>) -> Result<Self> {
        let policy = Self {
            nominal_controls: nominal.controls.clone(),
            nominal_states: nominal.states.clone(),
            gains,
            periodic,
            bounds: None,
            metadata: BTreeMap::new(),
        };
        policy.validate()?;
        Ok(policy)
    }

    /// The nominal plan with all gains zeroed.
    pub fn open_loop(&self) -> Self {
        let mut p = self.clone();
        for k in &mut p.gains.k {
            k.fill(0.0);
        }
        p
    }

    pub fn steps(&self) -> usize {
        self.nominal_controls.len()
    }

    pub fn validate(&self) -> Result<()> {
        let steps = self.steps();
        check_dim("nominal states", steps + 1, self.nominal_states.len())?;
        check_dim("gain schedule", steps, self.gains.k.len())?;
        let nx = self.nominal_states[0].len();
        let nu = self.nominal_controls.first().map_or(0, |u| u.len());
        for k in &self.gains.k {
            check_dim("gain rows", nu, k.nrows())?;
            check_dim("gain cols", nx, k.ncols())?;
            if !k.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("feedback gains"));
            }
        }
        if !self.periodic.is_empty() {
            check_dim("periodic flags", nx, self.periodic.len())?;
        }
        Ok(())
    }

    /// `x − x̄_t`, wrapped on periodic coordinates.
    pub fn deviation(&self, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        let nominal = self.nominal_states.get(t).ok_or(Error::OutOfRange {
            t,
            len: self.nominal_states.len(),
        })?;
        check_dim("state", nominal.len(), x.len())?;
        Ok(math::periodic_diff(x, nominal, &self.periodic))
    }

    /// Control at step `t` (0-based, `t < T−1`).
    pub fn act(&self, t: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        if t >= self.steps() {
            return Err(Error::OutOfRange {
                t,
                len: self.steps(),
            });
        }
        let dx = self.deviation(t, x)?;
        Ok(self.command(t, &dx))
    }

    fn command(&self, t: usize, dx: &DVector<f64>) -> DVector<f64> {
        let mut u = &self.nominal_controls[t] + &self.gains.k[t] * dx;
        if let Some(b) = &self.bounds {
            for i in 0..u.len() {
                u[i] = u[i].clamp(b.lower[i], b.upper[i]);
            }
        }
        u
    }

    /// Checks that the nominal states are the noiseless rollout of the
    /// nominal controls.
    pub fn verify_nominal(&self, task: &Task, tol: f64) -> Result<()> {
        check_dim("policy horizon", task.steps(), self.steps())?;
        if (self.nominal_states[0].clone() - task.plant.x1()).amax() > tol {
            return Err(Error::InvalidConfig(
                "nominal trajectory does not start at x1".into(),
            ));
        }
        let mut x = task.plant.x1().clone();
        for (t, u) in self.nominal_controls.iter().enumerate() {
            x = task.plant.propagate(&x, u);
            if (&x - &self.nominal_states[t + 1]).amax() > tol {
                return Err(Error::InvalidConfig(alloc::format!(
                    "nominal state {} is not reproduced by the nominal controls",
                    t + 1
                )));
            }
        }
        Ok(())
    }
}

/// Closed-loop run with noise drawn from `noise`.
pub fn execute<R: Rng + ?Sized>(
    task: &Task,
    policy: &D2cPolicy,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Trajectory> {
    check_dim(
        "noise covariance",
        task.plant.control_dim(),
        noise.covariance.nrows(),
    )?;
    let noises = noise.sample(rng, task.steps());
    execute_with_noise(task, policy, &noises, true)
}

/// Open-loop run of the nominal controls; same noise draws as [`execute`]
/// for the same seed.
pub fn execute_open_loop<R: Rng + ?Sized>(
    task: &Task,
    policy: &D2cPolicy,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Trajectory> {
    check_dim(
        "noise covariance",
        task.plant.control_dim(),
        noise.covariance.nrows(),
    )?;
    let noises = noise.sample(rng, task.steps());
    execute_with_noise(task, policy, &noises, false)
}

/// Runs `policy` against an explicit noise realization. With `feedback`
/// off the gains are ignored.
pub fn execute_with_noise(
    task: &Task,
    policy: &D2cPolicy,
    noises: &[DVector<f64>],
    feedback: bool,
) -> Result<Trajectory> {
    let steps = task.steps();
    check_dim("policy horizon", steps, policy.steps())?;
    check_dim("noise sequence", steps, noises.len())?;
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut deviations = Vec::with_capacity(steps + 1);
    let mut x = task.plant.x1().clone();
    for t in 0..steps {
        let dx = policy.deviation(t, &x)?;
        let u = if feedback {
            policy.command(t, &dx)
        } else {
            policy.command_open(t)
        };
        let next = match step(&task.plant, &x, &u, &noises[t]) {
            Ok(n) if math::all_finite(&n) => n,
            Ok(_) | Err(Error::NonFinite(_)) => {
                states.push(x);
                deviations.push(dx);
                let mut partial =
                    Trajectory::from_run(states, controls, noises[..t].to_vec(), &task.cost);
                partial.deviations = deviations;
                return Err(Error::Truncated {
                    step: t,
                    partial: Box::new(partial),
                });
            }
            Err(e) => return Err(e),
        };
        states.push(x);
        controls.push(u);
        deviations.push(dx);
        x = next;
    }
    deviations.push(policy.deviation(steps, &x)?);
    states.push(x);
    let mut traj = Trajectory::from_run(states, controls, noises.to_vec(), &task.cost);
    traj.deviations = deviations;
    Ok(traj)
}

impl D2cPolicy {
    fn command_open(&self, t: usize) -> DVector<f64> {
        let mut u = self.nominal_controls[t].clone();
        if let Some(b) = &self.bounds {
            for i in 0..u.len() {
                u[i] = u[i].clamp(b.lower[i], b.upper[i]);
            }
        }
        u
    }
}
