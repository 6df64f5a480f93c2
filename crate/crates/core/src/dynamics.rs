//! Black-box simulators with control-affine noise.
//!
//! Every system advances as `x_{t+1} = f(x_t) + B_t (u_t + ε w_t)`: process
//! noise only ever enters through the control channel. The built-in systems
//! also expose closed-form Jacobians of their discrete update map, which the
//! identification tests use as ground truth.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::sysid::LtvModel;
use crate::task::{self, CostSpec};

/// Discrete-time transition map of a simulator.
pub trait Dynamics: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Next state for the effective control `u` (commanded control plus
    /// noise). No validation; see [`step`].
    fn propagate(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// `(∂f/∂x, ∂f/∂u)` of [`Dynamics::propagate`] at `(x, u)`.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);

    /// Whether the simulator can be started from an arbitrary state.
    fn supports_state_reset(&self) -> bool {
        true
    }
}

/// Validated single transition. `noise` is the already-scaled `ε w_t`.
pub fn step<D: Dynamics + ?Sized>(
    sys: &D,
    x: &DVector<f64>,
    u: &DVector<f64>,
    noise: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("state", sys.state_dim(), x.len())?;
    check_dim("control", sys.control_dim(), u.len())?;
    check_dim("noise", sys.control_dim(), noise.len())?;
    if !math::all_finite(x) {
        return Err(Error::NonFinite("state"));
    }
    if !math::all_finite(u) || !math::all_finite(noise) {
        return Err(Error::NonFinite("control"));
    }
    Ok(sys.propagate(x, &(u + noise)))
}

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Torque-driven pendulum, `θ = 0` hanging down, `θ = π` upright.
///
/// `m l² θ̈ = u − b θ̇ − m g l sin θ`, semi-implicit Euler. State `[θ, θ̇]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pendulum {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub dt: f64,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.1,
            dt: 0.1,
        }
    }
}

impl Pendulum {
    fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    /// Total mechanical energy, zero at the bottom rest position.
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.inertia() * x[1] * x[1]
            + self.mass * self.gravity * self.length * (1.0 - math::cos(x[0]))
    }
}

impl Dynamics for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn propagate(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (theta, omega) = (x[0], x[1]);
        let acc = (u[0]
            - self.damping * omega
            - self.mass * self.gravity * self.length * math::sin(theta))
            / self.inertia();
        let omega_next = omega + self.dt * acc;
        DVector::from_vec(alloc::vec![theta + self.dt * omega_next, omega_next])
    }

    fn jacobians(&self, x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let i = self.inertia();
        let d_acc_theta = -self.mass * self.gravity * self.length * math::cos(x[0]) / i;
        let d_acc_omega = -self.damping / i;
        let d_acc_u = 1.0 / i;
        // rows: ω' = ω + dt·acc, θ' = θ + dt·ω'
        let w_theta = dt * d_acc_theta;
        let w_omega = 1.0 + dt * d_acc_omega;
        let a =
            DMatrix::from_row_slice(2, 2, &[1.0 + dt * w_theta, dt * w_omega, w_theta, w_omega]);
        let b = DMatrix::from_row_slice(2, 1, &[dt * dt * d_acc_u, dt * d_acc_u]);
        (a, b)
    }
}

/// Frictionless cart-pole with a horizontal force on the cart.
///
/// State `[x, θ, ẋ, θ̇]` with `θ = 0` hanging down and `θ = π` upright; the
/// pole is a uniform rod of half-length `half_length`. Semi-implicit Euler.
#[derive(Debug, Clone, PartialEq)]
pub struct CartPole {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub half_length: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for CartPole {
    fn default() -> Self {
        Self {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.81,
            dt: 0.1,
        }
    }
}

/// Accelerations and their partials w.r.t. (θ, θ̇, F).
struct CartPoleAccel {
    pole: f64,
    cart: f64,
    d_pole: [f64; 3],
    d_cart: [f64; 3],
}

impl CartPole {
    fn accel(&self, theta: f64, omega: f64, force: f64) -> CartPoleAccel {
        let (mp, l, g) = (self.pole_mass, self.half_length, self.gravity);
        let total = self.cart_mass + mp;
        // Angle measured from upright in the classic form: φ = θ − π.
        let s = -math::sin(theta);
        let c = -math::cos(theta);
        // d s/dθ = c, d c/dθ = −s
        let temp = (force + mp * l * omega * omega * s) / total;
        let d_temp = [
            mp * l * omega * omega * c / total,
            2.0 * mp * l * omega * s / total,
            1.0 / total,
        ];
        let den = l * (4.0 / 3.0 - mp * c * c / total);
        let d_den_theta = 2.0 * l * mp * c * s / total;
        let num = g * s - c * temp;
        let d_num = [
            g * c + s * temp - c * d_temp[0],
            -c * d_temp[1],
            -c * d_temp[2],
        ];
        let pole = num / den;
        let d_pole = [
            (d_num[0] * den - num * d_den_theta) / (den * den),
            d_num[1] / den,
            d_num[2] / den,
        ];
        let k = mp * l / total;
        let cart = temp - k * pole * c;
        let d_cart = [
            d_temp[0] - k * (d_pole[0] * c - pole * s),
            d_temp[1] - k * d_pole[1] * c,
            d_temp[2] - k * d_pole[2] * c,
        ];
        CartPoleAccel {
            pole,
            cart,
            d_pole,
            d_cart,
        }
    }
}

impl Dynamics for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn propagate(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let acc = self.accel(x[1], x[3], u[0]);
        let v = x[2] + self.dt * acc.cart;
        let omega = x[3] + self.dt * acc.pole;
        DVector::from_vec(alloc::vec![
            x[0] + self.dt * v,
            x[1] + self.dt * omega,
            v,
            omega
        ])
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let acc = self.accel(x[1], x[3], u[0]);
        let [p_th, p_om, p_f] = acc.d_pole;
        let [c_th, c_om, c_f] = acc.d_cart;
        // v' row and ω' row, then positions integrate the new velocities.
        let v_row = [0.0, dt * c_th, 1.0, dt * c_om];
        let w_row = [0.0, dt * p_th, 0.0, 1.0 + dt * p_om];
        let mut a = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let e = if j == 0 { 1.0 } else { 0.0 };
            let f = if j == 1 { 1.0 } else { 0.0 };
            a[(0, j)] = e + dt * v_row[j];
            a[(1, j)] = f + dt * w_row[j];
            a[(2, j)] = v_row[j];
            a[(3, j)] = w_row[j];
        }
        let b = DMatrix::from_row_slice(4, 1, &[dt * dt * c_f, dt * dt * p_f, dt * c_f, dt * p_f]);
        (a, b)
    }
}

/// `x_{t+1} = A x_t + B u_t` with constant matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Dynamics for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn propagate(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    Pendulum,
    CartPole,
    Linear,
}

impl SystemKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "pendulum" => Some(Self::Pendulum),
            "cartpole" | "cart_pole" | "cart-pole" => Some(Self::CartPole),
            "linear" => Some(Self::Linear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Pendulum => "pendulum",
            Self::CartPole => "cartpole",
            Self::Linear => "linear",
        }
    }
}

/// Everything needed to build a simulator and start an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    pub horizon: usize,
    pub dt: f64,
    pub params: BTreeMap<String, f64>,
    pub x1: DVector<f64>,
    /// Linear system matrices; ignored by the nonlinear systems.
    pub a: Option<DMatrix<f64>>,
    pub b: Option<DMatrix<f64>>,
}

impl SystemSpec {
    pub fn pendulum(horizon: usize, dt: f64) -> Self {
        let p = Pendulum::default();
        let params = [
            ("mass", p.mass),
            ("length", p.length),
            ("gravity", p.gravity),
            ("damping", p.damping),
        ];
        Self {
            name: "pendulum".into(),
            horizon,
            dt,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            x1: DVector::zeros(2),
            a: None,
            b: None,
        }
    }

    pub fn cartpole(horizon: usize, dt: f64) -> Self {
        let p = CartPole::default();
        let params = [
            ("cart_mass", p.cart_mass),
            ("pole_mass", p.pole_mass),
            ("half_length", p.half_length),
            ("gravity", p.gravity),
        ];
        Self {
            name: "cartpole".into(),
            horizon,
            dt,
            params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            x1: DVector::zeros(4),
            a: None,
            b: None,
        }
    }

    pub fn linear(a: DMatrix<f64>, b: DMatrix<f64>, horizon: usize, x1: DVector<f64>) -> Self {
        Self {
            name: "linear".into(),
            horizon,
            dt: 1.0,
            params: BTreeMap::new(),
            x1,
            a: Some(a),
            b: Some(b),
        }
    }

    pub fn kind(&self) -> Result<SystemKind> {
        SystemKind::from_name(&self.name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown system '{}'", self.name)))
    }

    fn param(&self, key: &str, default: f64) -> Result<f64> {
        let v = self.params.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "parameter '{key}' is not finite"
            )));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Builtin {
    Pendulum(Pendulum),
    CartPole(CartPole),
    Linear(LinearSystem),
}

/// A validated [`SystemSpec`] together with its transition map.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    spec: SystemSpec,
    system: Builtin,
}

impl Plant {
    pub fn new(spec: SystemSpec) -> Result<Self> {
        if spec.horizon < 2 {
            return Err(Error::InvalidConfig("horizon must be at least 2".into()));
        }
        if !(spec.dt > 0.0 && spec.dt.is_finite()) {
            return Err(Error::InvalidConfig("dt must be positive".into()));
        }
        if !math::all_finite(&spec.x1) {
            return Err(Error::NonFinite("initial state"));
        }
        let system = match spec.kind()? {
            SystemKind::Pendulum => {
                let d = Pendulum::default();
                let p = Pendulum {
                    mass: spec.param("mass", d.mass)?,
                    length: spec.param("length", d.length)?,
                    gravity: spec.param("gravity", d.gravity)?,
                    damping: spec.param("damping", d.damping)?,
                    dt: spec.dt,
                };
                if p.mass <= 0.0 || p.length <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "pendulum mass and length must be positive".into(),
                    ));
                }
                Builtin::Pendulum(p)
            }
            SystemKind::CartPole => {
                let d = CartPole::default();
                let p = CartPole {
                    cart_mass: spec.param("cart_mass", d.cart_mass)?,
                    pole_mass: spec.param("pole_mass", d.pole_mass)?,
                    half_length: spec.param("half_length", d.half_length)?,
                    gravity: spec.param("gravity", d.gravity)?,
                    dt: spec.dt,
                };
                if p.cart_mass <= 0.0 || p.pole_mass <= 0.0 || p.half_length <= 0.0 {
                    return Err(Error::InvalidConfig(
                        "cart-pole masses and length must be positive".into(),
                    ));
                }
                Builtin::CartPole(p)
            }
            SystemKind::Linear => {
                let (a, b) = match (&spec.a, &spec.b) {
                    (Some(a), Some(b)) => (a.clone(), b.clone()),
                    _ => {
                        return Err(Error::InvalidConfig(
                            "linear system needs matrices a and b".into(),
                        ))
                    }
                };
                if !a.is_square() {
                    return Err(Error::InvalidConfig("matrix a must be square".into()));
                }
                check_dim("b rows", a.nrows(), b.nrows())?;
                if a.nrows() == 0 || b.ncols() == 0 {
                    return Err(Error::InvalidConfig(
                        "state and control dimensions must be positive".into(),
                    ));
                }
                if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("linear system matrices"));
                }
                Builtin::Linear(LinearSystem { a, b })
            }
        };
        let plant = Self { spec, system };
        check_dim("initial state", plant.state_dim(), plant.spec.x1.len())?;
        Ok(plant)
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn horizon(&self) -> usize {
        self.spec.horizon
    }

    /// Number of control steps, `T − 1`.
    pub fn steps(&self) -> usize {
        self.spec.horizon - 1
    }

    pub fn x1(&self) -> &DVector<f64> {
        &self.spec.x1
    }

    pub fn kind(&self) -> SystemKind {
        match self.system {
            Builtin::Pendulum(_) => SystemKind::Pendulum,
            Builtin::CartPole(_) => SystemKind::CartPole,
            Builtin::Linear(_) => SystemKind::Linear,
        }
    }

    pub fn as_pendulum(&self) -> Option<&Pendulum> {
        match &self.system {
            Builtin::Pendulum(p) => Some(p),
            _ => None,
        }
    }

    /// A simulator positioned at the initial state.
    pub fn simulator(&self) -> Simulator<'_> {
        Simulator {
            plant: self,
            state: self.spec.x1.clone(),
        }
    }
}

impl Dynamics for Plant {
    fn state_dim(&self) -> usize {
        match &self.system {
            Builtin::Pendulum(p) => p.state_dim(),
            Builtin::CartPole(p) => p.state_dim(),
            Builtin::Linear(p) => p.state_dim(),
        }
    }

    fn control_dim(&self) -> usize {
        match &self.system {
            Builtin::Pendulum(p) => p.control_dim(),
            Builtin::CartPole(p) => p.control_dim(),
            Builtin::Linear(p) => p.control_dim(),
        }
    }

    fn propagate(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        match &self.system {
            Builtin::Pendulum(p) => p.propagate(x, u),
            Builtin::CartPole(p) => p.propagate(x, u),
            Builtin::Linear(p) => p.propagate(x, u),
        }
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        match &self.system {
            Builtin::Pendulum(p) => p.jacobians(x, u),
            Builtin::CartPole(p) => p.jacobians(x, u),
            Builtin::Linear(p) => p.jacobians(x, u),
        }
    }
}

/// A plant plus a current state.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    plant: &'a Plant,
    state: DVector<f64>,
}

impl Simulator<'_> {
    pub fn state(&self) -> &DVector<f64> {
        &self.state
    }

    pub fn set_state(&mut self, state: DVector<f64>) -> Result<()> {
        check_dim("state", self.plant.state_dim(), state.len())?;
        self.state = state;
        Ok(())
    }

    pub fn step(&mut self, u: &DVector<f64>, noise: &DVector<f64>) -> Result<&DVector<f64>> {
        self.state = step(self.plant, &self.state, u, noise)?;
        Ok(&self.state)
    }
}

/// Control-channel noise `ε w_t`, `w_t ~ N(0, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub epsilon: f64,
    pub covariance: DMatrix<f64>,
}

impl NoiseSpec {
    pub fn new(epsilon: f64, covariance: DMatrix<f64>) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(
                "epsilon must be a finite nonnegative number".into(),
            ));
        }
        if !math::is_symmetric(&covariance, 1e-12) || math::min_eigenvalue(&covariance) < -1e-12 {
            return Err(Error::InvalidConfig(
                "noise covariance must be symmetric PSD".into(),
            ));
        }
        Ok(Self {
            epsilon,
            covariance,
        })
    }

    pub fn isotropic(epsilon: f64, control_dim: usize) -> Self {
        Self {
            epsilon,
            covariance: DMatrix::identity(control_dim, control_dim),
        }
    }

    pub fn noiseless(control_dim: usize) -> Self {
        Self::isotropic(0.0, control_dim)
    }

    /// Matrix mapping standard normal draws to `ε w`.
    pub fn scale_matrix(&self) -> DMatrix<f64> {
        math::psd_sqrt(&self.covariance) * self.epsilon
    }

    /// Draws `steps` realizations of `ε w_t` in order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, steps: usize) -> Vec<DVector<f64>> {
        let n = self.covariance.nrows();
        let l = self.scale_matrix();
        (0..steps)
            .map(|_| &l * math::standard_normal_vec(rng, n))
            .collect()
    }
}

/// One episode: states `x_1..x_T`, controls and applied noises for `1..T−1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// Applied `ε w_t`; zeros for noiseless rollouts.
    pub noises: Vec<DVector<f64>>,
    pub stage_costs: Vec<f64>,
    pub terminal_cost: f64,
    pub total_cost: f64,
    /// `x_t − x̄_t` against a policy's nominal, when produced by a policy.
    pub deviations: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn terminal_state(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("trajectory has at least one state")
    }

    pub(crate) fn from_run(
        states: Vec<DVector<f64>>,
        controls: Vec<DVector<f64>>,
        noises: Vec<DVector<f64>>,
        cost: &CostSpec,
    ) -> Self {
        let stage_costs: Vec<f64> = states
            .iter()
            .zip(&controls)
            .map(|(x, u)| task::stage_cost_unchecked(x, u, cost))
            .collect();
        let terminal_cost = if states.len() > controls.len() {
            task::terminal_cost_unchecked(states.last().unwrap(), cost)
        } else {
            0.0
        };
        let total_cost = stage_costs.iter().sum::<f64>() + terminal_cost;
        Self {
            states,
            controls,
            noises,
            stage_costs,
            terminal_cost,
            total_cost,
            deviations: Vec::new(),
        }
    }
}

/// Simulates `controls` from `x_1` with noise drawn from `noise`.
pub fn rollout<R: Rng + ?Sized>(
    plant: &Plant,
    cost: &CostSpec,
    controls: &[DVector<f64>],
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Trajectory> {
    check_dim(
        "noise covariance",
        plant.control_dim(),
        noise.covariance.nrows(),
    )?;
    let noises = noise.sample(rng, plant.steps());
    rollout_with_noise(plant, cost, controls, &noises)
}

/// Simulates `controls` with an explicit noise realization.
pub fn rollout_with_noise(
    plant: &Plant,
    cost: &CostSpec,
    controls: &[DVector<f64>],
    noises: &[DVector<f64>],
) -> Result<Trajectory> {
    check_dim("control sequence", plant.steps(), controls.len())?;
    check_dim("noise sequence", plant.steps(), noises.len())?;
    cost.check_dims(plant.state_dim(), plant.control_dim())?;
    let mut states = Vec::with_capacity(plant.horizon());
    states.push(plant.x1().clone());
    for (u, w) in controls.iter().zip(noises) {
        let next = step(plant, states.last().unwrap(), u, w)?;
        states.push(next);
    }
    Ok(Trajectory::from_run(
        states,
        controls.to_vec(),
        noises.to_vec(),
        cost,
    ))
}

/// Exact Jacobians of the transition map along `nominal`.
pub fn analytic_ltv<D: Dynamics + ?Sized>(sys: &D, nominal: &Trajectory) -> Result<LtvModel> {
    check_dim(
        "nominal states",
        nominal.controls.len() + 1,
        nominal.states.len(),
    )?;
    let (a, b) = nominal
        .states
        .iter()
        .zip(&nominal.controls)
        .map(|(x, u)| {
            check_dim("state", sys.state_dim(), x.len())?;
            check_dim("control", sys.control_dim(), u.len())?;
            Ok(sys.jacobians(x, u))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(LtvModel { a, b })
}
