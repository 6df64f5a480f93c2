//! Monte-Carlo evaluation against closed forms on the linear reference
//! system, where the closed loop is exactly linear-Gaussian.

mod common;

use common::linear_task;
use d2c_core::{
    analytic_linear_cost, analytic_ltv, execute_with_noise, monte_carlo_eval, nominal_trajectory,
    perturbation_linearity_check, solve_riccati, ControlSequence, CostSpec, D2cPolicy, DMatrix,
    DVector, EvalConfig, EvalMode, GainSchedule, LqrWeights, LtvModel, NoiseSpec, Plant,
    Sequential, SystemSpec, Task,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Task, LQR policy whose nominal is its own noiseless closed loop, model
/// and the weights under which the analytic cost equals the task cost.
fn lqr_setup() -> (Task, D2cPolicy, LtvModel, LqrWeights) {
    let task = linear_task();
    let zero = nominal_trajectory(&task, &ControlSequence::zeros(task.steps(), 1)).unwrap();
    let model = analytic_ltv(&task.plant, &zero).unwrap();
    let weights = LqrWeights::matching_task(&task.cost, task.steps());
    let gains = solve_riccati(&model, &weights).unwrap();
    let mut x = task.plant.x1().clone();
    let mut u = Vec::new();
    for t in 0..task.steps() {
        let ut = &gains.k[t] * &x;
        x = &model.a[t] * &x + &model.b[t] * &ut;
        u.push(ut);
    }
    let nominal = nominal_trajectory(&task, &ControlSequence::new(u)).unwrap();
    let policy = D2cPolicy::new(&nominal, gains, vec![false; 2]).unwrap();
    (task, policy, model, weights)
}

#[test]
fn monte_carlo_mean_matches_analytic_cost() {
    let (task, policy, model, weights) = lqr_setup();
    let cfg = EvalConfig::with_rollouts(4000);
    for (i, eps) in [0.1, 0.3, 1.0].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(20 + i as u64);
        let rep = monte_carlo_eval(
            &task,
            &policy,
            eps,
            &cfg,
            EvalMode::Closed,
            &mut rng,
            &Sequential,
        )
        .unwrap();
        let exact = analytic_linear_cost(
            &model,
            &policy.gains,
            &weights,
            eps,
            &DMatrix::identity(1, 1),
            task.plant.x1(),
        )
        .unwrap();
        let z = (rep.mean_cost - exact).abs() / rep.std_error;
        assert!(z < 3.0, "eps {eps}: {} vs {exact}, z {z}", rep.mean_cost);
    }
}

#[test]
fn doubling_rollouts_shrinks_standard_error_by_root_two() {
    let (task, policy, _, _) = lqr_setup();
    let mut ratios = 0.0;
    for seed in 0..10 {
        let se = |m: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let cfg = EvalConfig::with_rollouts(m);
            monte_carlo_eval(
                &task,
                &policy,
                0.5,
                &cfg,
                EvalMode::Closed,
                &mut rng,
                &Sequential,
            )
            .unwrap()
            .std_error
        };
        ratios += se(2000) / se(1000);
    }
    let ratio = ratios / 10.0;
    assert!((0.6..=0.85).contains(&ratio), "ratio {ratio}");
}

#[test]
fn recorded_noise_replays_to_the_same_cost() {
    let (task, policy, model, _) = lqr_setup();
    let noise = NoiseSpec::isotropic(0.1, 1);
    let noises = noise.sample(&mut ChaCha8Rng::seed_from_u64(5), task.steps());
    let traj = execute_with_noise(&task, &policy, &noises, true).unwrap();

    let (q, r, qt) = (&task.cost.q, &task.cost.r, &task.cost.q_terminal);
    let mut x = task.plant.x1().clone();
    let mut cost = 0.0;
    for t in 0..task.steps() {
        let u = &policy.nominal_controls[t] + &policy.gains.k[t] * (&x - &policy.nominal_states[t]);
        cost += x.dot(&(q * &x)) + 0.5 * u.dot(&(r * &u));
        x = &model.a[t] * &x + &model.b[t] * (u + &traj.noises[t]);
    }
    cost += x.dot(&(qt * &x));
    assert!(
        (cost - traj.total_cost).abs() < 1e-9,
        "{cost} vs {}",
        traj.total_cost
    );
}

#[test]
fn linear_system_has_no_linearization_residual() {
    let (task, policy, model, _) = lqr_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = EvalConfig::with_rollouts(200);
    let grid = [0.0125, 0.025, 0.05, 0.1, 1.0];
    let rep =
        perturbation_linearity_check(&task, &policy, &model, &grid, &cfg, &mut rng, &Sequential)
            .unwrap();
    for (eps, r) in grid.iter().zip(&rep.max_residual) {
        assert!(*r <= 1e-10, "eps {eps}: {r}");
    }
}

#[test]
fn noiseless_closed_loop_reproduces_pendulum_nominal() {
    let plant = Plant::new(SystemSpec::pendulum(30, 0.1)).unwrap();
    let cost = CostSpec::quadratic(
        &DVector::from_vec(vec![core::f64::consts::PI, 0.0]),
        0.1,
        0.1,
        100.0,
        1,
    )
    .with_periodic(vec![true, false]);
    let task = Task::new(plant, cost).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let u: Vec<_> = (0..task.steps())
        .map(|_| DVector::from_element(1, rng.random_range(-3.0..3.0)))
        .collect();
    let nominal = nominal_trajectory(&task, &ControlSequence::new(u)).unwrap();
    let model = analytic_ltv(&task.plant, &nominal).unwrap();
    let gains = solve_riccati(&model, &LqrWeights::from_cost(&task.cost, task.steps())).unwrap();
    let policy = D2cPolicy::new(&nominal, gains, vec![true, false]).unwrap();
    let zeros = vec![DVector::zeros(1); task.steps()];
    let traj = execute_with_noise(&task, &policy, &zeros, true).unwrap();
    for (a, b) in traj.states.iter().zip(&nominal.states) {
        assert!((a - b).amax() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn report_statistics_are_well_formed(seed in any::<u64>(), eps in 0.0f64..2.0) {
        let (task, policy, _, _) = lqr_setup();
        let cfg = EvalConfig::with_rollouts(50);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rep = monte_carlo_eval(&task, &policy, eps, &cfg, EvalMode::Closed, &mut rng, &Sequential).unwrap();
        prop_assert!(rep.cost_variance >= 0.0 && rep.terminal_mse >= 0.0);
        prop_assert!((0.0..=1.0).contains(&rep.divergence_fraction));
        prop_assert_eq!(rep.rollouts, 50);
    }

    #[test]
    fn zero_noise_gives_zero_variance(seed in any::<u64>()) {
        let (task, policy, _, _) = lqr_setup();
        let cfg = EvalConfig::with_rollouts(10);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rep = monte_carlo_eval(&task, &policy, 0.0, &cfg, EvalMode::Closed, &mut rng, &Sequential).unwrap();
        prop_assert_eq!(rep.cost_variance, 0.0);
        let nominal = nominal_trajectory(&task, &ControlSequence::new(policy.nominal_controls.clone())).unwrap();
        prop_assert!((rep.mean_cost - nominal.total_cost).abs() <= 1e-12 * nominal.total_cost);
    }

    #[test]
    fn zero_gains_make_closed_and_open_loop_identical(seed in any::<u64>()) {
        let (task, mut policy, _, _) = lqr_setup();
        policy.gains = GainSchedule::zeros(task.steps(), 2, 1);
        let noises = NoiseSpec::isotropic(0.3, 1).sample(&mut ChaCha8Rng::seed_from_u64(seed), task.steps());
        let closed = execute_with_noise(&task, &policy, &noises, true).unwrap();
        let open = execute_with_noise(&task, &policy, &noises, false).unwrap();
        prop_assert_eq!(closed.states, open.states);
    }
}
