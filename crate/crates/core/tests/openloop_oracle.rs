//! Zeroth-order gradient and descent checked against closed forms.

mod common;

use common::{linear_task, random_pd};
use d2c_core::{
    analytic_ltv, estimate_cost_and_gradient, nominal_trajectory, optimize, solve_riccati,
    ControlSequence, DMatrix, DVector, GradEstimatorConfig, LqrWeights, Objective, Result,
    Sequential,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `J(u) = (u − c)'H(u − c)` over a single control step of dimension `n`.
struct Quadratic {
    h: DMatrix<f64>,
    c: DVector<f64>,
}

impl Objective for Quadratic {
    fn control_dim(&self) -> usize {
        self.c.len()
    }
    fn steps(&self) -> usize {
        1
    }
    fn cost(&self, u: &[DVector<f64>]) -> Result<f64> {
        let d = &u[0] - &self.c;
        Ok(d.dot(&(&self.h * &d)))
    }
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

#[test]
fn gradient_estimate_aligns_with_analytic_gradient() {
    let cfg = GradEstimatorConfig {
        sigma_du: 1e-3,
        rollouts: 2000,
        ..GradEstimatorConfig::default()
    };
    let mut total = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obj = Quadratic {
            h: random_pd(&mut rng, 10, 0.1),
            c: DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0)),
        };
        let u = DVector::from_fn(10, |_, _| rng.random_range(-1.0..1.0));
        let exact = &obj.h * (&u - &obj.c) * 2.0;
        let est = estimate_cost_and_gradient(
            &obj,
            &ControlSequence::new(vec![u]),
            &cfg,
            &mut rng,
            &Sequential,
        )
        .unwrap();
        total += cosine(&est.flat(), &exact);
    }
    let mean = total / 20.0;
    assert!(mean > 0.95, "mean cosine {mean}");
}

#[test]
fn descent_reaches_riccati_optimum_on_linear_system() {
    let task = linear_task();
    let cfg = GradEstimatorConfig {
        sigma_du: 1e-4,
        rollouts: 20,
        alpha: 0.05,
        decay: 1.0,
        max_iters: 3000,
        tol: 1e-9,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let u0 = ControlSequence::zeros(task.steps(), 1);
    let res = optimize(&task, u0, &cfg, &mut rng, &Sequential).unwrap();
    let cost = nominal_trajectory(&task, &res.controls).unwrap().total_cost;

    // The deterministic optimum of a linear-quadratic problem is x1'P1x1.
    let traj = nominal_trajectory(&task, &ControlSequence::zeros(task.steps(), 1)).unwrap();
    let model = analytic_ltv(&task.plant, &traj).unwrap();
    let gains =
        solve_riccati(&model, &LqrWeights::matching_task(&task.cost, task.steps())).unwrap();
    let x1 = task.plant.x1();
    let optimum = x1.dot(&(&gains.p[0] * x1));
    assert!(cost >= optimum - 1e-9);
    assert!((cost - optimum) / optimum < 0.02, "{cost} vs {optimum}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn estimator_is_reproducible_and_finite(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obj = Quadratic { h: random_pd(&mut rng, 3, 0.1), c: DVector::zeros(3) };
        let u = ControlSequence::new(vec![DVector::from_element(3, 0.5)]);
        let cfg = GradEstimatorConfig { rollouts: 50, ..GradEstimatorConfig::default() };
        let a = estimate_cost_and_gradient(&obj, &u, &cfg, &mut ChaCha8Rng::seed_from_u64(seed), &Sequential).unwrap();
        let b = estimate_cost_and_gradient(&obj, &u, &cfg, &mut ChaCha8Rng::seed_from_u64(seed), &Sequential).unwrap();
        prop_assert!(a.flat().iter().all(|g| g.is_finite()));
        prop_assert_eq!(a, b);
    }
}
