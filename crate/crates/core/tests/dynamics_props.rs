//! Properties of the simulators and the cost over random states.

use d2c_core::{stage_cost, step, CostSpec, DVector, Dynamics, Plant, SystemSpec};
use proptest::prelude::*;

fn fd_error(plant: &Plant, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let (ja, jb) = plant.jacobians(x, u);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut e = DVector::zeros(x.len());
        e[i] = h;
        let col = (plant.propagate(&(x + &e), u) - plant.propagate(&(x - &e), u)) / (2.0 * h);
        worst = worst.max((col - ja.column(i)).amax());
    }
    for i in 0..u.len() {
        let mut e = DVector::zeros(u.len());
        e[i] = h;
        let col = (plant.propagate(x, &(u + &e)) - plant.propagate(x, &(u - &e))) / (2.0 * h);
        worst = worst.max((col - jb.column(i)).amax());
    }
    worst
}

proptest! {
    #[test]
    fn pendulum_jacobians_match_central_differences(
        th in -4.0f64..4.0, om in -5.0f64..5.0, u in -10.0f64..10.0,
    ) {
        let p = Plant::new(SystemSpec::pendulum(30, 0.1)).unwrap();
        let e = fd_error(&p, &DVector::from_vec(vec![th, om]), &DVector::from_element(1, u));
        prop_assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn cartpole_jacobians_match_central_differences(
        s in proptest::collection::vec(-3.0f64..3.0, 4), u in -10.0f64..10.0,
    ) {
        let p = Plant::new(SystemSpec::cartpole(30, 0.1)).unwrap();
        let e = fd_error(&p, &DVector::from_vec(s), &DVector::from_element(1, u));
        prop_assert!(e < 1e-5, "{e}");
    }

    #[test]
    fn noise_enters_like_extra_control(
        th in -4.0f64..4.0, om in -5.0f64..5.0, u in -10.0f64..10.0, w in -3.0f64..3.0,
    ) {
        let p = Plant::new(SystemSpec::pendulum(30, 0.1)).unwrap();
        let x = DVector::from_vec(vec![th, om]);
        let a = step(&p, &x, &DVector::from_element(1, u), &DVector::from_element(1, w)).unwrap();
        let b = step(&p, &x, &DVector::from_element(1, u + w), &DVector::zeros(1)).unwrap();
        prop_assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn periodic_angle_cost_ignores_full_turns(th in -4.0f64..4.0, om in -5.0f64..5.0, k in -3i32..3) {
        let goal = DVector::from_vec(vec![core::f64::consts::PI, 0.0]);
        let c = CostSpec::quadratic(&goal, 0.1, 0.1, 100.0, 1).with_periodic(vec![true, false]);
        let u = DVector::from_element(1, 0.3);
        let x = DVector::from_vec(vec![th, om]);
        let turned = DVector::from_vec(vec![th + 2.0 * core::f64::consts::PI * k as f64, om]);
        let (a, b) = (stage_cost(&x, &u, &c).unwrap(), stage_cost(&turned, &u, &c).unwrap());
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }
}
