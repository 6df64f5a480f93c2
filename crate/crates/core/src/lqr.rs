//! Finite-horizon time-varying LQR by backward Riccati recursion.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::dynamics::check_dim;
use crate::error::{Error, Result};
use crate::math;
use crate::sysid::LtvModel;
use crate::task::LqrWeights;

/// Feedback gains `K_t` (`t = 1..T−1`) and value matrices `P_t` (`t = 1..T`).
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub k: Vec<DMatrix<f64>>,
    pub p: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    pub fn zeros(steps: usize, state_dim: usize, control_dim: usize) -> Self {
        Self {
            k: alloc::vec![DMatrix::zeros(control_dim, state_dim); steps],
            p: alloc::vec![DMatrix::zeros(state_dim, state_dim); steps + 1],
        }
    }

    pub fn steps(&self) -> usize {
        self.k.len()
    }
}

/// Solves the LQR problem for `δx_{t+1} = A_t δx_t + B_t δu_t` with stage
/// cost `δx'Q_t δx + δu'R_t δu` and terminal cost `δx'Q_T δx`.
///
/// `P_T = Q_T`, then backwards
/// `K_t = −(R_t + B_t'P_{t+1}B_t)⁻¹ B_t'P_{t+1}A_t` and
/// `P_t = Q_t + A_t'P_{t+1}A_t + A_t'P_{t+1}B_t K_t`, symmetrized each step.
/// The noise level never enters.
pub fn solve_riccati(model: &LtvModel, weights: &LqrWeights) -> Result<GainSchedule> {
    model.validate()?;
    weights.validate()?;
    let steps = model.steps();
    check_dim("lqr weights horizon", steps, weights.steps())?;
    let (n, m) = (model.state_dim(), model.control_dim());
    check_dim("terminal weight", n, weights.q_terminal.nrows())?;

    let mut k = alloc::vec![DMatrix::zeros(m, n); steps];
    let mut p = alloc::vec![DMatrix::zeros(n, n); steps + 1];
    p[steps] = math::symmetrize(&weights.q_terminal);
    for t in (0..steps).rev() {
        let (a, b) = (&model.a[t], &model.b[t]);
        check_dim("Q_t", n, weights.q[t].nrows())?;
        check_dim("R_t", m, weights.r[t].nrows())?;
        let pn = &p[t + 1];
        let bt_p = b.transpose() * pn;
        let s = math::symmetrize(&(&weights.r[t] + &bt_p * b));
        let chol = s.cholesky().ok_or(Error::Synthesis { t })?;
        let kt = -chol.solve(&(&bt_p * a));
        let at_p = a.transpose() * pn;
        let pt = &weights.q[t] + &at_p * a + &at_p * b * &kt;
        if !kt.iter().chain(pt.iter()).all(|v| v.is_finite()) {
            return Err(Error::Synthesis { t });
        }
        p[t] = math::symmetrize(&pt);
        k[t] = kt;
    }
    Ok(GainSchedule { k, p })
}

/// `Ā_t = A_t + B_t K_t`.
pub fn closed_loop_matrices(model: &LtvModel, gains: &GainSchedule) -> Result<Vec<DMatrix<f64>>> {
    check_dim("gain schedule", model.steps(), gains.steps())?;
    model
        .a
        .iter()
        .zip(&model.b)
        .zip(&gains.k)
        .map(|((a, b), k)| {
            check_dim("gain rows", b.ncols(), k.nrows())?;
            check_dim("gain cols", a.ncols(), k.ncols())?;
            Ok(a + b * k)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_two_step_by_hand() {
        let model = LtvModel::constant(s(1.0), s(1.0), 1);
        let w = LqrWeights::constant(s(1.0), s(1.0), s(1.0), 1);
        let g = solve_riccati(&model, &w).unwrap();
        assert_eq!(g.p[1], s(1.0));
        assert!((g.k[0][(0, 0)] + 0.5).abs() < 1e-15);
        assert!((g.p[0][(0, 0)] - 1.5).abs() < 1e-15);
        let abar = closed_loop_matrices(&model, &g).unwrap();
        assert!((abar[0][(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_actuation_no_gain() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        let model = LtvModel::constant(a, DMatrix::zeros(2, 1), 5);
        let w = LqrWeights::constant(DMatrix::identity(2, 2), s(1.0), DMatrix::identity(2, 2), 5);
        let g = solve_riccati(&model, &w).unwrap();
        assert!(g.k.iter().all(|k| k.amax() == 0.0));
    }

    #[test]
    fn zero_gain_leaves_a_untouched() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.3, 0.9]);
        let model = LtvModel::constant(a.clone(), DMatrix::from_row_slice(2, 1, &[0.0, 1.0]), 3);
        let abar = closed_loop_matrices(&model, &GainSchedule::zeros(3, 2, 1)).unwrap();
        assert!(abar.iter().all(|m| *m == a));
    }

    #[test]
    fn closed_loop_propagation_is_associative() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, -0.3, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.05, 1.0]);
        let model = LtvModel::constant(a.clone(), b.clone(), 4);
        let w = LqrWeights::constant(
            DMatrix::identity(2, 2),
            s(0.5),
            DMatrix::identity(2, 2) * 3.0,
            4,
        );
        let g = solve_riccati(&model, &w).unwrap();
        let abar = closed_loop_matrices(&model, &g).unwrap();
        let mut x1 = DVector::from_vec(alloc::vec![0.3, -1.2]);
        let mut x2 = x1.clone();
        for t in 0..4 {
            x1 = &abar[t] * &x1;
            x2 = &a * &x2 + &b * (&g.k[t] * &x2);
            assert!((&x1 - &x2).amax() < 1e-12);
        }
    }

    #[test]
    fn value_matrices_are_symmetric_psd() {
        let a = DMatrix::from_row_slice(3, 3, &[1.1, 0.2, 0.0, -0.1, 0.9, 0.3, 0.0, 0.4, 1.2]);
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.5, 0.2, 1.0]);
        let model = LtvModel::constant(a, b, 10);
        let w = LqrWeights::constant(
            DMatrix::identity(3, 3),
            DMatrix::identity(2, 2),
            DMatrix::identity(3, 3),
            10,
        );
        let g = solve_riccati(&model, &w).unwrap();
        for p in &g.p {
            assert!((p - p.transpose()).amax() <= 1e-10);
            assert!(math::min_eigenvalue(p) >= -1e-9);
        }
    }

    #[test]
    fn indefinite_control_weight_is_rejected() {
        let model = LtvModel::constant(s(1.0), s(0.0), 2);
        let mut w = LqrWeights::constant(s(1.0), s(1.0), s(1.0), 2);
        w.r[1] = s(-1.0);
        assert!(solve_riccati(&model, &w).is_err());
    }
}
