use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn sin(x: f64) -> f64 {
    libm::sin(x)
}

pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

/// Wraps an angle difference into (-π, π].
pub fn wrap_angle(d: f64) -> f64 {
    let w = libm::atan2(sin(d), cos(d));
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// `a - b`, with wrapped differences on flagged coordinates.
pub fn periodic_diff(a: &DVector<f64>, b: &DVector<f64>, periodic: &[bool]) -> DVector<f64> {
    let mut d = a - b;
    for (i, p) in periodic.iter().enumerate() {
        if *p && i < d.len() {
            d[i] = wrap_angle(d[i]);
        }
    }
    d
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol * (1.0 + m.amax())
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// A square root `L` with `L L' = m` for a symmetric PSD `m`. Negative
/// round-off eigenvalues are clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let mut l = eig.eigenvectors.clone();
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let s = sqrt(lambda.max(0.0));
        l.column_mut(j).scale_mut(s);
    }
    l
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// `count` vectors of i.i.d. N(0, variance) entries.
pub fn gaussian_block<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    dim: usize,
    variance: f64,
) -> Vec<DVector<f64>> {
    let s = sqrt(variance);
    (0..count)
        .map(|_| standard_normal_vec(rng, dim) * s)
        .collect()
}
