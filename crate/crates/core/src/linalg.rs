//! Dense solves used by ALS, the ridge linear model and the stacking
//! meta-model. Thin wrappers over nalgebra with an explicit conditioning
//! check, since nalgebra only reports exactly-zero pivots.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const RCOND_FLOOR: f64 = 1e-12;

/// Solve the symmetric positive definite system `a x = b` (row-major `a`).
pub fn solve_spd(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let m = DMatrix::from_row_slice(n, n, a);
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let chol = m.cholesky().ok_or(Error::SingularSystem)?;
    let l = chol.l_dirty();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if n > 0 && (scale == 0.0 || min_pivot <= RCOND_FLOOR * scale) {
        return Err(Error::SingularSystem);
    }
    Ok(chol.solve(&DVector::from_column_slice(b)).iter().copied().collect())
}

/// Minimum-norm least-squares solution of `a x = b` for symmetric `a`.
pub fn solve_least_squares(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let m = DMatrix::from_row_slice(n, n, a);
    let svd = m.svd(true, true);
    let x = svd
        .solve(&DVector::from_column_slice(b), 1e-12)
        .expect("U and V were requested");
    x.iter().copied().collect()
}

/// Solve a general square system by partially pivoted LU.
pub fn solve_general(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let m = DMatrix::from_row_slice(n, n, a);
    let lu = m.lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..n).map(|i| u[(i, i)].abs()).collect();
    let max = diag.iter().copied().fold(0.0, f64::max);
    let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
    if n > 0 && (max == 0.0 || min <= RCOND_FLOOR * max) {
        return Err(Error::SingularSystem);
    }
    let x = lu.solve(&DVector::from_column_slice(b)).ok_or(Error::SingularSystem)?;
    Ok(x.iter().copied().collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}
