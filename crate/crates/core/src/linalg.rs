//! Dense symmetric helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-12;
const JITTER_MAX: f64 = 1e-8;

/// Cholesky factorization that retries with growing diagonal jitter
/// (relative to the largest diagonal entry) before giving up.
pub fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(a.clone()) {
        return Ok((c, 0.0));
    }
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += rel * scale;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, rel * scale));
        }
        rel *= 10.0;
    }
    Err(Error::IllConditioned {
        condition: condition_estimate(a),
    })
}

/// Solves `a x = b` for symmetric positive semidefinite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let (c, jitter) = cholesky_with_jitter(a)?;
    Ok((c.solve(b), jitter))
}

/// Ratio of extreme absolute eigenvalues of a symmetric matrix.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(a.clone()).eigenvalues;
    let max = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = ev.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut m = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_column_slice(&[1.0, 2.0]);
        let (x, jitter) = solve_spd(&a, &b).unwrap();
        assert_eq!(jitter, 0.0);
        assert!((&a * x - b).amax() < 1e-14);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, jitter) = cholesky_with_jitter(&a).unwrap();
        assert!(jitter > 0.0 && jitter <= 1e-8);
    }

    #[test]
    fn indefinite_fails_with_condition() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            cholesky_with_jitter(&a),
            Err(Error::IllConditioned { .. })
        ));
        assert!((condition_estimate(&a) - 1.0).abs() < 1e-12);
    }
}
