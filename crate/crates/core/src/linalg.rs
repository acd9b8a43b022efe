//! Dense symmetric-matrix helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Largest absolute entry, used as the scale for relative tolerances.
pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn check_square(m: &Matrix, what: &str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Config(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Errors unless `m` is square and symmetric to a relative tolerance of 1e-10.
pub fn check_symmetric(m: &Matrix, what: &str) -> Result<()> {
    check_square(m, what)?;
    let tol = 1e-10 * max_abs(m).max(1.0);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol || m[(i, j)].is_nan() {
                return Err(Error::Config(format!(
                    "{what} is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    Ok(())
}

/// `log det(m)` for a symmetric positive definite matrix; `-inf` when the
/// Cholesky factorization breaks down (singular or indefinite input).
pub fn log_det_spd(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    match Cholesky::new(m.clone()) {
        Some(chol) => {
            let l = chol.l_dirty();
            2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
        }
        None => f64::NEG_INFINITY,
    }
}

/// Inverse of a symmetric positive definite matrix, falling back to LU.
pub fn inverse_spd(m: &Matrix) -> Result<Matrix> {
    let inv = match Cholesky::new(m.clone()) {
        Some(chol) => chol.inverse(),
        None => m
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("matrix is singular".into()))?,
    };
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix inverse has non-finite entries".into()));
    }
    Ok(inv)
}

pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect()
}

/// Principal submatrix on the given index list (in that order).
pub fn submatrix(m: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_of_singular_is_negative_infinity() {
        let ones = Matrix::from_element(2, 2, 1.0);
        assert_eq!(log_det_spd(&ones), f64::NEG_INFINITY);
        let diag = Matrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        assert!((log_det_spd(&diag) - 6f64.ln()).abs() < 1e-15);
        assert_eq!(log_det_spd(&Matrix::zeros(0, 0)), 0.0);
    }

    #[test]
    fn symmetry_check() {
        let m = Matrix::from_row_slice(2, 2, &[1.0, 2.0, 2.5, 1.0]);
        assert!(check_symmetric(&m, "m").is_err());
        assert!(check_symmetric(&Matrix::zeros(2, 3), "m").is_err());
        assert!(check_symmetric(&Matrix::identity(3, 3), "m").is_ok());
    }

    #[test]
    fn submatrix_order() {
        let m = Matrix::from_fn(3, 3, |i, j| (10 * i + j) as f64);
        let s = submatrix(&m, &[2, 0]);
        assert_eq!(s, Matrix::from_row_slice(2, 2, &[22.0, 20.0, 2.0, 0.0]));
    }
}
