//! Dense reference computations for verifying the structured paths. Cubic in
//! the number of points; intended for tests and small problems.

use nalgebra::{DMatrix, DVector};

use crate::bits::BitMatrix;
use crate::error::{Error, Result};
use crate::kernel::{kernel_value, WeightVector};
use crate::matrix::ColMatrix;

pub use crate::sros::to_dense;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn to_nalgebra(m: &ColMatrix) -> DMatrix<f64> {
    DMatrix::from_column_slice(m.rows(), m.cols(), m.as_slice())
}

/// Pairwise kernel matrix by direct prefix comparison.
pub fn kernel_matrix(a: &BitMatrix, b: &BitMatrix, w: &WeightVector) -> Result<DMatrix<f64>> {
    let rows_a: Vec<Vec<u8>> = (0..a.rows()).map(|r| a.row_bits(r)).collect();
    let rows_b: Vec<Vec<u8>> = (0..b.rows()).map(|r| b.row_bits(r)).collect();
    let mut k = DMatrix::zeros(a.rows(), b.rows());
    for (i, ra) in rows_a.iter().enumerate() {
        for (j, rb) in rows_b.iter().enumerate() {
            k[(i, j)] = kernel_value(w, ra, rb)?;
        }
    }
    Ok(k)
}

pub fn inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::NonFinite("dense matrix is singular".into()))
}

/// `log |det m|` via LU.
pub fn log_abs_det(m: &DMatrix<f64>) -> f64 {
    let lu = m.clone().lu();
    lu.u().diagonal().iter().map(|v| v.abs().ln()).sum()
}

pub fn min_eigenvalue(symmetric: &DMatrix<f64>) -> f64 {
    symmetric
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Gaussian NLL of `y` under `N(0, K + λI)`.
pub fn gp_nll(k: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<f64> {
    let n = y.len();
    let mut a = k.clone();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::NonFinite("dense covariance is not positive definite".into()))?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(0.5 * (yv.dot(&alpha) + logdet + n as f64 * LN_2PI))
}

/// Posterior predictive mean and variance (noise included) at test points.
pub fn gp_predict(
    k_train: &DMatrix<f64>,
    k_cross: &DMatrix<f64>,
    k_test_diag: &[f64],
    y: &[f64],
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let mut a = k_train.clone();
    for i in 0..n {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::NonFinite("dense covariance is not positive definite".into()))?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    let mu = k_cross * &alpha;
    let solved = chol.solve(&k_cross.transpose());
    let var = (0..k_cross.nrows())
        .map(|r| {
            let quad: f64 = (0..n).map(|j| k_cross[(r, j)] * solved[(j, r)]).sum();
            k_test_diag[r] + lambda - quad
        })
        .collect();
    Ok((mu.iter().copied().collect(), var))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_nll() {
        let k = DMatrix::from_element(1, 1, 1.0);
        let v = gp_nll(&k, &[0.0], 1.0).unwrap();
        assert!((v - 0.5 * (2f64.ln() + LN_2PI)).abs() < 1e-14);
    }

    #[test]
    fn log_det_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -3.0]));
        assert!((log_abs_det(&m) - 6f64.ln()).abs() < 1e-14);
    }
}
