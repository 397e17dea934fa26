//! Dense LU factorization with partial pivoting, used for log-determinants
//! and inverses of Laplacian minors.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Pivots with magnitude below this are treated as exact zeros.
pub const PIVOT_TOLERANCE: f64 = 1e-300;

pub struct Lu {
    lu: Array2<f64>,
    perm: Vec<usize>,
    perm_sign: f64,
}

impl Lu {
    pub fn factor(matrix: ArrayView2<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::Dimension(format!("LU of non-square matrix {:?}", matrix.dim())));
        }
        let mut lu = matrix.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut perm_sign = 1.0;

        for k in 0..n {
            let mut pivot_row = k;
            let mut pivot_abs = lu[[k, k]].abs();
            for i in k + 1..n {
                let v = lu[[i, k]].abs();
                if v > pivot_abs {
                    pivot_abs = v;
                    pivot_row = i;
                }
            }
            if !(pivot_abs >= PIVOT_TOLERANCE) {
                return Err(Error::Degenerate(format!("pivot {} has magnitude {:e}", k, pivot_abs)));
            }
            if pivot_row != k {
                for j in 0..n {
                    lu.swap([k, j], [pivot_row, j]);
                }
                perm.swap(k, pivot_row);
                perm_sign = -perm_sign;
            }
            let pivot = lu[[k, k]];
            for i in k + 1..n {
                let factor = lu[[i, k]] / pivot;
                lu[[i, k]] = factor;
                if factor != 0.0 {
                    for j in k + 1..n {
                        lu[[i, j]] -= factor * lu[[k, j]];
                    }
                }
            }
        }
        Ok(Lu { lu, perm, perm_sign })
    }

    /// Sign and log-magnitude of the determinant, accumulated in the log
    /// domain.
    pub fn log_det(&self) -> (f64, f64) {
        let mut sign = self.perm_sign;
        let mut log_abs = 0.0;
        for k in 0..self.lu.nrows() {
            let u = self.lu[[k, k]];
            if u < 0.0 {
                sign = -sign;
            }
            log_abs += u.abs().ln();
        }
        (sign, log_abs)
    }

    pub fn inverse(&self) -> Array2<f64> {
        let n = self.lu.nrows();
        let mut inv = Array2::zeros((n, n));
        let mut x = vec![0.0; n];
        for col in 0..n {
            // forward substitution with the permuted unit vector
            for i in 0..n {
                let mut acc = if self.perm[i] == col { 1.0 } else { 0.0 };
                for j in 0..i {
                    acc -= self.lu[[i, j]] * x[j];
                }
                x[i] = acc;
            }
            for i in (0..n).rev() {
                let mut acc = x[i];
                for j in i + 1..n {
                    acc -= self.lu[[i, j]] * x[j];
                }
                x[i] = acc / self.lu[[i, i]];
            }
            for i in 0..n {
                inv[[i, col]] = x[i];
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn determinant_and_inverse() {
        let m = array![[0.0, 2.0, 1.0], [1.0, 1.0, 0.0], [3.0, 0.0, 1.0]];
        let lu = Lu::factor(m.view()).unwrap();
        let (sign, log_abs) = lu.log_det();
        // det = 0*(1) - 2*(1 - 0) + 1*(0 - 3) = -5
        assert_eq!(sign, -1.0);
        assert!((log_abs - 5f64.ln()).abs() < 1e-14);
        let product = m.dot(&lu.inverse());
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((product[[i, j]] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_matrix_is_degenerate() {
        let m = array![[1.0, 2.0], [2.0, 4.0]];
        assert!(matches!(Lu::factor(m.view()), Err(Error::Degenerate(_))));
        let m = array![[f64::NAN]];
        assert!(Lu::factor(m.view()).is_err());
    }
}
