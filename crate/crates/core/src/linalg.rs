//! Small dense LU factorization used for lump blocks and exact ODE steps.
//!
//! The dense oracle has its own elimination routine; nothing here is shared
//! with it.

use crate::oracle::DenseMatrix;

/// LU factors with row permutation, `P A = L U`.
pub(crate) struct Lu {
    n: usize,
    // L below the diagonal (unit diagonal implied), U on and above it
    lu: Vec<f64>,
    perm: Vec<usize>,
}

/// Factors `a`, failing with the offending pivot when
/// `|pivot| <= rel_tol * ‖a‖∞`.
pub(crate) fn lu_factor(a: &DenseMatrix, rel_tol: f64) -> Result<Lu, f64> {
    assert_eq!(a.rows, a.cols, "LU needs a square matrix");
    let n = a.rows;
    let threshold = rel_tol * a.norm_inf();
    let mut lu = a.data.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let p = (k..n)
            .max_by(|&i, &j| lu[i * n + k].abs().total_cmp(&lu[j * n + k].abs()))
            .unwrap();
        let pivot = lu[p * n + k];
        if pivot.abs() <= threshold || !pivot.is_finite() {
            return Err(pivot);
        }
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
        }
        for i in k + 1..n {
            let factor = lu[i * n + k] / pivot;
            lu[i * n + k] = factor;
            for j in k + 1..n {
                lu[i * n + j] -= factor * lu[k * n + j];
            }
        }
    }
    Ok(Lu { n, lu, perm })
}

impl Lu {
    pub(crate) fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                y[i] -= self.lu[i * n + j] * y[j];
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                y[i] -= self.lu[i * n + j] * y[j];
            }
            y[i] /= self.lu[i * n + i];
        }
        y
    }

    pub(crate) fn inverse(&self) -> DenseMatrix {
        let n = self.n;
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..n {
                inv.data[i * n + j] = col[i];
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_with_pivoting() {
        let a = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0]]);
        let lu = lu_factor(&a, 1e-12).unwrap();
        let x = lu.solve(&[1.0, 8.0]);
        assert_eq!(x, vec![2.5, 1.0]);
    }

    #[test]
    fn rejects_singular() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert!(lu_factor(&a, 1e-12).is_err());
        assert!(lu_factor(&DenseMatrix::zeros(2, 2), 1e-12).is_err());
    }
}
