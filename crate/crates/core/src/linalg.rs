//! Dense LU factorization with partial pivoting.
//!
//! Instances are small (a few hundred states at most), so a dense solve is
//! both adequate and exact up to floating-point roundoff. All policy
//! evaluation in [`crate::mdp`] and the dual certificates in
//! [`crate::simplex`] go through this module.

use ndarray::{Array1, Array2};

use crate::error::{CmdpError, Result};

/// LU factorization `P·A = L·U` of a square matrix, stored packed.
#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    /// L (strict lower, unit diagonal implied) and U packed in one matrix.
    lu: Array2<f64>,
    /// Row permutation: row `i` of the factored system is row `perm[i]` of A.
    perm: Vec<usize>,
}

impl LuFactors {
    /// Factor a square matrix. Fails on non-square input or a pivot that is
    /// numerically zero (singular matrix).
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(CmdpError::DimensionMismatch {
                context: "lu factorization",
                expected: format!("{n}x{n}"),
                actual: format!("{}x{}", a.nrows(), a.ncols()),
            });
        }
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();

        for k in 0..n {
            // Partial pivot: largest magnitude in column k at or below the diagonal.
            let mut pivot_row = k;
            let mut pivot_mag = lu[[k, k]].abs();
            for i in (k + 1)..n {
                let mag = lu[[i, k]].abs();
                if mag > pivot_mag {
                    pivot_mag = mag;
                    pivot_row = i;
                }
            }
            if !pivot_mag.is_finite() || pivot_mag < 1e-300 {
                return Err(CmdpError::NumericalFailure(format!(
                    "singular matrix in LU factorization (pivot {pivot_mag:.3e} at column {k})"
                )));
            }
            if pivot_row != k {
                for j in 0..n {
                    let tmp = lu[[k, j]];
                    lu[[k, j]] = lu[[pivot_row, j]];
                    lu[[pivot_row, j]] = tmp;
                }
                perm.swap(k, pivot_row);
            }
            let pivot = lu[[k, k]];
            for i in (k + 1)..n {
                let factor = lu[[i, k]] / pivot;
                lu[[i, k]] = factor;
                for j in (k + 1)..n {
                    lu[[i, j]] -= factor * lu[[k, j]];
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    /// Solve `A·x = b` using the stored factors.
    pub fn solve(&self, b: &Array1<f64>) -> Result<Array1<f64>> {
        let n = self.n;
        if b.len() != n {
            return Err(CmdpError::DimensionMismatch {
                context: "lu solve",
                expected: format!("{n}"),
                actual: format!("{}", b.len()),
            });
        }
        // Forward substitution on the permuted rhs.
        let mut x = Array1::zeros(n);
        for i in 0..n {
            let mut sum = b[self.perm[i]];
            for j in 0..i {
                sum -= self.lu[[i, j]] * x[j];
            }
            x[i] = sum;
        }
        // Back substitution.
        for i in (0..n).rev() {
            let mut sum = x[i];
            for j in (i + 1)..n {
                sum -= self.lu[[i, j]] * x[j];
            }
            x[i] = sum / self.lu[[i, i]];
        }
        Ok(x)
    }
}

/// One-shot solve of `A·x = b`.
pub fn solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    LuFactors::new(a)?.solve(b)
}
