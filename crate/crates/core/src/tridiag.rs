//! Thomas algorithm for tridiagonal systems.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("zero pivot at row {row} of a tridiagonal system")]
pub struct SingularSystem {
    pub row: usize,
}

/// Banded representation: `sub[k]` multiplies `x[k-1]` and `sup[k]`
/// multiplies `x[k+1]` in row `k`. `sub[0]` and `sup[n-1]` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Dense row-major copy, used by tests and diagnostics.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut a = vec![vec![0.0; n]; n];
        for k in 0..n {
            a[k][k] = self.diag[k];
            if k > 0 {
                a[k][k - 1] = self.sub[k];
            }
            if k + 1 < n {
                a[k][k + 1] = self.sup[k];
            }
        }
        a
    }

    /// Solves `A x = rhs` in place, using `scratch` for the modified
    /// super-diagonal.
    pub fn solve_into(
        &self,
        rhs: &mut [f64],
        scratch: &mut Vec<f64>,
    ) -> Result<(), SingularSystem> {
        let n = self.len();
        debug_assert_eq!(rhs.len(), n);
        scratch.clear();
        scratch.resize(n, 0.0);
        let mut pivot = self.diag[0];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(SingularSystem { row: 0 });
        }
        scratch[0] = if n > 1 { self.sup[0] / pivot } else { 0.0 };
        rhs[0] /= pivot;
        for k in 1..n {
            pivot = self.diag[k] - self.sub[k] * scratch[k - 1];
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(SingularSystem { row: k });
            }
            scratch[k] = if k + 1 < n { self.sup[k] / pivot } else { 0.0 };
            rhs[k] = (rhs[k] - self.sub[k] * rhs[k - 1]) / pivot;
        }
        for k in (0..n - 1).rev() {
            rhs[k] -= scratch[k] * rhs[k + 1];
        }
        Ok(())
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SingularSystem> {
        let mut x = rhs.to_vec();
        let mut scratch = Vec::new();
        self.solve_into(&mut x, &mut scratch)?;
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = Tridiagonal {
            sub: vec![0.0, -1.0, -1.0],
            diag: vec![2.0, 2.0, 2.0],
            sup: vec![-1.0, -1.0, 0.0],
        };
        let x = a.solve(&[1.0, 0.0, 1.0]).unwrap();
        for (xi, ei) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert!((xi - ei).abs() < 1e-14);
        }
    }

    #[test]
    fn reports_zero_pivot() {
        let a = Tridiagonal {
            sub: vec![0.0, 1.0],
            diag: vec![1.0, 1.0],
            sup: vec![1.0, 0.0],
        };
        assert_eq!(a.solve(&[1.0, 1.0]), Err(SingularSystem { row: 1 }));
    }
}
