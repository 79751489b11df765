use nalgebra::{DMatrix, DVector, LU};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a factorization is declared singular.
pub const PIVOT_TOL: f64 = 1e-14;

/// Partial-pivot LU of a dense square matrix, kept for repeated solves.
pub struct DenseLu {
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    n: usize,
}

impl DenseLu {
    pub fn factor(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: matrix.ncols(),
            });
        }
        let scale = matrix.amax();
        let lu = matrix.lu();
        let u = lu.u();
        for row in 0..n {
            let pivot = u[(row, row)];
            if !(pivot.abs() >= PIVOT_TOL * scale) || scale == 0.0 {
                return Err(Error::Singular { row, pivot });
            }
        }
        Ok(Self { lu, n })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: rhs.len(),
            });
        }
        let b = DVector::from_column_slice(rhs);
        let x = self
            .lu
            .solve(&b)
            .ok_or(Error::Singular { row: 0, pivot: 0.0 })?;
        Ok(x.as_slice().to_vec())
    }
}

/// Solves a dense symmetric, possibly indefinite, system by partial-pivot LU.
pub fn dense_solve_symmetric(matrix: &DMatrix<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    DenseLu::factor(matrix.clone())?.solve(rhs)
}
