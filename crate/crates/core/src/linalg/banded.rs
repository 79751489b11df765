use super::{CsrMatrix, LinearOperator};
use crate::error::{Error, Result};

/// Cholesky factor of an SPD matrix with small half-bandwidth.
///
/// Lexicographically numbered grid operators have half-bandwidth equal to the
/// number of nodes per row plus one, so the factor fits in `n * (b + 1)` values.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // band[i * (bw + 1) + d] = L[i][i - d]
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: a.ncols(),
            });
        }
        let mut bw = 0;
        for r in 0..n {
            let (cols, _) = a.row(r);
            for &c in cols {
                bw = bw.max(r.abs_diff(c));
            }
        }
        let w = bw + 1;
        let mut band = vec![0.0; n * w];
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                if c <= r {
                    band[r * w + (r - c)] = v;
                }
            }
        }
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            for j in lo..=i {
                let klo = lo.max(j.saturating_sub(bw));
                let mut s = band[i * w + (i - j)];
                for k in klo..j {
                    s -= band[i * w + (i - k)] * band[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite(i));
                    }
                    band[i * w] = s.sqrt();
                } else {
                    band[i * w + (i - j)] = s / band[j * w];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        let w = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.band[i * w..(i + 1) * w];
            let mut s = x[i];
            for k in lo..i {
                s -= row[i - k] * x[k];
            }
            x[i] = s / row[0];
        }
        for i in (0..self.n).rev() {
            let row = &self.band[i * w..(i + 1) * w];
            x[i] /= row[0];
            let xi = x[i];
            let lo = i.saturating_sub(self.bw);
            for k in lo..i {
                x[k] -= row[i - k] * xi;
            }
        }
    }

    /// Solves for `cols` right-hand sides stored unknown-major: entry
    /// `(i, j)` at `x[i * cols + j]`.
    pub fn solve_many_in_place(&self, x: &mut [f64], cols: usize) {
        assert_eq!(x.len(), self.n * cols);
        if cols == 0 {
            return;
        }
        let w = self.bw + 1;
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.band[i * w..(i + 1) * w];
            let (done, rest) = x.split_at_mut(i * cols);
            let xi = &mut rest[..cols];
            for k in lo..i {
                let l = row[i - k];
                for (a, b) in xi.iter_mut().zip(&done[k * cols..(k + 1) * cols]) {
                    *a -= l * b;
                }
            }
            xi.iter_mut().for_each(|v| *v /= row[0]);
        }
        for i in (0..self.n).rev() {
            let row = &self.band[i * w..(i + 1) * w];
            let lo = i.saturating_sub(self.bw);
            let (head, rest) = x.split_at_mut(i * cols);
            let xi = &mut rest[..cols];
            xi.iter_mut().for_each(|v| *v /= row[0]);
            for k in lo..i {
                let l = row[i - k];
                for (a, b) in head[k * cols..(k + 1) * cols].iter_mut().zip(xi.iter()) {
                    *a -= l * b;
                }
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

impl LinearOperator for BandedCholesky {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
        self.solve_in_place(y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
                t.push((i - 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    #[test]
    fn solves_tridiagonal() {
        let a = laplace_1d(20);
        let chol = BandedCholesky::factor(&a).unwrap();
        assert_eq!(chol.bandwidth(), 1);
        let b: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let x = chol.solve(&b);
        let r = a.mul_vec(&x);
        for (ri, bi) in r.iter().zip(&b) {
            assert!((ri - bi).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)]);
        assert!(matches!(
            BandedCholesky::factor(&a),
            Err(Error::NotPositiveDefinite(1))
        ));
    }
}
