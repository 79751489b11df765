//! Extremal eigenvalue estimates for `S * op` via preconditioned Lanczos.
//!
//! With `S` SPD and `op` symmetric, `S op` is self-adjoint in the inner product
//! `<u, v>_{S^{-1}}`. Lanczos runs in that inner product with full
//! reorthogonalization, so Ritz values stay inside the spectrum.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{axpy, dot, LinearOperator};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumMode {
    /// `op` is SPD: estimate the extremes of `S op` directly.
    Definite,
    /// `op` is symmetric indefinite: run on `(S op)^2` and report extremes of `|λ|`.
    AbsoluteValue,
}

#[derive(Debug, Clone)]
pub struct LanczosEstimate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Final Ritz values of the operator Lanczos ran on, ascending. In
    /// [`SpectrumMode::AbsoluteValue`] these are squared magnitudes.
    pub ritz_values: Vec<f64>,
    pub iterations: usize,
    /// Largest relative movement of either extreme over the last quarter of
    /// the iterations.
    pub drift: f64,
}

impl LanczosEstimate {
    pub fn kappa(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    pub fn converged(&self) -> bool {
        self.drift <= 0.01
    }

    pub fn check(self) -> Result<Self> {
        if self.converged() {
            Ok(self)
        } else {
            Err(Error::LanczosNotConverged { drift: self.drift })
        }
    }
}

fn start_vector(n: usize) -> Vec<f64> {
    // deterministic, not aligned with any grid mode
    let mut s: u64 = 0x9E37_79B9_7F4A_7C15;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64) / ((1u64 << 53) as f64) + 0.5
        })
        .collect()
}

fn tridiagonal_eigenvalues(alpha: &[f64], beta: &[f64]) -> Vec<f64> {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

/// Runs at most `iters` Lanczos steps on `precond * op`.
pub fn lanczos_extremes(
    op: &dyn LinearOperator,
    precond: &dyn LinearOperator,
    iters: usize,
    mode: SpectrumMode,
) -> Result<LanczosEstimate> {
    let n = op.dim();
    if precond.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: precond.dim(),
        });
    }
    let mut tmp = vec![0.0; n];
    let mut tmp2 = vec![0.0; n];
    let mut apply = |x: &[f64], y: &mut [f64]| match mode {
        SpectrumMode::Definite => op.apply(x, y),
        SpectrumMode::AbsoluteValue => {
            op.apply(x, &mut tmp);
            precond.apply(&tmp, &mut tmp2);
            op.apply(&tmp2, y);
        }
    };

    let iters = iters.min(n).max(1);
    let mut r = start_vector(n);
    let mut z = precond.apply_vec(&r);
    let mut beta = dot(&r, &z).sqrt();
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(iters);
    let mut qs: Vec<Vec<f64>> = Vec::with_capacity(iters);
    let mut alphas = Vec::with_capacity(iters);
    let mut betas = Vec::with_capacity(iters);
    let mut history: Vec<(f64, f64)> = Vec::with_capacity(iters);
    let beta0 = beta;
    let mut w = vec![0.0; n];
    let mut invariant = false;

    for j in 0..iters {
        let u: Vec<f64> = r.iter().map(|v| v / beta).collect();
        let q: Vec<f64> = z.iter().map(|v| v / beta).collect();
        apply(&q, &mut w);
        let a = dot(&q, &w);
        axpy(-a, &u, &mut w);
        if j > 0 {
            axpy(-beta, &us[j - 1], &mut w);
        }
        us.push(u);
        qs.push(q);
        for _ in 0..2 {
            for (ui, qi) in us.iter().zip(&qs) {
                let c = dot(qi, &w);
                axpy(-c, ui, &mut w);
            }
        }
        alphas.push(a);
        let ritz = tridiagonal_eigenvalues(&alphas, &betas);
        history.push((ritz[0], *ritz.last().unwrap()));

        r.copy_from_slice(&w);
        precond.apply(&r, &mut z);
        let bb = dot(&r, &z);
        if bb <= (1e-13 * beta0).powi(2) {
            invariant = true;
            break;
        }
        if j + 1 == iters {
            break;
        }
        beta = bb.sqrt();
        betas.push(beta);
    }

    let ritz = tridiagonal_eigenvalues(&alphas, &betas);
    let steps = alphas.len();
    let (lo, hi) = *history.last().unwrap();
    let start = steps - steps.div_ceil(4).max(1);
    let mut drift = 0.0f64;
    if steps < n && !invariant {
        for &(l, h) in &history[start..] {
            drift = drift.max(((l - lo) / lo).abs()).max(((h - hi) / hi).abs());
        }
    }
    let (lambda_min, lambda_max) = match mode {
        SpectrumMode::Definite => (lo, hi),
        SpectrumMode::AbsoluteValue => (lo.max(0.0).sqrt(), hi.max(0.0).sqrt()),
    };
    Ok(LanczosEstimate {
        lambda_min,
        lambda_max,
        ritz_values: ritz,
        iterations: steps,
        drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{DenseSymmetric, Diagonal, Identity};

    #[test]
    fn diagonal_spectrum_is_exact() {
        let op = Diagonal(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let est = lanczos_extremes(&op, &Identity(5), 10, SpectrumMode::Definite).unwrap();
        assert!((est.lambda_min - 1.0).abs() < 1e-10);
        assert!((est.lambda_max - 5.0).abs() < 1e-10);
        assert!(est.converged());
    }

    #[test]
    fn indefinite_reports_magnitudes() {
        let op = Diagonal(vec![-4.0, -1.0, 2.0, 3.0]);
        let est = lanczos_extremes(&op, &Identity(4), 10, SpectrumMode::AbsoluteValue).unwrap();
        assert!((est.lambda_min - 1.0).abs() < 1e-10);
        assert!((est.lambda_max - 4.0).abs() < 1e-10);
    }

    #[test]
    fn preconditioned_generalized_problem() {
        // S = diag(1/d) makes S*op = identity for op = diag(d)
        let d = vec![2.0, 7.0, 0.5, 11.0];
        let op = DenseSymmetric(nalgebra::DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d.clone())));
        let s = Diagonal(d.iter().map(|v| 1.0 / v).collect());
        let est = lanczos_extremes(&op, &s, 10, SpectrumMode::Definite).unwrap();
        assert!((est.lambda_min - 1.0).abs() < 1e-12);
        assert!((est.lambda_max - 1.0).abs() < 1e-12);
    }
}
