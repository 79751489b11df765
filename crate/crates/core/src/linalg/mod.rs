//! Linear algebra kernels: sparse and banded storage, preconditioned MINRES,
//! Lanczos spectrum estimates and dense solves for small systems.

mod banded;
mod csr;
mod dense;
mod lanczos;
mod minres;

pub use banded::BandedCholesky;
pub use csr::CsrMatrix;
pub use dense::{dense_solve_symmetric, DenseLu};
pub use lanczos::{lanczos_extremes, LanczosEstimate, SpectrumMode};
pub use minres::{pminres, pminres_multi, MinresReport, MinresStop};

/// A linear map `R^n -> R^n`.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// `y = L x`; `y` is overwritten.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    fn is_symmetric(&self) -> bool {
        true
    }

    fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        self.apply(x, &mut y);
        y
    }

    /// Applies the operator to `cols` column-major vectors stored back to back.
    fn apply_multi(&self, x: &[f64], cols: usize, y: &mut [f64]) {
        let d = self.dim();
        assert_eq!(x.len(), d * cols);
        assert_eq!(y.len(), d * cols);
        for (xc, yc) in x.chunks(d.max(1)).zip(y.chunks_mut(d.max(1))) {
            self.apply(xc, yc);
        }
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows(), self.ncols());
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec_into(x, y);
    }

    fn is_symmetric(&self) -> bool {
        false
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
    fn is_symmetric(&self) -> bool {
        (**self).is_symmetric()
    }
    fn apply_multi(&self, x: &[f64], cols: usize, y: &mut [f64]) {
        (**self).apply_multi(x, cols, y)
    }
}

/// Wraps a closure as an operator.
pub struct FnOperator<F> {
    dim: usize,
    symmetric: bool,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> FnOperator<F> {
    pub fn symmetric(dim: usize, f: F) -> Self {
        Self {
            dim,
            symmetric: true,
            f,
        }
    }

    pub fn general(dim: usize, f: F) -> Self {
        Self {
            dim,
            symmetric: false,
            f,
        }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
    fn is_symmetric(&self) -> bool {
        self.symmetric
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl LinearOperator for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(x);
    }
}

/// Symmetric dense operator.
pub struct DenseSymmetric(pub nalgebra::DMatrix<f64>);

impl LinearOperator for DenseSymmetric {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.0.nrows();
        for (i, out) in y.iter_mut().enumerate() {
            *out = (0..n).map(|j| self.0[(i, j)] * x[j]).sum();
        }
    }
}

/// Diagonal scaling, e.g. a Jacobi preconditioner.
pub struct Diagonal(pub Vec<f64>);

impl Diagonal {
    pub fn jacobi(a: &CsrMatrix) -> Self {
        Diagonal(a.diagonal().into_iter().map(|d| 1.0 / d).collect())
    }
}

impl LinearOperator for Diagonal {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for ((o, d), v) in y.iter_mut().zip(&self.0).zip(x) {
            *o = d * v;
        }
    }
}

/// Applies the same operator to both halves of a stacked `[p; y]` vector.
pub struct BlockDiagonal<T>(pub T);

impl<T: LinearOperator> LinearOperator for BlockDiagonal<T> {
    fn dim(&self) -> usize {
        2 * self.0.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let d = self.0.dim();
        let (x1, x2) = x.split_at(d);
        let (y1, y2) = y.split_at_mut(d);
        self.0.apply(x1, y1);
        self.0.apply(x2, y2);
    }
    fn is_symmetric(&self) -> bool {
        self.0.is_symmetric()
    }
    /// Stacked pairs laid out column after column are `2 cols` vectors of
    /// the inner dimension.
    fn apply_multi(&self, x: &[f64], cols: usize, y: &mut [f64]) {
        self.0.apply_multi(x, 2 * cols, y)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Plain conjugate gradients for SPD operators, used for inner solves in
/// diagnostics. Returns the iterate and the number of steps taken.
pub fn conjugate_gradient(
    op: &dyn LinearOperator,
    rhs: &[f64],
    rel_tol: f64,
    max_steps: usize,
) -> (Vec<f64>, usize) {
    let n = op.dim();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let stop = rel_tol * rr.sqrt();
    for step in 0..max_steps {
        if rr.sqrt() <= stop || rr == 0.0 {
            return (x, step);
        }
        op.apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
    }
    (x, max_steps)
}
