//! Saddle-point operators on the fine space and on the kernel of `Π`, the
//! additive Schwarz preconditioner and spectral diagnostics.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::AssembledOperators;
use crate::error::{Error, Result};
use crate::grid::GridPair;
use crate::interp::InterpOperators;
use crate::linalg::{
    lanczos_extremes, BandedCholesky, CsrMatrix, LanczosEstimate, LinearOperator,
    SpectrumMode,
};

/// Poincaré–Friedrichs constant of the unit square, `1 / (2π²)`.
pub const POINCARE_UNIT_SQUARE: f64 = 1.0 / (2.0 * std::f64::consts::PI * std::f64::consts::PI);

/// `[[A, M], [M, -γA]]` acting on stacked `[p; y]`.
pub struct SaddleOperator<'a> {
    pub a: &'a CsrMatrix,
    pub m: &'a CsrMatrix,
    pub gamma: f64,
}

impl LinearOperator for SaddleOperator<'_> {
    fn dim(&self) -> usize {
        2 * self.a.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.a.nrows();
        let (xp, xy) = x.split_at(n);
        let (yp, yy) = y.split_at_mut(n);
        self.a.mul_vec_into(xp, yp);
        self.m.mul_vec_acc(1.0, xy, yp);
        self.m.mul_vec_into(xp, yy);
        self.a.mul_vec_acc(-self.gamma, xy, yy);
    }
}

/// `A_K = Zᵀ A Z` and `M_K = Zᵀ M Z`, applied through `Z` without forming
/// the products.
#[derive(Clone)]
pub struct KernelOperators {
    pub ops: Arc<AssembledOperators>,
    pub interp: Arc<InterpOperators>,
}

pub struct KernelStiffness<'a>(&'a KernelOperators);
pub struct KernelMass<'a>(&'a KernelOperators);
/// `[[A_K, M_K], [M_K, -A_K]]` on stacked kernel pairs.
pub struct KernelSaddle<'a>(&'a KernelOperators);

impl KernelOperators {
    pub fn new(ops: Arc<AssembledOperators>, interp: Arc<InterpOperators>) -> Self {
        Self { ops, interp }
    }

    pub fn ell(&self) -> usize {
        self.interp.ell()
    }

    pub fn stiffness(&self) -> KernelStiffness<'_> {
        KernelStiffness(self)
    }

    pub fn mass(&self) -> KernelMass<'_> {
        KernelMass(self)
    }

    pub fn saddle(&self) -> KernelSaddle<'_> {
        KernelSaddle(self)
    }

    fn sandwich(&self, mat: &CsrMatrix, x: &[f64], y: &mut [f64]) {
        let z = self.interp.z_mul(x);
        self.interp.zt_apply(&mat.mul_vec(&z), y);
    }

    /// Explicit `(A_K, M_K)`; intended for small meshes.
    pub fn to_csr(&self) -> (CsrMatrix, CsrMatrix) {
        let z = self.interp.z_csr();
        let zt = z.transpose();
        (
            zt.matmul(&self.ops.stiffness.matmul(&z)),
            zt.matmul(&self.ops.mass.matmul(&z)),
        )
    }

    /// Kernel dual of a fine dual pair: `(Zᵀ f_p, Zᵀ f_y)`.
    pub fn restrict_dual(&self, f: &[f64]) -> Vec<f64> {
        let n = self.interp.n_fine();
        let ell = self.ell();
        let mut out = vec![0.0; 2 * ell];
        let (op, oy) = out.split_at_mut(ell);
        self.interp.zt_apply(&f[..n], op);
        self.interp.zt_apply(&f[n..], oy);
        out
    }

    /// Fine representation `(Z c_p, Z c_y)` of a kernel pair.
    pub fn expand(&self, c: &[f64]) -> Vec<f64> {
        let n = self.interp.n_fine();
        let ell = self.ell();
        let mut out = vec![0.0; 2 * n];
        let (op, oy) = out.split_at_mut(n);
        self.interp.z_apply(&c[..ell], op);
        self.interp.z_apply(&c[ell..], oy);
        out
    }
}

impl LinearOperator for KernelStiffness<'_> {
    fn dim(&self) -> usize {
        self.0.ell()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.sandwich(&self.0.ops.stiffness, x, y)
    }
}

impl LinearOperator for KernelMass<'_> {
    fn dim(&self) -> usize {
        self.0.ell()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.sandwich(&self.0.ops.mass, x, y)
    }
}

impl LinearOperator for KernelSaddle<'_> {
    fn dim(&self) -> usize {
        2 * self.0.ell()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let k = self.0;
        let fine = k.expand(x);
        let n = k.interp.n_fine();
        let mut f = vec![0.0; 2 * n];
        SaddleOperator {
            a: &k.ops.stiffness,
            m: &k.ops.mass,
            gamma: 1.0,
        }
        .apply(&fine, &mut f);
        let ell = k.ell();
        let (yp, yy) = y.split_at_mut(ell);
        k.interp.zt_apply(&f[..n], yp);
        k.interp.zt_apply(&f[n..], yy);
    }
}

/// `A_i⁻¹` for one patch. `A_i = A_II + U C Uᵀ` with `U = [Π_Jᵀ | X]`,
/// `C = [[A_c, -I], [-I, 0]]`, so it is applied by the Woodbury identity on
/// top of a banded factorization of the sparse block `A_II`.
struct LocalSolve {
    /// Kernel indices of the patch.
    indices: Vec<usize>,
    chol: BandedCholesky,
    u: DMatrix<f64>,
    /// `A_II⁻¹ U`.
    w: DMatrix<f64>,
    capacitance: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl LocalSolve {
    /// `A_i⁻¹` applied to the rows of `rt` (one right-hand side per row).
    fn solve_rows(&self, mut rt: DMatrix<f64>) -> DMatrix<f64> {
        let cols = rt.nrows();
        self.chol.solve_many_in_place(rt.as_mut_slice(), cols);
        let t = (&rt * &self.u).transpose();
        let s = self.capacitance.solve(&t).expect("capacitance checked at build");
        rt - s.tr_mul(&self.w.transpose())
    }
}

/// `S = Σ_i R_iᵀ A_i⁻¹ R_i` over one subspace per coarse node.
pub struct ASPreconditioner {
    ell: usize,
    patches: Vec<LocalSolve>,
}

impl ASPreconditioner {
    /// Factorizes every local matrix `A_i = R_i A_K R_iᵀ`. With
    /// `Z_i = E_i - P_J Π_J` (the patch columns of `Z`, where `J` are the
    /// coarse nodes whose averages see the patch),
    /// `A_i = A_II - X Π_J - (X Π_J)ᵀ + Π_Jᵀ A_c Π_J` with `X = (A P)[I, J]`
    /// and `A_c = (Pᵀ A P)[J, J]`.
    pub fn build(grid: &GridPair, kernel: &KernelOperators) -> Result<Self> {
        let a = &kernel.ops.stiffness;
        let interp = &kernel.interp;
        let ap = a.matmul(&interp.p);
        let ptap = interp.p_t.matmul(&ap);
        let patches = (0..grid.n_coarse())
            .into_par_iter()
            .map(|c| {
                let patch = grid.patch(c)?;
                let fine = &patch.local_kernel_indices;
                let mut coarse: Vec<usize> = fine
                    .iter()
                    .flat_map(|&f| interp.pi_t.row(f).0.iter().copied())
                    .collect();
                coarse.sort_unstable();
                coarse.dedup();
                let singular = |_| Error::SingularPatch { node: c };
                let chol = BandedCholesky::factor(&a.submatrix(fine, fine)).map_err(singular)?;
                let x = ap.dense_block(fine, &coarse);
                let pil = interp.pi.dense_block(&coarse, fine);
                let ac = ptap.dense_block(&coarse, &coarse);
                let (ni, nj) = (fine.len(), coarse.len());
                let mut u = DMatrix::zeros(ni, 2 * nj);
                u.view_mut((0, 0), (ni, nj)).copy_from(&pil.transpose());
                u.view_mut((0, nj), (ni, nj)).copy_from(&x);
                let mut w = u.clone();
                for mut col in w.column_iter_mut() {
                    chol.solve_in_place(col.as_mut_slice());
                }
                let mut cap = u.tr_mul(&w);
                for j in 0..nj {
                    cap[(j, nj + j)] -= 1.0;
                    cap[(nj + j, j)] -= 1.0;
                }
                let mut lower = cap.view_mut((nj, nj), (nj, nj));
                lower -= &ac;
                let capacitance = cap.lu();
                if nj > 0 && !capacitance.is_invertible() {
                    return Err(Error::SingularPatch { node: c });
                }
                let indices = fine
                    .iter()
                    .map(|&f| interp.kernel_index(f).expect("patch nodes are kernel nodes"))
                    .collect();
                Ok(LocalSolve {
                    indices,
                    chol,
                    u,
                    w,
                    capacitance,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ell: interp.ell(),
            patches,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn patch_indices(&self, i: usize) -> &[usize] {
        &self.patches[i].indices
    }

    /// Applies `S` to `cols` vectors stored column-major in `x` (`ell × cols`).
    fn apply_patches(&self, x: &[f64], cols: usize, y: &mut [f64]) {
        let ell = self.ell;
        assert_eq!(x.len(), ell * cols);
        assert_eq!(y.len(), ell * cols);
        let locals: Vec<Option<(Vec<usize>, DMatrix<f64>)>> = self
            .patches
            .par_iter()
            .map(|p| {
                let live: Vec<usize> = (0..cols)
                    .filter(|&j| p.indices.iter().any(|&g| x[j * ell + g] != 0.0))
                    .collect();
                if live.is_empty() {
                    return None;
                }
                let rt = DMatrix::from_fn(live.len(), p.indices.len(), |c, i| {
                    x[live[c] * ell + p.indices[i]]
                });
                Some((live, p.solve_rows(rt)))
            })
            .collect();
        y.iter_mut().for_each(|v| *v = 0.0);
        for (p, local) in self.patches.iter().zip(&locals) {
            let Some((live, local)) = local else { continue };
            for (c, &j) in live.iter().enumerate() {
                for (i, &g) in p.indices.iter().enumerate() {
                    y[j * ell + g] += local[(c, i)];
                }
            }
        }
    }
}

impl LinearOperator for ASPreconditioner {
    fn dim(&self) -> usize {
        self.ell
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.apply_patches(x, 1, y)
    }
    fn apply_multi(&self, x: &[f64], cols: usize, y: &mut [f64]) {
        self.apply_patches(x, cols, y)
    }
}

/// `𝕊 = diag(S, S)` on stacked pairs.
pub fn apply_block_precond(s: &dyn LinearOperator, r: &[f64]) -> Result<Vec<f64>> {
    let d = s.dim();
    if r.len() != 2 * d {
        return Err(Error::DimensionMismatch {
            expected: 2 * d,
            got: r.len(),
        });
    }
    let mut out = vec![0.0; 2 * d];
    let (o1, o2) = out.split_at_mut(d);
    s.apply(&r[..d], o1);
    s.apply(&r[d..], o2);
    Ok(out)
}

/// Exact `A_K⁻¹` through the fine constrained problem
/// `A ψ + Πᵀ λ = f`, `Π ψ = 0` with `Zᵀ f = g`, using a banded factorization
/// of `A` and the dense Schur complement `Π A⁻¹ Πᵀ`.
pub struct KernelSolver {
    interp: Arc<InterpOperators>,
    chol: BandedCholesky,
    /// `A⁻¹ Πᵀ`, `n × m`.
    w: DMatrix<f64>,
    schur: Cholesky<f64, nalgebra::Dyn>,
}

impl KernelSolver {
    pub fn build(kernel: &KernelOperators) -> Result<Self> {
        let interp = kernel.interp.clone();
        let chol = BandedCholesky::factor(&kernel.ops.stiffness)?;
        let n = interp.n_fine();
        let m = interp.n_coarse();
        let cols: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|c| {
                let mut col = vec![0.0; n];
                let (idx, vals) = interp.pi.row(c);
                for (&f, &v) in idx.iter().zip(vals) {
                    col[f] = v;
                }
                chol.solve_in_place(&mut col);
                col
            })
            .collect();
        let w = DMatrix::from_fn(n, m, |i, j| cols[j][i]);
        let mut sc = DMatrix::zeros(m, m);
        for c in 0..m {
            let (idx, vals) = interp.pi.row(c);
            for d in 0..m {
                sc[(c, d)] = idx.iter().zip(vals).map(|(&f, &v)| v * w[(f, d)]).sum();
            }
        }
        let sc = (&sc + sc.transpose()) * 0.5;
        let schur = Cholesky::new(sc).ok_or(Error::NotPositiveDefinite(0))?;
        Ok(Self {
            interp,
            chol,
            w,
            schur,
        })
    }
}

impl LinearOperator for KernelSolver {
    fn dim(&self) -> usize {
        self.interp.ell()
    }

    fn apply(&self, g: &[f64], out: &mut [f64]) {
        let interp = &self.interp;
        let mut f = vec![0.0; interp.n_fine()];
        for (&node, &v) in interp.kernel_nodes().iter().zip(g) {
            f[node] = v;
        }
        let pf = interp.p_t.mul_vec(&f);
        for (c, v) in pf.iter().enumerate() {
            f[interp.coarse_fine_node(c)] = -v;
        }
        self.chol.solve_in_place(&mut f);
        let rhs = DVector::from_vec(interp.pi.mul_vec(&f));
        let lambda = self.schur.solve(&rhs);
        let correction = &self.w * lambda;
        for (fi, ci) in f.iter_mut().zip(correction.iter()) {
            *fi -= ci;
        }
        out.copy_from_slice(&interp.kernel_coords(&f));
    }
}

/// Spectrum summary of `S A_K` and the derived contraction factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralDiagnostics {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub kappa: f64,
    pub c_star: f64,
    pub d_star: f64,
    pub q: f64,
    pub c_pf: f64,
    pub alpha: f64,
}

impl SpectralDiagnostics {
    /// `c* = λ_min`, `d* = λ_max (1 + C_PF/α)`, `q = (d* - c*) / (d* + c*)`.
    pub fn from_extremes(lambda_min: f64, lambda_max: f64, c_pf: f64, alpha: f64) -> Self {
        let c_star = lambda_min;
        let d_star = lambda_max * (1.0 + c_pf / alpha);
        Self {
            lambda_min,
            lambda_max,
            kappa: lambda_max / lambda_min,
            c_star,
            d_star,
            q: ((d_star - c_star) / (d_star + c_star)).max(0.0),
            c_pf,
            alpha,
        }
    }

    /// `2 κ^{3/2} (1 + C_PF/α)`, the computable factor in the corrector
    /// error bound.
    pub fn corrector_constant(&self) -> f64 {
        2.0 * self.kappa.powf(1.5) * (1.0 + self.c_pf / self.alpha)
    }
}

pub fn spectral_diagnostics(
    kernel: &KernelOperators,
    s: &dyn LinearOperator,
    c_pf: f64,
    alpha: f64,
    iters: usize,
) -> Result<SpectralDiagnostics> {
    let est = lanczos_extremes(&kernel.stiffness(), s, iters, SpectrumMode::Definite)?.check()?;
    Ok(SpectralDiagnostics::from_extremes(
        est.lambda_min,
        est.lambda_max,
        c_pf,
        alpha,
    ))
}

/// Lanczos on `(𝕊 𝔹)²` for the kernel saddle operator; the returned Ritz
/// values are squared magnitudes of eigenvalues of `𝕊 𝔹`.
pub fn saddle_spectrum(
    kernel: &KernelOperators,
    s: &dyn LinearOperator,
    iters: usize,
) -> Result<LanczosEstimate> {
    let block = crate::linalg::BlockDiagonal(s);
    lanczos_extremes(&kernel.saddle(), &block, iters, SpectrumMode::AbsoluteValue)
}

/// Dense matrix of an operator, column by column; small sizes only.
pub fn dense_of(op: &dyn LinearOperator) -> DMatrix<f64> {
    let n = op.dim();
    let mut d = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        op.apply(&e, &mut col);
        e[j] = 0.0;
        for i in 0..n {
            d[(i, j)] = col[i];
        }
    }
    d
}
