//! Correctors, the corrected multiscale basis, the reduced Galerkin system and
//! corrector decay measurements.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assembly::{element_stiffness, AssembledOperators};
use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::GridPair;
use crate::linalg::{dot, pminres, pminres_multi, BlockDiagonal, LinearOperator, MinresStop};
use crate::pair::PairVector;
use crate::saddle::{KernelOperators, SaddleOperator};

/// Relative preconditioned residual at which an ideal corrector is accepted.
pub const IDEAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectorKind {
    Ideal,
    /// `k` steps of preconditioned MINRES from zero.
    Localized(usize),
}

#[derive(Debug, Clone)]
pub struct Corrector {
    pub node: usize,
    /// Kernel coordinates `(ψ_p, ψ_y)`.
    pub psi: PairVector,
    pub kind: CorrectorKind,
    pub steps: usize,
    /// Final preconditioned residual relative to the initial one.
    pub residual: f64,
    /// Set when the Krylov space became invariant before `k` steps.
    pub exact: bool,
}

impl Corrector {
    /// Largest coarse layer distance from the node that the corrector can
    /// reach: the preconditioned right-hand side spreads three layers, and
    /// each further step adds three more.
    pub fn support_radius(&self) -> Option<usize> {
        match self.kind {
            CorrectorKind::Ideal => None,
            CorrectorKind::Localized(k) => Some(3 * k),
        }
    }
}

fn coarse_hat(kernel: &KernelOperators, i: usize) -> Result<Vec<f64>> {
    let m = kernel.interp.n_coarse();
    if i >= m {
        return Err(Error::IndexOutOfRange { index: i, size: m });
    }
    let mut e = vec![0.0; m];
    e[i] = 1.0;
    kernel.interp.prolong(&e)
}

/// Kernel dual pair of `w ↦ B((φ_i, 0), w)`: `(Zᵀ A φ_i, Zᵀ M φ_i)`.
pub fn corrector_rhs(i: usize, kernel: &KernelOperators) -> Result<Vec<f64>> {
    let phi = coarse_hat(kernel, i)?;
    let mut f = kernel.ops.stiffness.mul_vec(&phi);
    f.extend(kernel.ops.mass.mul_vec(&phi));
    Ok(kernel.restrict_dual(&f))
}

/// Kernel dual pair of `w ↦ B((0, φ_i), w)`: `(Zᵀ M φ_i, -Zᵀ A φ_i)`.
pub fn corrector_rhs_xi(i: usize, kernel: &KernelOperators) -> Result<Vec<f64>> {
    let phi = coarse_hat(kernel, i)?;
    let mut f = kernel.ops.mass.mul_vec(&phi);
    f.extend(kernel.ops.stiffness.mul_vec(&phi).into_iter().map(|v| -v));
    Ok(kernel.restrict_dual(&f))
}

fn solve_corrector(
    i: usize,
    kernel: &KernelOperators,
    s: &dyn LinearOperator,
    stop: MinresStop,
    kind: CorrectorKind,
) -> Result<Corrector> {
    let rhs = corrector_rhs(i, kernel)?;
    let (x, report) = pminres(&kernel.saddle(), &BlockDiagonal(s), &rhs, stop)?;
    Ok(Corrector {
        node: i,
        psi: PairVector::from_stacked(x),
        kind,
        steps: report.steps,
        residual: report.relative_residual(),
        exact: report.breakdown,
    })
}

/// Solves the kernel saddle system for node `i` to [`IDEAL_TOL`] with the
/// block preconditioner `diag(s, s)`.
pub fn compute_ideal_corrector(
    i: usize,
    kernel: &KernelOperators,
    s: &dyn LinearOperator,
) -> Result<Corrector> {
    let stop = MinresStop::Tolerance {
        rel_tol: IDEAL_TOL,
        max_steps: 4 * kernel.ell(),
    };
    solve_corrector(i, kernel, s, stop, CorrectorKind::Ideal)
}

pub fn compute_localized_corrector(
    i: usize,
    k: usize,
    kernel: &KernelOperators,
    s: &dyn LinearOperator,
) -> Result<Corrector> {
    solve_corrector(i, kernel, s, MinresStop::ExactSteps(k), CorrectorKind::Localized(k))
}

/// Number of localized correctors advanced together by [`compute_correctors`].
const BATCH: usize = 64;

/// One `ψ` corrector per coarse node. Localized correctors are computed in
/// batches that share operator and preconditioner applications.
pub fn compute_correctors(
    kernel: &KernelOperators,
    s: &dyn LinearOperator,
    kind: CorrectorKind,
) -> Result<Vec<Corrector>> {
    let m = kernel.interp.n_coarse();
    let k = match kind {
        CorrectorKind::Ideal => {
            return (0..m)
                .into_par_iter()
                .map(|i| compute_ideal_corrector(i, kernel, s))
                .collect();
        }
        CorrectorKind::Localized(k) => k,
    };
    let dim = 2 * kernel.ell();
    let saddle = kernel.saddle();
    let precond = BlockDiagonal(s);
    let mut out = Vec::with_capacity(m);
    for start in (0..m).step_by(BATCH) {
        let nodes: Vec<usize> = (start..m.min(start + BATCH)).collect();
        let mut rhs = Vec::with_capacity(dim * nodes.len());
        for &i in &nodes {
            rhs.extend(corrector_rhs(i, kernel)?);
        }
        let (x, reports) = pminres_multi(&saddle, &precond, &rhs, nodes.len(), k)?;
        for ((&i, psi), report) in nodes.iter().zip(x.chunks(dim)).zip(reports) {
            out.push(Corrector {
                node: i,
                psi: PairVector::from_stacked(psi.to_vec()),
                kind,
                steps: report.steps,
                residual: report.relative_residual(),
                exact: report.breakdown,
            });
        }
    }
    Ok(out)
}

/// The `(0, φ_i)` corrector obtained from the `(φ_i, 0)` one by rotation:
/// `ξ = (-ψ_y, ψ_p)`.
pub fn derive_xi(psi: &Corrector) -> Corrector {
    Corrector {
        psi: psi.psi.rotated(),
        ..psi.clone()
    }
}

/// The `2m` corrected basis pairs in fine coordinates, stored as columns:
/// column `i` is `(φ_i, 0) - ψ_i`, column `m + i` is `(0, φ_i) - ξ_i`.
#[derive(Debug, Clone)]
pub struct MultiscaleBasis {
    pub vectors: DMatrix<f64>,
    pub kind: Option<CorrectorKind>,
}

impl MultiscaleBasis {
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.vectors.column(j).iter().copied().collect()
    }

    pub fn is_ideal(&self) -> bool {
        self.kind == Some(CorrectorKind::Ideal)
    }

    /// Fine pair `Σ_j c_j b_j`.
    pub fn combine(&self, coeffs: &[f64]) -> Vec<f64> {
        let c = nalgebra::DVector::from_column_slice(coeffs);
        (&self.vectors * c).iter().copied().collect()
    }
}

/// Builds the basis from one `ψ` corrector per coarse node, in node order.
/// With `correctors = None` the raw coarse pairs are returned.
pub fn build_multiscale_basis(
    correctors: Option<&[Corrector]>,
    kernel: &KernelOperators,
) -> Result<MultiscaleBasis> {
    let n = kernel.interp.n_fine();
    let m = kernel.interp.n_coarse();
    if let Some(cs) = correctors {
        if cs.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: cs.len(),
            });
        }
    }
    let cols: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let phi = coarse_hat(kernel, i)?;
            let mut first = vec![0.0; 2 * n];
            first[..n].copy_from_slice(&phi);
            let mut second = vec![0.0; 2 * n];
            second[n..].copy_from_slice(&phi);
            if let Some(cs) = correctors {
                let psi = kernel.expand(cs[i].psi.as_slice());
                let xi = kernel.expand(derive_xi(&cs[i]).psi.as_slice());
                first.iter_mut().zip(&psi).for_each(|(b, c)| *b -= c);
                second.iter_mut().zip(&xi).for_each(|(b, c)| *b -= c);
            }
            Ok((first, second))
        })
        .collect::<Result<_>>()?;
    let mut vectors = DMatrix::zeros(2 * n, 2 * m);
    for (i, (a, b)) in cols.into_iter().enumerate() {
        vectors.column_mut(i).copy_from_slice(&a);
        vectors.column_mut(m + i).copy_from_slice(&b);
    }
    Ok(MultiscaleBasis {
        vectors,
        kind: correctors.map(|cs| cs[0].kind),
    })
}

/// `G[j][k] = B(b_k, b_j)` and `rhs_j = (b_j)_pᵀ load`.
pub fn assemble_reduced(
    basis: &MultiscaleBasis,
    ops: &AssembledOperators,
    load: &[f64],
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let n = ops.dim();
    if load.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: load.len(),
        });
    }
    let b = SaddleOperator {
        a: &ops.stiffness,
        m: &ops.mass,
        gamma: 1.0,
    };
    let dim = basis.dim();
    let applied: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|j| b.apply_vec(basis.vectors.column(j).as_slice()))
        .collect();
    let mut bb = DMatrix::zeros(2 * n, dim);
    for (j, col) in applied.into_iter().enumerate() {
        bb.column_mut(j).copy_from_slice(&col);
    }
    let g = basis.vectors.transpose() * bb;
    let g = (&g + g.transpose()) * 0.5;
    let rhs = reduced_rhs(basis, load);
    Ok((g, rhs))
}

pub fn reduced_rhs(basis: &MultiscaleBasis, load: &[f64]) -> Vec<f64> {
    let n = load.len();
    (0..basis.dim())
        .map(|j| dot(&basis.vectors.column(j).as_slice()[..n], load))
        .collect()
}

/// One row of a decay profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRow {
    pub layer: usize,
    pub annulus_energy: f64,
    /// Share of the total squared energy held by layers `0..=layer`.
    pub cumulative_fraction: f64,
}

/// Energy of the fine representation of `psi` restricted to each coarse layer
/// around its node.
pub fn decay_profile(
    psi: &Corrector,
    grid: &GridPair,
    kernel: &KernelOperators,
    field: &CoefficientField,
) -> Vec<DecayRow> {
    let n = grid.n_fine();
    let fine = kernel.expand(psi.psi.as_slice());
    let (vp, vy) = fine.split_at(n);
    let layers = grid.max_layer(psi.node) + 1;
    let per_elem: Vec<(usize, f64)> = (0..grid.fine_elements().len())
        .into_par_iter()
        .map(|e| {
            let nodes = grid.fine_elements()[e];
            let val = |v: &[f64]| nodes.map(|nd| nd.map_or(0.0, |i| v[i]));
            let (up, uy) = (val(vp), val(vy));
            if up.iter().chain(&uy).all(|&x| x == 0.0) {
                return (grid.layer_distance(psi.node, e), 0.0);
            }
            let k = element_stiffness(grid, field, e);
            let mut s = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    s += k[a][b] * (up[a] * up[b] + uy[a] * uy[b]);
                }
            }
            (grid.layer_distance(psi.node, e), s)
        })
        .collect();
    let mut sq = vec![0.0; layers];
    for (l, s) in per_elem {
        sq[l] += s;
    }
    let total: f64 = sq.iter().sum();
    let mut acc = 0.0;
    sq.iter()
        .enumerate()
        .map(|(layer, &s)| {
            acc += s;
            DecayRow {
                layer,
                annulus_energy: s.max(0.0).sqrt(),
                cumulative_fraction: if total > 0.0 { acc / total } else { 0.0 },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::InterpOperators;
    use crate::saddle::KernelSolver;
    use std::sync::Arc;

    fn setup(n: usize, r: usize) -> (GridPair, CoefficientField, KernelOperators) {
        let grid = GridPair::build_nested(n, r).unwrap();
        let field = CoefficientField::oscillatory(0.25).unwrap();
        let ops = Arc::new(AssembledOperators::assemble(&grid, &field));
        let interp = Arc::new(InterpOperators::build(&grid));
        let kernel = KernelOperators::new(ops, interp);
        (grid, field, kernel)
    }

    #[test]
    fn xi_rhs_is_rotated() {
        let (_, _, kernel) = setup(4, 2);
        let f = corrector_rhs(6, &kernel).unwrap();
        let g = corrector_rhs_xi(6, &kernel).unwrap();
        let ell = kernel.ell();
        for i in 0..ell {
            assert_eq!(g[i], f[ell + i]);
            assert_eq!(g[ell + i], -f[i]);
        }
        assert!(corrector_rhs(9, &kernel).is_err());
    }

    #[test]
    fn zero_steps_give_zero_corrector() {
        let (grid, field, kernel) = setup(4, 2);
        let s = KernelSolver::build(&kernel).unwrap();
        let c = compute_localized_corrector(4, 0, &kernel, &s).unwrap();
        assert!(c.psi.is_zero());
        assert_eq!(c.support_radius(), Some(0));
        let rows = decay_profile(&c, &grid, &kernel, &field);
        assert!(rows.iter().all(|r| r.annulus_energy == 0.0 && r.cumulative_fraction == 0.0));
    }

    #[test]
    fn rotated_corrector_solves_xi_system() {
        let (_, _, kernel) = setup(4, 2);
        let s = KernelSolver::build(&kernel).unwrap();
        let psi = compute_ideal_corrector(5, &kernel, &s).unwrap();
        let xi = derive_xi(&psi);
        let residual = kernel.saddle().apply_vec(xi.psi.as_slice());
        let target = corrector_rhs_xi(5, &kernel).unwrap();
        let err: f64 = residual.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(err.sqrt() <= 1e-8 * crate::linalg::norm2(&target));
    }

    #[test]
    fn batched_matches_single() {
        let (grid, _, kernel) = setup(4, 4);
        let s = crate::saddle::ASPreconditioner::build(&grid, &kernel).unwrap();
        let all = compute_correctors(&kernel, &s, CorrectorKind::Localized(3)).unwrap();
        for i in [0, 4, 8] {
            let one = compute_localized_corrector(i, 3, &kernel, &s).unwrap();
            let d: f64 = one
                .psi
                .as_slice()
                .iter()
                .zip(all[i].psi.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(d < 1e-12);
            assert_eq!(all[i].node, i);
        }
    }

    #[test]
    fn basis_interpolates_to_coarse_pairs() {
        let (_, _, kernel) = setup(4, 2);
        let s = KernelSolver::build(&kernel).unwrap();
        let cs = compute_correctors(&kernel, &s, CorrectorKind::Ideal).unwrap();
        let basis = build_multiscale_basis(Some(&cs), &kernel).unwrap();
        let (n, m) = (kernel.interp.n_fine(), kernel.interp.n_coarse());
        assert_eq!(basis.dim(), 2 * m);
        assert!(basis.is_ideal());
        for j in 0..2 * m {
            let col = basis.column(j);
            let pp = kernel.interp.pi.mul_vec(&col[..n]);
            let py = kernel.interp.pi.mul_vec(&col[n..]);
            for c in 0..m {
                let (ep, ey) = if j < m { (j == c, false) } else { (false, j - m == c) };
                assert!((pp[c] - f64::from(ep as u8)).abs() < 1e-12);
                assert!((py[c] - f64::from(ey as u8)).abs() < 1e-12);
            }
        }
        assert!(build_multiscale_basis(Some(&cs[..3]), &kernel).is_err());
    }
}
