//! Quasi-interpolation onto the coarse space, nodal prolongation and the
//! kernel basis.
//!
//! The kernel basis `Z` has one column per fine interior node `q` that is not a
//! coarse node, `Z e_q = e_q - P Π e_q`. For realistic sizes `Z` is much denser
//! than `P` or `Π`, so it is applied matrix-free; [`InterpOperators::z_csr`]
//! materializes it for small meshes.

use crate::error::{Error, Result};
use crate::grid::GridPair;
use crate::linalg::{BandedCholesky, CsrMatrix, FnOperator, LanczosEstimate, SpectrumMode, lanczos_extremes};

/// `G[a][s] = ∫_0^1 λ_a(ξ) ψ_s(ξ) dξ` for the two coarse linear functions
/// `λ_0 = 1 - ξ`, `λ_1 = ξ` and the fine hats `ψ_s` at `s / r`. The integrand is
/// quadratic on each fine interval, so 2-point Gauss is exact.
fn coarse_fine_moments(r: usize) -> [Vec<f64>; 2] {
    let mut g = [vec![0.0; r + 1], vec![0.0; r + 1]];
    let d = 0.5 / 3f64.sqrt();
    let w = 0.5 / r as f64;
    for k in 0..r {
        for &u in &[0.5 - d, 0.5 + d] {
            let xi = (k as f64 + u) / r as f64;
            let lam = [1.0 - xi, xi];
            let hats = [(k, 1.0 - u), (k + 1, u)];
            for a in 0..2 {
                for &(s, val) in &hats {
                    g[a][s] += w * lam[a] * val;
                }
            }
        }
    }
    g
}

/// Weights `W[a][s]` with `(Q_T v)` at corner `a` equal to
/// `Σ_{sx,sy} W[ax][sx] W[ay][sy] v(sx, sy)` on a unit-scaled coarse cell:
/// `W = M1⁻¹ G` with the 1D unit mass inverse `[[4, -2], [-2, 4]]`.
fn projection_weights(r: usize) -> [Vec<f64>; 2] {
    let g = coarse_fine_moments(r);
    let mut w = [vec![0.0; r + 1], vec![0.0; r + 1]];
    for s in 0..=r {
        w[0][s] = 4.0 * g[0][s] - 2.0 * g[1][s];
        w[1][s] = -2.0 * g[0][s] + 4.0 * g[1][s];
    }
    w
}

pub fn build_pi(grid: &GridPair) -> CsrMatrix {
    let r = grid.refine_factor();
    let w = projection_weights(r);
    let m = grid.n_coarse();
    let mut trip = Vec::with_capacity(m * 4 * (r + 1) * (r + 1));
    for c in 0..m {
        let (ci, cj) = grid.coarse_node_ij(c);
        for cy in cj - 1..=cj {
            for cx in ci - 1..=ci {
                let (ax, ay) = (ci - cx, cj - cy);
                for sy in 0..=r {
                    for sx in 0..=r {
                        if let Some(f) = grid.fine_node_index(cx * r + sx, cy * r + sy) {
                            let v = 0.25 * w[ax][sx] * w[ay][sy];
                            if v != 0.0 {
                                trip.push((c, f, v));
                            }
                        }
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(m, grid.n_fine(), &trip)
}

/// Bilinear interpolation of coarse nodal values (an `n × m` matrix).
pub fn build_prolongation(grid: &GridPair) -> CsrMatrix {
    let r = grid.refine_factor();
    let mut trip = Vec::new();
    for c in 0..grid.n_coarse() {
        let (ci, cj) = grid.coarse_node_ij(c);
        for dj in -(r as isize - 1)..=(r as isize - 1) {
            for di in -(r as isize - 1)..=(r as isize - 1) {
                let i = (ci * r) as isize + di;
                let j = (cj * r) as isize + dj;
                let v = (1.0 - di.unsigned_abs() as f64 / r as f64)
                    * (1.0 - dj.unsigned_abs() as f64 / r as f64);
                if let Some(f) = grid.fine_node_index(i as usize, j as usize) {
                    trip.push((f, c, v));
                }
            }
        }
    }
    CsrMatrix::from_triplets(grid.n_fine(), grid.n_coarse(), &trip)
}

#[derive(Debug, Clone)]
pub struct InterpOperators {
    pub pi: CsrMatrix,
    pub pi_t: CsrMatrix,
    pub p: CsrMatrix,
    pub p_t: CsrMatrix,
    /// Fine node of each kernel column, ascending.
    kernel_nodes: Vec<usize>,
    fine_to_kernel: Vec<Option<usize>>,
    coarse_nodes: Vec<usize>,
}

impl InterpOperators {
    pub fn build(grid: &GridPair) -> Self {
        let pi = build_pi(grid);
        let p = build_prolongation(grid);
        let n = grid.n_fine();
        let mut kernel_nodes = Vec::with_capacity(n - grid.n_coarse());
        let mut fine_to_kernel = vec![None; n];
        for (f, slot) in fine_to_kernel.iter_mut().enumerate() {
            if grid.fine_to_coarse(f).is_none() {
                *slot = Some(kernel_nodes.len());
                kernel_nodes.push(f);
            }
        }
        Self {
            pi_t: pi.transpose(),
            p_t: p.transpose(),
            pi,
            p,
            kernel_nodes,
            fine_to_kernel,
            coarse_nodes: (0..grid.n_coarse()).map(|c| grid.coarse_to_fine(c)).collect(),
        }
    }

    pub fn n_fine(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_coarse(&self) -> usize {
        self.p.ncols()
    }

    /// Kernel dimension `ℓ = n - m`.
    pub fn ell(&self) -> usize {
        self.kernel_nodes.len()
    }

    pub fn kernel_nodes(&self) -> &[usize] {
        &self.kernel_nodes
    }

    /// Fine node at coarse node `c`.
    pub fn coarse_fine_node(&self, c: usize) -> usize {
        self.coarse_nodes[c]
    }

    pub fn kernel_index(&self, fine: usize) -> Option<usize> {
        self.fine_to_kernel[fine]
    }

    pub fn prolong(&self, w: &[f64]) -> Result<Vec<f64>> {
        if w.len() != self.n_coarse() {
            return Err(Error::DimensionMismatch {
                expected: self.n_coarse(),
                got: w.len(),
            });
        }
        Ok(self.p.mul_vec(w))
    }

    /// `x - P Π x`, i.e. the kernel part of a fine vector.
    pub fn kernel_part(&self, x: &[f64]) -> Vec<f64> {
        let w = self.pi.mul_vec(x);
        let mut out = x.to_vec();
        self.p.mul_vec_acc(-1.0, &w, &mut out);
        out
    }

    /// `out = Z c`.
    pub fn z_apply(&self, c: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&f, &v) in self.kernel_nodes.iter().zip(c) {
            out[f] = v;
        }
        let w = self.pi.mul_vec(out);
        self.p.mul_vec_acc(-1.0, &w, out);
    }

    pub fn z_mul(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_fine()];
        self.z_apply(c, &mut out);
        out
    }

    /// `out = Zᵀ y`.
    pub fn zt_apply(&self, y: &[f64], out: &mut [f64]) {
        let w = self.p_t.mul_vec(y);
        let mut t = y.to_vec();
        self.pi_t.mul_vec_acc(-1.0, &w, &mut t);
        for (o, &f) in out.iter_mut().zip(&self.kernel_nodes) {
            *o = t[f];
        }
    }

    pub fn zt_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ell()];
        self.zt_apply(y, &mut out);
        out
    }

    /// Kernel coordinates of a fine vector `ψ` with `Π ψ = 0`: the unique `c`
    /// with `Z c = ψ`. Coarse-node values of `ψ` equal `-Π E c`, which is
    /// undone by adding back their prolongation.
    pub fn kernel_coords(&self, psi: &[f64]) -> Vec<f64> {
        let at_coarse: Vec<f64> = self.coarse_nodes.iter().map(|&f| psi[f]).collect();
        let mut t = psi.to_vec();
        self.p.mul_vec_acc(-1.0, &at_coarse, &mut t);
        self.kernel_nodes.iter().map(|&f| t[f]).collect()
    }

    /// Explicit `Z` (n × ℓ). Intended for small meshes.
    pub fn z_csr(&self) -> CsrMatrix {
        let ppi = self.p.matmul(&self.pi);
        let mut trip = Vec::new();
        for f in 0..self.n_fine() {
            if let Some(q) = self.fine_to_kernel[f] {
                trip.push((f, q, 1.0));
            }
            let (cols, vals) = ppi.row(f);
            for (&c, &v) in cols.iter().zip(vals) {
                if let Some(q) = self.fine_to_kernel[c] {
                    trip.push((f, q, -v));
                }
            }
        }
        CsrMatrix::from_triplets(self.n_fine(), self.ell(), &trip)
    }
}

/// Stability constants of `Π`, measured as the largest ratios
/// `H⁻¹‖v - Πv‖_{L2} / |v|_{H1}` and `|Πv|_{H1} / |v|_{H1}` over the fine space.
#[derive(Debug, Clone, Copy)]
pub struct PiStability {
    pub l2_ratio: f64,
    pub h1_ratio: f64,
}

impl PiStability {
    /// The combined constant `C†`.
    pub fn c_dagger(&self) -> f64 {
        self.l2_ratio.max(self.h1_ratio)
    }
}

/// Measures [`PiStability`] by Lanczos on the generalized eigenproblems
/// against the unit-coefficient stiffness `k_unit`.
pub fn measure_pi_stability(
    grid: &GridPair,
    interp: &InterpOperators,
    k_unit: &CsrMatrix,
    mass: &CsrMatrix,
    iters: usize,
) -> Result<PiStability> {
    let n = grid.n_fine();
    let kinv = BandedCholesky::factor(k_unit)?;
    let inv_h2 = 1.0 / grid.coarse_h().powi(2);
    let l2_op = FnOperator::symmetric(n, |x: &[f64], y: &mut [f64]| {
        let e = interp.kernel_part(x);
        let me = mass.mul_vec(&e);
        let w = interp.p_t.mul_vec(&me);
        let mut t = me;
        interp.pi_t.mul_vec_acc(-1.0, &w, &mut t);
        for (yi, ti) in y.iter_mut().zip(&t) {
            *yi = inv_h2 * ti;
        }
    });
    let h1_op = FnOperator::symmetric(n, |x: &[f64], y: &mut [f64]| {
        let v = interp.p.mul_vec(&interp.pi.mul_vec(x));
        let kv = k_unit.mul_vec(&v);
        interp.pi_t.mul_vec_into(&interp.p_t.mul_vec(&kv), y);
    });
    let top = |est: LanczosEstimate| est.lambda_max.max(0.0).sqrt();
    let l2 = lanczos_extremes(&l2_op, &kinv, iters, SpectrumMode::Definite)?;
    let h1 = lanczos_extremes(&h1_op, &kinv, iters, SpectrumMode::Definite)?;
    Ok(PiStability {
        l2_ratio: top(l2),
        h1_ratio: top(h1),
    })
}
