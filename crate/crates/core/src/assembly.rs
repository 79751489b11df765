//! Q1 finite element assembly on the fine mesh (interior dofs only).

use rayon::prelude::*;

use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::GridPair;
use crate::linalg::{dot, CsrMatrix};

/// 2-point Gauss abscissae on `[0, 1]`; both weights are 1/2.
pub fn gauss_points() -> [f64; 2] {
    let d = 0.5 / 3f64.sqrt();
    [0.5 - d, 0.5 + d]
}

/// Bilinear shape functions on the unit square, counter-clockwise from (0, 0).
pub fn shape(s: f64, t: f64) -> [f64; 4] {
    [(1.0 - s) * (1.0 - t), s * (1.0 - t), s * t, (1.0 - s) * t]
}

/// Reference gradients `(d/ds, d/dt)` of [`shape`].
pub fn shape_grad(s: f64, t: f64) -> [[f64; 2]; 4] {
    [
        [-(1.0 - t), -(1.0 - s)],
        [1.0 - t, -s],
        [t, s],
        [-t, 1.0 - s],
    ]
}

/// Local stiffness of fine element `e`. Gradients scale by `1/h` and the
/// area element by `h²`, so the matrix does not depend on `h`.
pub fn element_stiffness(grid: &GridPair, field: &CoefficientField, e: usize) -> [[f64; 4]; 4] {
    let h = grid.fine_h();
    let o = grid.fine_element_origin(e);
    let g = gauss_points();
    let mut k = [[0.0; 4]; 4];
    for &s in &g {
        for &t in &g {
            let a = field.eval([o[0] + s * h, o[1] + t * h]);
            let d = shape_grad(s, t);
            for i in 0..4 {
                for j in 0..4 {
                    k[i][j] += 0.25 * (a[0] * d[i][0] * d[j][0] + a[1] * d[i][1] * d[j][1]);
                }
            }
        }
    }
    k
}

pub fn element_mass(h: f64) -> [[f64; 4]; 4] {
    let g = gauss_points();
    let mut m = [[0.0; 4]; 4];
    for &s in &g {
        for &t in &g {
            let phi = shape(s, t);
            for i in 0..4 {
                for j in 0..4 {
                    m[i][j] += 0.25 * h * h * phi[i] * phi[j];
                }
            }
        }
    }
    m
}

fn scatter(
    n: usize,
    elements: &[[Option<usize>; 4]],
    locals: &[[[f64; 4]; 4]],
) -> CsrMatrix {
    let mut trip = Vec::with_capacity(16 * elements.len());
    for (nodes, k) in elements.iter().zip(locals) {
        for (a, ra) in nodes.iter().enumerate() {
            let Some(r) = *ra else { continue };
            for (b, cb) in nodes.iter().enumerate() {
                if let Some(c) = *cb {
                    trip.push((r, c, k[a][b]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &trip)
}

pub fn assemble_stiffness(grid: &GridPair, field: &CoefficientField) -> CsrMatrix {
    let ne = grid.fine_elements().len();
    let locals: Vec<_> = (0..ne)
        .into_par_iter()
        .map(|e| element_stiffness(grid, field, e))
        .collect();
    scatter(grid.n_fine(), grid.fine_elements(), &locals)
}

pub fn assemble_mass(grid: &GridPair) -> CsrMatrix {
    let m = element_mass(grid.fine_h());
    let locals = vec![m; grid.fine_elements().len()];
    scatter(grid.n_fine(), grid.fine_elements(), &locals)
}

/// `L_i = ∫ y_d φ_i` by 2×2 Gauss quadrature on every fine element.
pub fn assemble_load(grid: &GridPair, y_d: &(dyn Fn([f64; 2]) -> f64 + Sync)) -> Vec<f64> {
    let h = grid.fine_h();
    let g = gauss_points();
    let locals: Vec<[f64; 4]> = (0..grid.fine_elements().len())
        .into_par_iter()
        .map(|e| {
            let o = grid.fine_element_origin(e);
            let mut l = [0.0; 4];
            for &s in &g {
                for &t in &g {
                    let v = y_d([o[0] + s * h, o[1] + t * h]);
                    let phi = shape(s, t);
                    for a in 0..4 {
                        l[a] += 0.25 * h * h * v * phi[a];
                    }
                }
            }
            l
        })
        .collect();
    let mut out = vec![0.0; grid.n_fine()];
    for (nodes, l) in grid.fine_elements().iter().zip(&locals) {
        for (a, node) in nodes.iter().enumerate() {
            if let Some(i) = *node {
                out[i] += l[a];
            }
        }
    }
    out
}

/// Fine stiffness and mass matrices.
#[derive(Debug, Clone)]
pub struct AssembledOperators {
    pub stiffness: CsrMatrix,
    pub mass: CsrMatrix,
}

impl AssembledOperators {
    pub fn assemble(grid: &GridPair, field: &CoefficientField) -> Self {
        Self {
            stiffness: assemble_stiffness(grid, field),
            mass: assemble_mass(grid),
        }
    }

    pub fn dim(&self) -> usize {
        self.stiffness.nrows()
    }

    /// `(sqrt(pᵀAp + yᵀAy), sqrt(pᵀMp + yᵀMy))` for a stacked `[p; y]`.
    pub fn pair_norms(&self, v: &[f64]) -> Result<(f64, f64)> {
        pair_norms(&self.stiffness, &self.mass, v)
    }
}

pub fn pair_norms(a: &CsrMatrix, m: &CsrMatrix, v: &[f64]) -> Result<(f64, f64)> {
    let n = a.nrows();
    if v.len() != 2 * n {
        return Err(Error::DimensionMismatch {
            expected: 2 * n,
            got: v.len(),
        });
    }
    let (p, y) = v.split_at(n);
    let quad = |mat: &CsrMatrix| (dot(p, &mat.mul_vec(p)) + dot(y, &mat.mul_vec(y))).max(0.0).sqrt();
    Ok((quad(a), quad(m)))
}
