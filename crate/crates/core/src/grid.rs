//! Nested uniform quadrilateral meshes on the unit square.
//!
//! Nodes of both meshes are numbered lexicographically by (row, column) over
//! interior nodes only: the node at grid position `(i, j)` (column `i`, row `j`,
//! both `1..cells`) gets index `(j - 1) * (cells - 1) + (i - 1)`. Elements are
//! numbered `ey * cells + ex` and list their corners counter-clockwise from the
//! lower-left one. Boundary corners are `None` (homogeneous Dirichlet).

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GridPair {
    coarse_cells: usize,
    refine: usize,
    fine_elements: Vec<[Option<usize>; 4]>,
    coarse_elements: Vec<[Option<usize>; 4]>,
    coarse_to_fine: Vec<usize>,
    fine_to_coarse: Vec<Option<usize>>,
}

/// Coarse-node patch: `omega` holds the coarse cells sharing the node,
/// `omega_tilde` adds one layer of cells around it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    pub center: usize,
    pub omega: Vec<usize>,
    pub omega_tilde: Vec<usize>,
    /// Fine interior nodes strictly inside `omega`, the center excluded.
    pub local_kernel_indices: Vec<usize>,
}

fn element_table(cells: usize) -> Vec<[Option<usize>; 4]> {
    let side = cells - 1;
    let node = |i: usize, j: usize| {
        if i == 0 || j == 0 || i == cells || j == cells {
            None
        } else {
            Some((j - 1) * side + (i - 1))
        }
    };
    let mut out = Vec::with_capacity(cells * cells);
    for ey in 0..cells {
        for ex in 0..cells {
            out.push([
                node(ex, ey),
                node(ex + 1, ey),
                node(ex + 1, ey + 1),
                node(ex, ey + 1),
            ]);
        }
    }
    out
}

impl GridPair {
    pub fn build_nested(coarse_cells: usize, refine: usize) -> Result<Self> {
        if coarse_cells < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 coarse cells per side, got {coarse_cells}"
            )));
        }
        if refine < 2 {
            return Err(Error::InvalidGrid(format!(
                "refinement factor must be at least 2, got {refine}"
            )));
        }
        let nf = coarse_cells * refine;
        let fine_side = nf - 1;
        let mut coarse_to_fine = Vec::with_capacity((coarse_cells - 1).pow(2));
        let mut fine_to_coarse = vec![None; fine_side * fine_side];
        for cj in 1..coarse_cells {
            for ci in 1..coarse_cells {
                let f = (cj * refine - 1) * fine_side + (ci * refine - 1);
                fine_to_coarse[f] = Some(coarse_to_fine.len());
                coarse_to_fine.push(f);
            }
        }
        Ok(Self {
            coarse_cells,
            refine,
            fine_elements: element_table(nf),
            coarse_elements: element_table(coarse_cells),
            coarse_to_fine,
            fine_to_coarse,
        })
    }

    /// Coarse cells per side `N`.
    pub fn coarse_cells(&self) -> usize {
        self.coarse_cells
    }

    pub fn refine_factor(&self) -> usize {
        self.refine
    }

    /// Fine cells per side `N * R`.
    pub fn fine_cells(&self) -> usize {
        self.coarse_cells * self.refine
    }

    pub fn coarse_h(&self) -> f64 {
        1.0 / self.coarse_cells as f64
    }

    pub fn fine_h(&self) -> f64 {
        1.0 / self.fine_cells() as f64
    }

    /// Number of fine interior nodes `n`.
    pub fn n_fine(&self) -> usize {
        (self.fine_cells() - 1).pow(2)
    }

    /// Number of coarse interior nodes `m`.
    pub fn n_coarse(&self) -> usize {
        (self.coarse_cells - 1).pow(2)
    }

    pub fn fine_elements(&self) -> &[[Option<usize>; 4]] {
        &self.fine_elements
    }

    pub fn coarse_elements(&self) -> &[[Option<usize>; 4]] {
        &self.coarse_elements
    }

    /// Lower-left corner of fine element `e`.
    pub fn fine_element_origin(&self, e: usize) -> [f64; 2] {
        let nf = self.fine_cells();
        let h = self.fine_h();
        [(e % nf) as f64 * h, (e / nf) as f64 * h]
    }

    /// Coarse cell `(cx, cy)` containing fine element `e`.
    pub fn coarse_cell_of(&self, e: usize) -> (usize, usize) {
        let nf = self.fine_cells();
        ((e % nf) / self.refine, (e / nf) / self.refine)
    }

    /// Grid position `(i, j)` of fine interior node `f`.
    pub fn fine_node_ij(&self, f: usize) -> (usize, usize) {
        let side = self.fine_cells() - 1;
        (f % side + 1, f / side + 1)
    }

    pub fn fine_node_index(&self, i: usize, j: usize) -> Option<usize> {
        let nf = self.fine_cells();
        if i == 0 || j == 0 || i >= nf || j >= nf {
            None
        } else {
            Some((j - 1) * (nf - 1) + (i - 1))
        }
    }

    pub fn fine_node_position(&self, f: usize) -> [f64; 2] {
        let (i, j) = self.fine_node_ij(f);
        let h = self.fine_h();
        [i as f64 * h, j as f64 * h]
    }

    /// Grid position `(I, J)` of coarse interior node `c`.
    pub fn coarse_node_ij(&self, c: usize) -> (usize, usize) {
        let side = self.coarse_cells - 1;
        (c % side + 1, c / side + 1)
    }

    pub fn coarse_node_index(&self, i: usize, j: usize) -> Option<usize> {
        let n = self.coarse_cells;
        if i == 0 || j == 0 || i >= n || j >= n {
            None
        } else {
            Some((j - 1) * (n - 1) + (i - 1))
        }
    }

    pub fn coarse_node_position(&self, c: usize) -> [f64; 2] {
        let (i, j) = self.coarse_node_ij(c);
        let h = self.coarse_h();
        [i as f64 * h, j as f64 * h]
    }

    pub fn coarse_node_positions(&self) -> Vec<[f64; 2]> {
        (0..self.n_coarse()).map(|c| self.coarse_node_position(c)).collect()
    }

    /// Fine node at the same location as coarse node `c`.
    pub fn coarse_to_fine(&self, c: usize) -> usize {
        self.coarse_to_fine[c]
    }

    pub fn fine_to_coarse(&self, f: usize) -> Option<usize> {
        self.fine_to_coarse[f]
    }

    fn check_coarse(&self, c: usize) -> Result<()> {
        if c >= self.n_coarse() {
            Err(Error::IndexOutOfRange {
                index: c,
                size: self.n_coarse(),
            })
        } else {
            Ok(())
        }
    }

    pub fn patch(&self, c: usize) -> Result<Patch> {
        self.check_coarse(c)?;
        let n = self.coarse_cells;
        let (ci, cj) = self.coarse_node_ij(c);
        let mut omega = Vec::with_capacity(4);
        for cy in cj - 1..=cj {
            for cx in ci - 1..=ci {
                omega.push(cy * n + cx);
            }
        }
        let mut omega_tilde = Vec::with_capacity(16);
        for cy in cj.saturating_sub(2)..=(cj + 1).min(n - 1) {
            for cx in ci.saturating_sub(2)..=(ci + 1).min(n - 1) {
                omega_tilde.push(cy * n + cx);
            }
        }
        let r = self.refine;
        let center = self.coarse_to_fine[c];
        let mut local = Vec::with_capacity((2 * r - 1).pow(2) - 1);
        for j in (cj - 1) * r + 1..(cj + 1) * r {
            for i in (ci - 1) * r + 1..(ci + 1) * r {
                let f = self.fine_node_index(i, j).expect("interior of an interior patch");
                if f != center {
                    local.push(f);
                }
            }
        }
        Ok(Patch {
            center: c,
            omega,
            omega_tilde,
            local_kernel_indices: local,
        })
    }

    /// Chebyshev distance, in coarse cells, between the coarse cell holding
    /// fine element `e` and the cells sharing coarse node `c`.
    pub fn layer_distance(&self, c: usize, e: usize) -> usize {
        let (ci, cj) = self.coarse_node_ij(c);
        let (cx, cy) = self.coarse_cell_of(e);
        let dist = |cell: usize, node: usize| {
            if cell + 1 < node {
                node - 1 - cell
            } else if cell > node {
                cell - node
            } else {
                0
            }
        };
        dist(cx, ci).max(dist(cy, cj))
    }

    /// Largest layer distance any element can have from coarse node `c`.
    pub fn max_layer(&self, c: usize) -> usize {
        let (ci, cj) = self.coarse_node_ij(c);
        let n = self.coarse_cells;
        (ci - 1).max(n - 1 - ci).max(cj - 1).max(n - 1 - cj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts() {
        let g = GridPair::build_nested(2, 2).unwrap();
        assert_eq!((g.n_fine(), g.n_coarse()), (9, 1));
        let g = GridPair::build_nested(8, 4).unwrap();
        assert_eq!((g.n_fine(), g.n_coarse()), (961, 49));
        let g = GridPair::build_nested(20, 16).unwrap();
        assert_eq!(g.fine_h(), 1.0 / 320.0);
    }

    #[test]
    fn rejects_degenerate() {
        assert!(GridPair::build_nested(1, 4).is_err());
        assert!(GridPair::build_nested(4, 1).is_err());
    }

    #[test]
    fn coarse_nodes_coincide_with_fine_nodes() {
        let g = GridPair::build_nested(5, 3).unwrap();
        for c in 0..g.n_coarse() {
            let f = g.coarse_to_fine(c);
            let a = g.coarse_node_position(c);
            let b = g.fine_node_position(f);
            assert!((a[0] - b[0]).abs() < 1e-14 && (a[1] - b[1]).abs() < 1e-14);
            assert_eq!(g.fine_to_coarse(f), Some(c));
        }
    }

    #[test]
    fn single_patch_is_whole_domain() {
        let g = GridPair::build_nested(2, 2).unwrap();
        let p = g.patch(0).unwrap();
        assert_eq!(p.omega, vec![0, 1, 2, 3]);
        assert_eq!(p.omega_tilde, p.omega);
        assert_eq!(p.local_kernel_indices.len(), 8);
        assert!(g.patch(1).is_err());
    }

    #[test]
    fn interior_patch_sizes() {
        let g = GridPair::build_nested(6, 2).unwrap();
        let c = g.coarse_node_index(3, 3).unwrap();
        let p = g.patch(c).unwrap();
        assert_eq!(p.omega.len(), 4);
        assert_eq!(p.omega_tilde.len(), 16);
        assert!(p.omega.iter().all(|e| p.omega_tilde.contains(e)));
    }

    #[test]
    fn layer_distances() {
        let g = GridPair::build_nested(8, 2).unwrap();
        let c = g.coarse_node_index(1, 1).unwrap();
        let nf = g.fine_cells();
        assert_eq!(g.layer_distance(c, 0), 0);
        assert_eq!(g.layer_distance(c, nf * nf - 1), 6);
        // fine element in coarse cell (2, 0) lies in the first extra layer
        assert_eq!(g.layer_distance(c, 2 * g.refine_factor()), 1);
        assert_eq!(g.max_layer(c), 6);
    }
}
