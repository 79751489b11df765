//! Compressed sparse row matrices.
//!
//! Rows are stored with strictly increasing column indices. Construction from
//! triplets sums duplicates in insertion order, so two assemblies that emit the
//! same triplet stream produce bit-identical matrices.

use std::io::{self, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicate entries are
    /// summed in the order they appear in `triplets`.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        // stable bucket sort by row
        let mut next = counts.clone();
        let mut bucket = vec![(0usize, 0.0f64); triplets.len()];
        for &(r, c, v) in triplets {
            bucket[next[r]] = (c, v);
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        for r in 0..nrows {
            let row = &mut bucket[counts[r]..counts[r + 1]];
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.iter().copied();
            if let Some((mut cur_c, mut cur_v)) = iter.next() {
                for (c, v) in iter {
                    if c == cur_c {
                        cur_v += v;
                    } else {
                        col_idx.push(cur_c);
                        values.push(cur_v);
                        cur_c = c;
                        cur_v = v;
                    }
                }
                col_idx.push(cur_c);
                values.push(cur_v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds a matrix row by row; each row must have sorted, unique columns.
    pub(crate) fn from_sorted_rows(nrows: usize, ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        debug_assert_eq!(rows.len(), nrows);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for row in rows {
            for (c, v) in row {
                debug_assert!(c < ncols);
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `y = self * x`
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "spmv: input length");
        assert_eq!(y.len(), self.nrows, "spmv: output length");
        for (r, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            *out = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y += alpha * self * x`
    pub fn mul_vec_acc(&self, alpha: f64, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols, "spmv: input length");
        assert_eq!(y.len(), self.nrows, "spmv: output length");
        for (r, out) in y.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            let s: f64 = cols.iter().zip(vals).map(|(&c, &v)| v * x[c]).sum();
            *out += alpha * s;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                col_idx[next[c]] = r;
                values[next[c]] = v;
                next[c] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Sparse product `self * rhs` (row-wise Gustavson).
    pub fn matmul(&self, rhs: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, rhs.nrows, "matmul: inner dimension");
        let mut acc = vec![0.0; rhs.ncols];
        let mut marker = vec![usize::MAX; rhs.ncols];
        let mut touched: Vec<usize> = Vec::new();
        let mut rows = Vec::with_capacity(self.nrows);
        for r in 0..self.nrows {
            touched.clear();
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rc, rv) = rhs.row(k);
                for (&c, &b) in rc.iter().zip(rv) {
                    if marker[c] != r {
                        marker[c] = r;
                        acc[c] = 0.0;
                        touched.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            touched.sort_unstable();
            rows.push(touched.iter().map(|&c| (c, acc[c])).collect());
        }
        Self::from_sorted_rows(self.nrows, rhs.ncols, rows)
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry magnitude.
    pub fn symmetry_defect(&self) -> f64 {
        let t = self.transpose();
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - t.get(r, c)).abs());
            }
            let (cols, vals) = t.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                worst = worst.max((v - self.get(r, c)).abs());
            }
        }
        worst / scale
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                d[(r, c)] = v;
            }
        }
        d
    }

    /// Extracts the dense submatrix `self[rows, cols]`.
    pub fn dense_block(&self, rows: &[usize], cols: &[usize]) -> nalgebra::DMatrix<f64> {
        let mut pos = std::collections::HashMap::with_capacity(cols.len());
        for (k, &c) in cols.iter().enumerate() {
            pos.insert(c, k);
        }
        let mut d = nalgebra::DMatrix::zeros(rows.len(), cols.len());
        for (i, &r) in rows.iter().enumerate() {
            let (rc, rv) = self.row(r);
            for (&c, &v) in rc.iter().zip(rv) {
                if let Some(&j) = pos.get(&c) {
                    d[(i, j)] = v;
                }
            }
        }
        d
    }

    /// Sparse submatrix `self[rows, cols]`; `cols` must be increasing.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        debug_assert!(cols.windows(2).all(|w| w[0] < w[1]));
        let out = rows
            .iter()
            .map(|&r| {
                let (rc, rv) = self.row(r);
                rc.iter()
                    .zip(rv)
                    .filter_map(|(c, &v)| cols.binary_search(c).ok().map(|j| (j, v)))
                    .collect()
            })
            .collect();
        CsrMatrix::from_sorted_rows(rows.len(), cols.len(), out)
    }

    /// Coordinate text export: a `%` header line with the shape followed by one
    /// `row col value` line per stored entry (0-based indices).
    pub fn write_coordinate<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "% {} {} {}", self.nrows, self.ncols, self.nnz())?;
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                writeln!(w, "{r} {c} {v:e}")?;
            }
        }
        Ok(())
    }

    pub fn read_coordinate(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty matrix file".into()))?;
        let dims: Vec<usize> = header
            .trim_start_matches('%')
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::Parse(format!("bad header `{header}`"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(Error::Parse(format!("bad header `{header}`")));
        }
        let mut trip = Vec::with_capacity(dims[2]);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let mut field = || it.next().ok_or_else(|| Error::Parse(format!("short line `{line}`")));
            let r: usize = field()?.parse().map_err(|_| Error::Parse(line.into()))?;
            let c: usize = field()?.parse().map_err(|_| Error::Parse(line.into()))?;
            let v: f64 = field()?.parse().map_err(|_| Error::Parse(line.into()))?;
            if r >= dims[0] || c >= dims[1] {
                return Err(Error::Parse(format!("entry out of range `{line}`")));
            }
            trip.push((r, c, v));
        }
        Ok(Self::from_triplets(dims[0], dims[1], &trip))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 2.0), (0, 2, 1.0), (1, 1, 3.0), (2, 0, 1.0), (2, 2, 4.0), (0, 0, 1.0)],
        )
    }

    #[test]
    fn duplicates_are_summed() {
        let a = sample();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.nnz(), 5);
    }

    #[test]
    fn matmul_matches_dense() {
        let a = sample();
        let b = CsrMatrix::from_triplets(3, 2, &[(0, 1, 1.0), (1, 0, -2.0), (2, 0, 0.5), (2, 1, 3.0)]);
        let c = a.matmul(&b).to_dense();
        let expect = a.to_dense() * b.to_dense();
        assert!((c - expect).abs().max() < 1e-15);
    }

    #[test]
    fn transpose_twice_is_identity() {
        let a = sample();
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.symmetry_defect(), 0.0);
    }

    #[test]
    fn coordinate_round_trip() {
        let a = sample();
        let mut buf = Vec::new();
        a.write_coordinate(&mut buf).unwrap();
        let b = CsrMatrix::read_coordinate(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
