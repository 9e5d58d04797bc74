//! Coordinate-format sparse matrices.
//!
//! Entries are kept in canonical row-major order with duplicates summed and
//! explicit zeros dropped. Row and column index tables are built once so the
//! dynamics can walk a single row (one equality constraint) or a single column
//! (one agent's couplings) without scanning the whole matrix.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    /// `(row, col, value)` in row-major order.
    entries: Vec<(usize, usize, f64)>,
    row_ptr: Vec<usize>,
    /// Column-major view: for each column, `(row, value)` sorted by row.
    col_entries: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut raw: Vec<(usize, usize, f64)> = Vec::new();
        for (r, c, v) in triplets {
            if r >= rows {
                return Err(Error::DimensionMismatch {
                    what: "triplet row index",
                    expected: rows,
                    got: r,
                });
            }
            if c >= cols {
                return Err(Error::DimensionMismatch {
                    what: "triplet column index",
                    expected: cols,
                    got: c,
                });
            }
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite matrix entry at ({r}, {c})"
                )));
            }
            raw.push((r, c, v));
        }
        raw.sort_by_key(|a| (a.0, a.1));

        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(raw.len());
        for (r, c, v) in raw {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        entries.retain(|e| e.2 != 0.0);

        let mut row_ptr = vec![0usize; rows + 1];
        for &(r, _, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut col_entries = vec![Vec::new(); cols];
        for &(r, c, v) in &entries {
            col_entries[c].push((r, v));
        }

        Ok(Self {
            rows,
            cols,
            entries,
            row_ptr,
            col_entries,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, n, (0..n).map(|i| (i, i, 1.0))).expect("identity is well formed")
    }

    /// A matrix with no rows (programs without equality constraints).
    pub fn empty(cols: usize) -> Self {
        Self::from_triplets(0, cols, std::iter::empty()).expect("empty matrix is well formed")
    }

    pub fn from_dense(dense: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for r in 0..dense.nrows() {
            for c in 0..dense.ncols() {
                triplets.push((r, c, dense[(r, c)]));
            }
        }
        Self::from_triplets(dense.nrows(), dense.ncols(), triplets)
            .expect("finite dense matrix converts")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn triplets(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// Nonzeros of row `r` as `(col, value)`, ascending by column.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries[self.row_ptr[r]..self.row_ptr[r + 1]]
            .iter()
            .map(|&(_, c, v)| (c, v))
    }

    /// Column indices with a nonzero in row `r`.
    pub fn row_support(&self, r: usize) -> Vec<usize> {
        self.row(r).map(|(c, _)| c).collect()
    }

    /// Nonzeros of column `c` as `(row, value)`, ascending by row.
    pub fn col(&self, c: usize) -> &[(usize, f64)] {
        &self.col_entries[c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r)
            .find(|&(cc, _)| cc == c)
            .map(|(_, v)| v)
            .unwrap_or(0.0)
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("matrix-vector product", self.cols, x.len())?;
        Ok((0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect())
    }

    /// `Aᵀ y`, accumulated per column in ascending row order.
    pub fn transpose_mul_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len("transpose product", self.rows, y.len())?;
        Ok(self
            .col_entries
            .iter()
            .map(|col| col.iter().map(|&(r, v)| v * y[r]).sum())
            .collect())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] = v;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_zeros_dropped() {
        let m = SparseMatrix::from_triplets(
            2,
            2,
            vec![(1, 0, 2.0), (0, 1, 1.0), (1, 0, 3.0), (0, 0, 0.0)],
        )
        .unwrap();
        assert_eq!(m.triplets(), &[(0, 1, 1.0), (1, 0, 5.0)]);
        assert_eq!(m.col(0), &[(1, 5.0)]);
    }

    #[test]
    fn cancelling_duplicates_vanish() {
        let m = SparseMatrix::from_triplets(1, 1, vec![(0, 0, 1.0), (0, 0, -1.0)]).unwrap();
        assert_eq!(m.nnz(), 0);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn products_match_dense() {
        let m = SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (0, 2, -2.0), (1, 1, 4.0)])
            .unwrap();
        assert_eq!(m.mul_vec(&[1.0, 2.0, 3.0]).unwrap(), vec![-5.0, 8.0]);
        assert_eq!(
            m.transpose_mul_vec(&[1.0, 1.0]).unwrap(),
            vec![1.0, 4.0, -2.0]
        );
        assert!(m.mul_vec(&[1.0]).is_err());
    }
}
