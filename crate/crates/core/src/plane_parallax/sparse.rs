//! Compressed sparse row matrices, just enough for normal equations.

use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from rows of `(column, value)` pairs; duplicate columns in a
    /// row are summed.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows.iter().cloned() {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < ncols, "column {c} out of range");
                if last == Some(c) {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows: rows.len(),
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let ncols = rows.first().map_or(0, Vec::len);
        Self::from_rows(
            ncols,
            rows.iter()
                .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v)).collect())
                .collect(),
        )
    }

    pub fn identity(n: usize) -> Self {
        Self::from_rows(n, (0..n).map(|i| vec![(i, 1.0)]).collect())
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

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        par::map_range(self.nrows, |r| self.row(r).map(|(c, v)| v * x[c]).sum())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|r| self.row(r).find(|&(c, _)| c == r).map_or(0.0, |(_, v)| v))
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for k in 0..self.ncols {
            counts[k + 1] += counts[k];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                let slot = next[c];
                indices[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            values,
        }
    }

    /// `Aᵀ A` for this matrix `A`.
    pub fn normal_matrix(&self) -> CsrMatrix {
        let at = self.transpose();
        let rows = par::map_range(at.nrows, |r| {
            let mut acc: Vec<(usize, f64)> = Vec::new();
            for (k, a) in at.row(r) {
                acc.extend(self.row(k).map(|(c, b)| (c, a * b)));
            }
            acc
        });
        CsrMatrix::from_rows(self.ncols, rows)
    }

    /// `Aᵀ b`.
    pub fn transpose_mul_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.nrows);
        self.transpose().mul_vec(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_matrix_matches_dense() {
        let a = CsrMatrix::from_dense(&[vec![1.0, 0.0, 2.0], vec![0.0, 3.0, -1.0], vec![4.0, 0.0, 0.0], vec![0.5, 0.5, 0.5]]);
        let n = a.normal_matrix();
        let dense = [[17.25, 0.25, 2.25], [0.25, 9.25, -2.75], [2.25, -2.75, 5.25]];
        for (r, row) in dense.iter().enumerate() {
            for (c, want) in row.iter().enumerate() {
                let got = n.row(r).find(|e| e.0 == c).map_or(0.0, |e| e.1);
                assert!((got - want).abs() < 1e-12, "({r},{c}) {got} vs {want}");
            }
        }
        assert_eq!(a.transpose_mul_vec(&[1.0, 1.0, 1.0, 2.0]), vec![6.0, 4.0, 2.0]);
    }

    #[test]
    fn duplicate_entries_are_summed() {
        let m = CsrMatrix::from_rows(2, vec![vec![(1, 1.0), (0, 2.0), (1, 3.0)]]);
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(0, 2.0), (1, 4.0)]);
    }
}
