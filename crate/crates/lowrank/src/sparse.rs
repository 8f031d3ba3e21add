//! Sparse matrices in compressed sparse row (CSR) layout.
//!
//! The operator DAG stores graph adjacencies as CSR leaves. Both multiplication
//! directions are provided: `mul_dense` streams rows in CSR order, while
//! `tr_mul_dense` scatters rows into columns, which is exactly a CSC-view
//! multiply of the transpose without copying any data.

use nalgebra::DMatrix;

/// Sparse f64 matrix, compressed sparse row. Column indices are sorted and
/// unique within each row; immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum SparseError {
    #[error("entry index ({row}, {col}) out of bounds for {nrows}x{ncols} matrix")]
    IndexOutOfBounds {
        row: usize,
        col: usize,
        nrows: usize,
        ncols: usize,
    },
    #[error("non-finite value at entry ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

impl CsrMatrix {
    /// Builds from (row, col, value) triplets. Duplicate coordinates are merged
    /// by summing their values; explicit zeros are kept.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self, SparseError> {
        for &(r, c, v) in triplets {
            if r >= nrows || c >= ncols {
                return Err(SparseError::IndexOutOfBounds {
                    row: r,
                    col: c,
                    nrows,
                    ncols,
                });
            }
            if !v.is_finite() {
                return Err(SparseError::NonFinite { row: r, col: c });
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|t| (t.0, t.1));
        sorted.dedup_by(|next, kept| {
            if next.0 == kept.0 && next.1 == kept.1 {
                kept.2 += next.2;
                true
            } else {
                false
            }
        });

        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        for &(r, c, v) in &sorted {
            indices.push(c);
            values.push(v);
            indptr[r + 1] = indices.len();
        }
        for r in 0..nrows {
            if indptr[r + 1] < indptr[r] {
                indptr[r + 1] = indptr[r];
            }
        }
        Ok(Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        Self {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: diag.to_vec(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triplets = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    triplets.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &triplets).expect("indices in bounds")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn has_entry(&self, r: usize, c: usize) -> bool {
        self.row(r).0.binary_search(&c).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    /// Weighted row sums (degrees for an adjacency matrix).
    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows)
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }

    /// New matrix with row `r` scaled by `factors[r]`.
    pub fn scale_rows(&self, factors: &[f64]) -> Self {
        assert_eq!(factors.len(), self.nrows);
        let mut out = self.clone();
        for (r, &factor) in factors.iter().enumerate() {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] *= factor;
            }
        }
        out
    }

    /// Symmetrizes by elementwise max of the matrix and its transpose.
    pub fn symmetrize_max(&self) -> Self {
        assert_eq!(self.nrows, self.ncols);
        let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(2 * self.nnz());
        for (r, c, v) in self.iter() {
            triplets.push((r, c, v));
            triplets.push((c, r, v));
        }
        triplets.sort_by(|a, b| {
            (a.0, a.1)
                .cmp(&(b.0, b.1))
                .then(a.2.total_cmp(&b.2).reverse())
        });
        triplets.dedup_by_key(|t| (t.0, t.1));
        Self::from_triplets(self.nrows, self.ncols, &triplets).expect("indices in bounds")
    }

    /// self * g for a dense right factor.
    pub fn mul_dense(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.ncols, g.nrows(), "dimension mismatch in CSR multiply");
        let p = g.ncols();
        let mut out = DMatrix::zeros(self.nrows, p);
        for col in 0..p {
            let gcol = g.column(col);
            let mut ocol = out.column_mut(col);
            for r in 0..self.nrows {
                let mut acc = 0.0;
                for k in self.indptr[r]..self.indptr[r + 1] {
                    acc += self.values[k] * gcol[self.indices[k]];
                }
                ocol[r] = acc;
            }
        }
        out
    }

    /// selfᵀ * g without materializing the transpose: the CSR buffers are read
    /// in place as a CSC view of selfᵀ.
    pub fn tr_mul_dense(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(
            self.nrows,
            g.nrows(),
            "dimension mismatch in CSR transpose multiply"
        );
        let p = g.ncols();
        let mut out = DMatrix::zeros(self.ncols, p);
        for col in 0..p {
            let gcol = g.column(col);
            let mut ocol = out.column_mut(col);
            for r in 0..self.nrows {
                let coeff = gcol[r];
                if coeff == 0.0 {
                    continue;
                }
                for k in self.indptr[r]..self.indptr[r + 1] {
                    ocol[self.indices[k]] += self.values[k] * coeff;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.iter() {
            out[(r, c)] = v;
        }
        out
    }
}
