//! Matrix-free access to feature matrices.
//!
//! Every spectral computation in the crate touches the feature matrix only
//! through [`FeatureOperator`]: a product with the matrix and a product with
//! its transpose. Both products are parallel over output entries and each
//! output entry is accumulated in a fixed order, so results do not depend on
//! the size of the rayon pool.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::CHUNK;

/// An `N × D` matrix available only through products.
pub trait FeatureOperator: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;

    /// `y = A x`, with `x.len() == n_cols` and `y.len() == n_rows`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// `v = Aᵀ u`, with `u.len() == n_rows` and `v.len() == n_cols`.
    fn apply_transpose(&self, u: &[f64], v: &mut [f64]);

    /// Materializes the operator. Costs one transposed product per row, so
    /// it is meant for small instances and tests.
    fn to_dense(&self) -> DMatrix<f64> {
        let (n, d) = (self.n_rows(), self.n_cols());
        let mut out = DMatrix::zeros(n, d);
        let mut e = vec![0.0; n];
        let mut row = vec![0.0; d];
        for i in 0..n {
            e[i] = 1.0;
            self.apply_transpose(&e, &mut row);
            e[i] = 0.0;
            for (j, &v) in row.iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

impl<T: FeatureOperator + ?Sized> FeatureOperator for &T {
    fn n_rows(&self) -> usize {
        (**self).n_rows()
    }
    fn n_cols(&self) -> usize {
        (**self).n_cols()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (**self).apply(x, y)
    }
    fn apply_transpose(&self, u: &[f64], v: &mut [f64]) {
        (**self).apply_transpose(u, v)
    }
}

/// Counting-sort transpose of a row-compressed pattern. Row ids inside each
/// column come out ascending.
fn transpose_pattern(
    n_rows: usize,
    n_cols: usize,
    row_ptr: impl Fn(usize) -> (usize, usize),
    indices: &[u32],
    track_source: bool,
) -> (Vec<usize>, Vec<u32>, Vec<usize>) {
    let mut col_ptr = vec![0usize; n_cols + 1];
    for &c in indices {
        col_ptr[c as usize + 1] += 1;
    }
    for c in 0..n_cols {
        col_ptr[c + 1] += col_ptr[c];
    }
    let mut next = col_ptr.clone();
    let mut col_rows = vec![0u32; indices.len()];
    // position in the row-compressed arrays for each transposed slot
    let mut source = vec![0usize; if track_source { indices.len() } else { 0 }];
    for i in 0..n_rows {
        let (lo, hi) = row_ptr(i);
        for p in lo..hi {
            let c = indices[p] as usize;
            col_rows[next[c]] = i as u32;
            if track_source {
                source[next[c]] = p;
            }
            next[c] += 1;
        }
    }
    (col_ptr, col_rows, source)
}

/// Random-binning feature matrix: every row holds exactly one non-zero per
/// grid and every stored value is the same constant `1/√R`.
///
/// Row `i`'s column for grid `j` sits at `indices[i * R + j]`. A column-major
/// copy of the pattern is kept for transposed products.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    n_grids: usize,
    value: f64,
    indices: Vec<u32>,
    col_ptr: Vec<usize>,
    col_rows: Vec<u32>,
}

impl SparseFeatureMatrix {
    /// Builds the matrix from per-row column lists (grid-major inside a row).
    /// Columns must be `0..n_cols` and each must be used at least once.
    pub fn from_row_indices(
        n_rows: usize,
        n_cols: usize,
        n_grids: usize,
        indices: Vec<u32>,
    ) -> Result<Self> {
        if n_grids == 0 {
            return Err(Error::InvalidConfig("grid count must be at least 1".into()));
        }
        if indices.len() != n_rows * n_grids {
            return Err(Error::LengthMismatch {
                left: indices.len(),
                right: n_rows * n_grids,
            });
        }
        if let Some(&c) = indices.iter().find(|&&c| c as usize >= n_cols) {
            return Err(Error::InvalidConfig(format!(
                "column {c} out of range for {n_cols} columns"
            )));
        }
        let (col_ptr, col_rows, _) =
            transpose_pattern(n_rows, n_cols, |i| (i * n_grids, (i + 1) * n_grids), &indices, false);
        if let Some(c) = (0..n_cols).find(|&c| col_ptr[c] == col_ptr[c + 1]) {
            return Err(Error::InvalidConfig(format!("column {c} is empty")));
        }
        Ok(Self {
            n_rows,
            n_cols,
            n_grids,
            value: 1.0 / (n_grids as f64).sqrt(),
            indices,
            col_ptr,
            col_rows,
        })
    }

    pub fn n_grids(&self) -> usize {
        self.n_grids
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// The common value of every stored entry, `1/√R`.
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Column ids of row `i`, one per grid.
    pub fn row(&self, i: usize) -> &[u32] {
        &self.indices[i * self.n_grids..(i + 1) * self.n_grids]
    }

    /// Number of rows that land in column `c`.
    pub fn column_occupancy(&self, c: usize) -> usize {
        self.col_ptr[c + 1] - self.col_ptr[c]
    }

    /// Rows (ascending) that land in column `c`.
    pub fn column_rows(&self, c: usize) -> &[u32] {
        &self.col_rows[self.col_ptr[c]..self.col_ptr[c + 1]]
    }
}

impl FeatureOperator for SparseFeatureMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        let r = self.n_grids;
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(chunk, ys)| {
            let base = chunk * CHUNK;
            for (off, yi) in ys.iter_mut().enumerate() {
                let i = base + off;
                let s: f64 = self.indices[i * r..(i + 1) * r]
                    .iter()
                    .map(|&c| x[c as usize])
                    .sum();
                *yi = self.value * s;
            }
        });
    }

    fn apply_transpose(&self, u: &[f64], v: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n_rows);
        debug_assert_eq!(v.len(), self.n_cols);
        v.par_chunks_mut(CHUNK).enumerate().for_each(|(chunk, vs)| {
            let base = chunk * CHUNK;
            for (off, vc) in vs.iter_mut().enumerate() {
                let c = base + off;
                let s: f64 = self.col_rows[self.col_ptr[c]..self.col_ptr[c + 1]]
                    .iter()
                    .map(|&r| u[r as usize])
                    .sum();
                *vc = self.value * s;
            }
        });
    }
}

/// General compressed-sparse-row matrix with explicit values.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    col_ptr: Vec<usize>,
    col_rows: Vec<u32>,
    col_values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidConfig(format!(
                    "entry ({r}, {c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            indices.push(c as u32);
            values.push(v);
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let (col_ptr, col_rows, source) =
            transpose_pattern(n_rows, n_cols, |i| (row_ptr[i], row_ptr[i + 1]), &indices, true);
        let col_values = source.iter().map(|&p| values[p]).collect();
        Ok(Self {
            n_rows,
            n_cols,
            row_ptr,
            indices,
            values,
            col_ptr,
            col_rows,
            col_values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut t = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    t.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t).expect("entries are in range")
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }
}

impl FeatureOperator for CsrMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(chunk, ys)| {
            let base = chunk * CHUNK;
            for (off, yi) in ys.iter_mut().enumerate() {
                let i = base + off;
                let (lo, hi) = (self.row_ptr[i], self.row_ptr[i + 1]);
                *yi = self.indices[lo..hi]
                    .iter()
                    .zip(&self.values[lo..hi])
                    .map(|(&c, &v)| v * x[c as usize])
                    .sum();
            }
        });
    }

    fn apply_transpose(&self, u: &[f64], v: &mut [f64]) {
        v.par_chunks_mut(CHUNK).enumerate().for_each(|(chunk, vs)| {
            let base = chunk * CHUNK;
            for (off, vc) in vs.iter_mut().enumerate() {
                let c = base + off;
                let (lo, hi) = (self.col_ptr[c], self.col_ptr[c + 1]);
                *vc = self.col_rows[lo..hi]
                    .iter()
                    .zip(&self.col_values[lo..hi])
                    .map(|(&r, &w)| w * u[r as usize])
                    .sum();
            }
        });
    }
}

/// Dense row-major feature matrix (random Fourier features).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

/// Rows per partial sum in the transposed product.
const DENSE_ROW_BLOCK: usize = 256;

impl DenseFeatureMatrix {
    pub fn from_row_major(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: n_rows * n_cols,
            });
        }
        Ok(Self {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

impl FeatureOperator for DenseFeatureMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_cols(&self) -> usize {
        self.n_cols
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            *yi = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        });
    }

    fn apply_transpose(&self, u: &[f64], v: &mut [f64]) {
        let d = self.n_cols;
        let partials: Vec<Vec<f64>> = (0..self.n_rows)
            .collect::<Vec<_>>()
            .par_chunks(DENSE_ROW_BLOCK)
            .map(|rows| {
                let mut acc = vec![0.0; d];
                for &i in rows {
                    let w = u[i];
                    for (a, z) in acc.iter_mut().zip(self.row(i)) {
                        *a += w * z;
                    }
                }
                acc
            })
            .collect();
        v.fill(0.0);
        for p in &partials {
            for (a, b) in v.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
}
