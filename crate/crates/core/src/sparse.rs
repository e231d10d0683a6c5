//! Compressed sparse column storage and the handful of kernels the
//! preconditioners and solvers need.
//!
//! A [`CscMatrix`] is normalized on construction: row indices are strictly
//! increasing within each column, duplicates are summed and explicit zeros
//! are purged, so `nnz()` is always the numeric-and-structural count.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaiError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CscMatrix {
    n_rows: usize,
    n_cols: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CscMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed, zeros (including sums that cancel) are dropped.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= n_rows {
                return Err(SaiError::IndexOutOfRange { index: i, bound: n_rows });
            }
            if j >= n_cols {
                return Err(SaiError::IndexOutOfRange { index: j, bound: n_cols });
            }
            if !v.is_finite() {
                return Err(SaiError::Domain(format!("non-finite value at ({i}, {j})")));
            }
            entries.push((j, i, v));
        }
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut col_ptr = vec![0usize; n_cols + 1];
        let mut row_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut it = entries.into_iter().peekable();
        while let Some((j, i, mut v)) = it.next() {
            while let Some(&(j2, i2, v2)) = it.peek() {
                if j2 == j && i2 == i {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                row_idx.push(i);
                values.push(v);
                col_ptr[j + 1] += 1;
            }
        }
        for j in 0..n_cols {
            col_ptr[j + 1] += col_ptr[j];
        }
        Ok(Self { n_rows, n_cols, col_ptr, row_idx, values })
    }

    /// Validates raw CSC arrays and normalizes away explicit zeros.
    pub fn try_from_raw(
        n_rows: usize,
        n_cols: usize,
        col_ptr: Vec<usize>,
        row_idx: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if col_ptr.len() != n_cols + 1 {
            return Err(SaiError::DimensionMismatch { expected: n_cols + 1, got: col_ptr.len() });
        }
        if row_idx.len() != values.len() {
            return Err(SaiError::DimensionMismatch { expected: row_idx.len(), got: values.len() });
        }
        if col_ptr[0] != 0 || col_ptr[n_cols] != row_idx.len() {
            return Err(SaiError::InvalidStructure("col_ptr must start at 0 and end at nnz".into()));
        }
        for j in 0..n_cols {
            if col_ptr[j] > col_ptr[j + 1] {
                return Err(SaiError::InvalidStructure(format!("col_ptr decreases at column {j}")));
            }
            let rows = &row_idx[col_ptr[j]..col_ptr[j + 1]];
            for w in rows.windows(2) {
                if w[0] >= w[1] {
                    return Err(SaiError::InvalidStructure(format!(
                        "row indices not strictly increasing in column {j}"
                    )));
                }
            }
            if let Some(&last) = rows.last() {
                if last >= n_rows {
                    return Err(SaiError::IndexOutOfRange { index: last, bound: n_rows });
                }
            }
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(SaiError::Domain(format!("non-finite value {v}")));
        }
        let mut m = Self { n_rows, n_cols, col_ptr, row_idx, values };
        m.purge_zeros();
        Ok(m)
    }

    fn purge_zeros(&mut self) {
        if self.values.iter().all(|&v| v != 0.0) {
            return;
        }
        let mut w = 0;
        let mut start = 0;
        for j in 0..self.n_cols {
            let end = self.col_ptr[j + 1];
            for p in start..end {
                if self.values[p] != 0.0 {
                    self.row_idx[w] = self.row_idx[p];
                    self.values[w] = self.values[p];
                    w += 1;
                }
            }
            start = end;
            self.col_ptr[j + 1] = w;
        }
        self.row_idx.truncate(w);
        self.values.truncate(w);
    }

    pub fn identity(n: usize) -> Self {
        Self {
            n_rows: n,
            n_cols: n,
            col_ptr: (0..=n).collect(),
            row_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Self { n_rows, n_cols, col_ptr: vec![0; n_cols + 1], row_idx: Vec::new(), values: Vec::new() }
    }

    /// Assembles a matrix from sparse columns. Each column must be a
    /// normalized [`SparseVector`] of dimension `n_rows`.
    pub fn from_columns(n_rows: usize, columns: &[SparseVector]) -> Result<Self> {
        let mut col_ptr = Vec::with_capacity(columns.len() + 1);
        col_ptr.push(0);
        let nnz = columns.iter().map(|c| c.nnz()).sum();
        let mut row_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for c in columns {
            if c.dim() != n_rows {
                return Err(SaiError::DimensionMismatch { expected: n_rows, got: c.dim() });
            }
            row_idx.extend_from_slice(c.indices());
            values.extend_from_slice(c.values());
            col_ptr.push(row_idx.len());
        }
        Ok(Self { n_rows, n_cols: columns.len(), col_ptr, row_idx, values })
    }

    pub fn from_dense(a: &DMatrix<f64>) -> Self {
        let mut col_ptr = vec![0];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        for j in 0..a.ncols() {
            for i in 0..a.nrows() {
                let v = a[(i, j)];
                if v != 0.0 {
                    row_idx.push(i);
                    values.push(v);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Self { n_rows: a.nrows(), n_cols: a.ncols(), col_ptr, row_idx, values }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n_rows, self.n_cols);
        for j in 0..self.n_cols {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                d[(i, j)] = v;
            }
        }
        d
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn is_square(&self) -> bool {
        self.n_rows == self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row indices and values of column `j`.
    #[inline]
    pub fn col(&self, j: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.col_ptr[j], self.col_ptr[j + 1]);
        (&self.row_idx[s..e], &self.values[s..e])
    }

    #[inline]
    pub fn col_nnz(&self, j: usize) -> usize {
        self.col_ptr[j + 1] - self.col_ptr[j]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (rows, vals) = self.col(j);
        match rows.binary_search(&i) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn column(&self, j: usize) -> SparseVector {
        let (rows, vals) = self.col(j);
        SparseVector { dim: self.n_rows, indices: rows.to_vec(), values: vals.to_vec() }
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_cols).flat_map(move |j| {
            let (rows, vals) = self.col(j);
            rows.iter().zip(vals).map(move |(&i, &v)| (i, j, v))
        })
    }

    /// `y = A x`, accumulated column by column in storage order.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n_rows];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.n_cols {
            return Err(SaiError::DimensionMismatch { expected: self.n_cols, got: x.len() });
        }
        if y.len() != self.n_rows {
            return Err(SaiError::DimensionMismatch { expected: self.n_rows, got: y.len() });
        }
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                y[i] += v * xj;
            }
        }
        Ok(())
    }

    pub fn transpose(&self) -> CscMatrix {
        let mut counts = vec![0usize; self.n_rows + 1];
        for &i in &self.row_idx {
            counts[i + 1] += 1;
        }
        for i in 0..self.n_rows {
            counts[i + 1] += counts[i];
        }
        let col_ptr = counts.clone();
        let mut next = counts;
        let mut row_idx = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for j in 0..self.n_cols {
            let (rows, vals) = self.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                let p = next[i];
                row_idx[p] = j;
                values[p] = v;
                next[i] += 1;
            }
        }
        CscMatrix { n_rows: self.n_cols, n_cols: self.n_rows, col_ptr, row_idx, values }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.n_cols)
            .map(|j| self.col(j).1.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let mut sums = vec![0.0; self.n_rows];
        for (&i, &v) in self.row_idx.iter().zip(&self.values) {
            sums[i] += v.abs();
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Returns `P A` where row `perm[i]` of `A` becomes row `i`.
    pub fn permute_rows(&self, perm: &[usize]) -> Result<CscMatrix> {
        if perm.len() != self.n_rows {
            return Err(SaiError::DimensionMismatch { expected: self.n_rows, got: perm.len() });
        }
        let mut inverse = vec![usize::MAX; self.n_rows];
        for (new, &old) in perm.iter().enumerate() {
            if old >= self.n_rows || inverse[old] != usize::MAX {
                return Err(SaiError::Domain("row permutation is not a bijection".into()));
            }
            inverse[old] = new;
        }
        let mut triplets = Vec::with_capacity(self.nnz());
        for (i, j, v) in self.triplets() {
            triplets.push((inverse[i], j, v));
        }
        CscMatrix::from_triplets(self.n_rows, self.n_cols, triplets)
    }

    /// Sum of two matrices of equal shape.
    pub fn add(&self, other: &CscMatrix) -> Result<CscMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(SaiError::DimensionMismatch { expected: self.n_rows * self.n_cols, got: other.n_rows * other.n_cols });
        }
        CscMatrix::from_triplets(self.n_rows, self.n_cols, self.triplets().chain(other.triplets()))
    }

    pub fn has_zero_free_diagonal(&self) -> bool {
        (0..self.n_rows.min(self.n_cols)).all(|j| self.get(j, j) != 0.0)
    }
}

/// Sparse vector with strictly increasing indices and no explicit zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(dim: usize, entries: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut e: Vec<(usize, f64)> = entries.into_iter().collect();
        e.sort_by_key(|p| p.0);
        let mut indices = Vec::with_capacity(e.len());
        let mut values: Vec<f64> = Vec::with_capacity(e.len());
        for (i, v) in e {
            if i >= dim {
                return Err(SaiError::IndexOutOfRange { index: i, bound: dim });
            }
            if !v.is_finite() {
                return Err(SaiError::Domain(format!("non-finite value at index {i}")));
            }
            if indices.last() == Some(&i) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(i);
                values.push(v);
            }
        }
        let mut out = Self { dim, indices, values };
        out.normalize();
        Ok(out)
    }

    pub fn unit(dim: usize, k: usize) -> Self {
        Self { dim, indices: vec![k], values: vec![1.0] }
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, indices: Vec::new(), values: Vec::new() }
    }

    /// Gathers the nonzeros of a dense slice.
    pub fn from_dense(x: &[f64]) -> Self {
        let (indices, values) = x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, &v)| (i, v)).unzip();
        Self { dim: x.len(), indices, values }
    }

    fn normalize(&mut self) {
        let mut w = 0;
        for p in 0..self.indices.len() {
            if self.values[p] != 0.0 {
                self.indices[w] = self.indices[p];
                self.values[w] = self.values[p];
                w += 1;
            }
        }
        self.indices.truncate(w);
        self.values.truncate(w);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize) -> f64 {
        match self.indices.binary_search(&i) {
            Ok(p) => self.values[p],
            Err(_) => 0.0,
        }
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            x[i] = v;
        }
        x
    }
}

/// Column-count statistics used to classify a matrix as regular or
/// irregular sparse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    /// `floor(nnz / n_cols)`.
    pub p: usize,
    pub per_col_nnz: Vec<usize>,
    /// Densest column count.
    pub p_d: usize,
    /// Number of irregular columns.
    pub s: usize,
    pub irregular_cols: Vec<usize>,
    pub factor: f64,
    pub threshold: f64,
}

pub const DEFAULT_IRREGULARITY_FACTOR: f64 = 10.0;

/// Counts columns with at least `factor * max(p, 1)` nonzeros.
pub fn column_stats(a: &CscMatrix, factor: f64) -> Result<ColumnStats> {
    if a.n_cols() == 0 || a.n_rows() == 0 {
        return Err(SaiError::Domain("column statistics of an empty matrix".into()));
    }
    if !(factor.is_finite() && factor > 0.0) {
        return Err(SaiError::Domain(format!("irregularity factor must be positive, got {factor}")));
    }
    let per_col_nnz: Vec<usize> = (0..a.n_cols()).map(|j| a.col_nnz(j)).collect();
    let p = a.nnz() / a.n_cols();
    let p_d = per_col_nnz.iter().copied().max().unwrap_or(0);
    let threshold = factor * p.max(1) as f64;
    let irregular_cols: Vec<usize> =
        (0..a.n_cols()).filter(|&j| per_col_nnz[j] as f64 >= threshold).collect();
    Ok(ColumnStats { p, per_col_nnz, p_d, s: irregular_cols.len(), irregular_cols, factor, threshold })
}

#[inline]
pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upper2() -> CscMatrix {
        CscMatrix::from_triplets(2, 2, [(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0)]).unwrap()
    }

    #[test]
    fn identity_matvec() {
        let i = CscMatrix::identity(5);
        let x = vec![1.0, -2.0, 3.5, 0.0, 7.0];
        assert_eq!(i.matvec(&x).unwrap(), x);
    }

    #[test]
    fn two_by_two_matvec() {
        assert_eq!(upper2().matvec(&[1.0, 1.0]).unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn matvec_dim_mismatch() {
        assert!(matches!(upper2().matvec(&[1.0]), Err(SaiError::DimensionMismatch { .. })));
    }

    #[test]
    fn norm1_small() {
        assert_eq!(CscMatrix::identity(3).norm1(), 1.0);
        let a = CscMatrix::from_triplets(2, 2, [(0, 0, 2.0), (0, 1, -1.0), (1, 1, 3.0)]).unwrap();
        assert_eq!(a.norm1(), 4.0);
        assert_eq!(a.norm_inf(), 3.0);
    }

    #[test]
    fn triplets_sum_duplicates_and_purge_zeros() {
        let a = CscMatrix::from_triplets(2, 2, [(0, 0, 2.0), (0, 0, 2.0), (1, 0, 1.0), (1, 0, -1.0)]).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 0), 4.0);
        let raw = CscMatrix::try_from_raw(2, 2, vec![0, 2, 3], vec![0, 1, 1], vec![1.0, 0.0, 5.0]).unwrap();
        assert_eq!(raw.nnz(), 2);
        assert_eq!(raw.col_ptr(), &[0, 1, 2]);
    }

    #[test]
    fn raw_validation() {
        assert!(CscMatrix::try_from_raw(2, 1, vec![0, 2], vec![1, 0], vec![1.0, 1.0]).is_err());
        assert!(CscMatrix::try_from_raw(2, 1, vec![0, 1], vec![2], vec![1.0]).is_err());
        assert!(CscMatrix::try_from_raw(2, 1, vec![0, 1], vec![0], vec![f64::NAN]).is_err());
    }

    #[test]
    fn transpose_roundtrip() {
        let a = upper2();
        let t = a.transpose();
        assert_eq!(t.get(1, 0), 1.0);
        assert_eq!(t.get(0, 1), 0.0);
        assert_eq!(t.transpose(), a);
    }

    #[test]
    fn permute_rows_reverses() {
        let a = upper2();
        let p = a.permute_rows(&[1, 0]).unwrap();
        assert_eq!(p.get(0, 1), 3.0);
        assert_eq!(p.get(1, 0), 2.0);
        assert!(a.permute_rows(&[0, 0]).is_err());
    }

    #[test]
    fn stats_identity() {
        let s = column_stats(&CscMatrix::identity(100), 10.0).unwrap();
        assert_eq!((s.p, s.p_d, s.s), (1, 1, 0));
    }

    #[test]
    fn stats_tridiagonal_plus_full_column() {
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i + 1, i, -1.0));
                t.push((i, i + 1, -1.0));
            }
        }
        for i in 0..n {
            t.push((i, 7, 0.5));
        }
        let a = CscMatrix::from_triplets(n, n, t).unwrap();
        // dense-scan oracle
        let d = a.to_dense();
        let counts: Vec<usize> = (0..n).map(|j| (0..n).filter(|&i| d[(i, j)] != 0.0).count()).collect();
        let p = counts.iter().sum::<usize>() / n;
        let expect_s = counts.iter().filter(|&&c| c >= 10 * p.max(1)).count();
        let s = column_stats(&a, 10.0).unwrap();
        assert_eq!(s.p, p);
        assert_eq!(s.s, expect_s);
        assert_eq!(s.s, 1);
        assert_eq!(s.p_d, 50);
        assert_eq!(s.irregular_cols, vec![7]);
    }

    #[test]
    fn stats_empty_is_error() {
        assert!(column_stats(&CscMatrix::zeros(0, 0), 10.0).is_err());
    }

    #[test]
    fn sparse_vector_normalizes() {
        let v = SparseVector::new(4, [(3, 1.0), (1, 2.0), (3, -1.0), (0, 0.0)]).unwrap();
        assert_eq!(v.indices(), &[1]);
        assert!(SparseVector::new(2, [(2, 1.0)]).is_err());
    }
}
