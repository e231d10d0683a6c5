//! Dense QR least-squares kernel for the per-column subproblems
//! `min || A(L, S) m - e_k(L) ||`.
//!
//! The factorization is kept as Householder reflectors plus the columns of
//! `R`, so the pattern `S` can grow without refactoring: new columns are
//! pushed through the existing reflectors and new rows are appended at the
//! bottom (every existing column is zero there, so the old reflectors are
//! unaffected). Removing columns refactors from scratch.
//!
//! A column whose new diagonal would fall below `1e-12` times the largest
//! diagonal so far is treated as linearly dependent: it stays in the
//! pattern with a zero coefficient and is reported by
//! [`LsWorkspace::dependent_columns`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaiError};
use crate::sparse::{CscMatrix, SparseVector};

const RANK_TOL: f64 = 1e-12;

/// Sorted, duplicate-free set of column indices `S_k` for one column of
/// the approximate inverse.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ColumnPattern(Vec<usize>);

impl ColumnPattern {
    pub fn new(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = indices.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn unit(k: usize) -> Self {
        Self(vec![k])
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.0.binary_search(&j).is_ok()
    }

    /// The shadow row set `L_k`: nonzero rows of `A(:, S)` together with `k`.
    pub fn shadow_rows(&self, a: &CscMatrix, k: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = self.0.iter().flat_map(|&j| a.col(j).0.iter().copied()).collect();
        rows.push(k);
        rows.sort_unstable();
        rows.dedup();
        rows
    }
}

#[derive(Debug, Clone)]
struct Reflector {
    start: usize,
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    /// Applies `I - beta v v^T` to rows `start..start + v.len()` of `y`.
    #[inline]
    fn apply(&self, y: &mut [f64]) {
        let seg = &mut y[self.start..self.start + self.v.len()];
        let s = self.beta * self.v.iter().zip(seg.iter()).map(|(a, b)| a * b).sum::<f64>();
        if s != 0.0 {
            for (yi, vi) in seg.iter_mut().zip(&self.v) {
                *yi -= s * vi;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LsOptions {
    /// Upper bound on the estimated dense workspace in bytes.
    pub max_workspace_bytes: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct LsWorkspace {
    k: usize,
    n: usize,
    rows: Vec<usize>,
    row_pos: HashMap<usize, usize>,
    cols: Vec<usize>,
    col_rank: Vec<Option<usize>>,
    r_cols: Vec<Vec<f64>>,
    reflectors: Vec<Reflector>,
    rank_col: Vec<usize>,
    qtb: Vec<f64>,
    max_diag: f64,
    coef: Vec<f64>,
    residual: Vec<f64>,
    residual_norm: f64,
    opts: LsOptions,
}

impl LsWorkspace {
    /// Factors `A(L, S0)` and solves for the best `m_k` on the pattern `S0`.
    pub fn new(a: &CscMatrix, k: usize, s0: &ColumnPattern, opts: LsOptions) -> Result<Self> {
        if k >= a.n_rows() {
            return Err(SaiError::IndexOutOfRange { index: k, bound: a.n_rows() });
        }
        if s0.is_empty() {
            return Err(SaiError::DegeneratePattern { column: k });
        }
        let mut ws = Self {
            k,
            n: a.n_rows(),
            rows: Vec::new(),
            row_pos: HashMap::new(),
            cols: Vec::new(),
            col_rank: Vec::new(),
            r_cols: Vec::new(),
            reflectors: Vec::new(),
            rank_col: Vec::new(),
            qtb: Vec::new(),
            max_diag: 0.0,
            coef: Vec::new(),
            residual: Vec::new(),
            residual_norm: 1.0,
            opts,
        };
        ws.push_row(k);
        for &j in s0.indices() {
            ws.push_column(a, j)?;
        }
        if ws.rank_col.is_empty() {
            return Err(SaiError::DegeneratePattern { column: k });
        }
        ws.solve(a);
        Ok(ws)
    }

    /// Adds `new_cols` to the pattern, updating the factorization in place.
    pub fn augment(&mut self, a: &CscMatrix, new_cols: &[usize]) -> Result<()> {
        for &j in new_cols {
            if j >= a.n_cols() {
                return Err(SaiError::IndexOutOfRange { index: j, bound: a.n_cols() });
            }
            if self.cols.contains(&j) {
                return Err(SaiError::Domain(format!("column {j} is already in the pattern of column {}", self.k)));
            }
        }
        if let Some(limit) = self.opts.max_workspace_bytes {
            let mut fresh: Vec<usize> = new_cols
                .iter()
                .flat_map(|&j| a.col(j).0.iter().copied())
                .filter(|i| !self.row_pos.contains_key(i))
                .collect();
            fresh.sort_unstable();
            fresh.dedup();
            let bytes = 8 * (self.rows.len() + fresh.len()) * (self.cols.len() + new_cols.len() + 2);
            if bytes > limit {
                return Err(SaiError::WorkspaceGuard { column: self.k, bytes, limit });
            }
        }
        for &j in new_cols {
            self.push_column(a, j)?;
        }
        if self.rank_col.is_empty() {
            return Err(SaiError::DegeneratePattern { column: self.k });
        }
        self.solve(a);
        Ok(())
    }

    /// Removes `drop` from the pattern and re-solves by refactoring.
    pub fn drop_columns(&self, a: &CscMatrix, drop: &[usize]) -> Result<Self> {
        for &j in drop {
            if !self.cols.contains(&j) {
                return Err(SaiError::Domain(format!("column {j} is not in the pattern of column {}", self.k)));
            }
        }
        let kept = ColumnPattern::new(self.cols.iter().copied().filter(|j| !drop.contains(j)));
        if kept.is_empty() {
            return Err(SaiError::DegeneratePattern { column: self.k });
        }
        Self::new(a, self.k, &kept, self.opts)
    }

    fn push_row(&mut self, i: usize) -> usize {
        if let Some(&p) = self.row_pos.get(&i) {
            return p;
        }
        let p = self.rows.len();
        self.rows.push(i);
        self.row_pos.insert(i, p);
        self.qtb.push(if i == self.k { 1.0 } else { 0.0 });
        p
    }

    fn check_guard(&self) -> Result<()> {
        if let Some(limit) = self.opts.max_workspace_bytes {
            let bytes = self.workspace_bytes();
            if bytes > limit {
                return Err(SaiError::WorkspaceGuard { column: self.k, bytes, limit });
            }
        }
        Ok(())
    }

    /// Estimated bytes of dense storage held by the factorization.
    pub fn workspace_bytes(&self) -> usize {
        8 * self.rows.len() * (self.cols.len() + 2)
    }

    fn push_column(&mut self, a: &CscMatrix, j: usize) -> Result<()> {
        let (rows, vals) = a.col(j);
        let mut local: Vec<(usize, f64)> = Vec::with_capacity(rows.len());
        for (&i, &v) in rows.iter().zip(vals) {
            local.push((self.push_row(i), v));
        }
        self.cols.push(j);
        self.coef.push(0.0);
        self.check_guard()?;

        let m = self.rows.len();
        let mut x = vec![0.0; m];
        for (p, v) in local {
            x[p] = v;
        }
        for h in &self.reflectors {
            h.apply(&mut x);
        }
        let rank = self.rank_col.len();
        let tail_norm = x[rank..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if tail_norm == 0.0 || tail_norm <= RANK_TOL * self.max_diag {
            self.col_rank.push(None);
            return Ok(());
        }
        let alpha = if x[rank] > 0.0 { -tail_norm } else { tail_norm };
        let mut v = x[rank..].to_vec();
        v[0] -= alpha;
        let vtv: f64 = v.iter().map(|t| t * t).sum();
        let h = Reflector { start: rank, v, beta: 2.0 / vtv };
        h.apply(&mut self.qtb);
        let mut rcol = x[..rank].to_vec();
        rcol.push(alpha);
        self.r_cols.push(rcol);
        self.reflectors.push(h);
        self.max_diag = self.max_diag.max(tail_norm);
        self.col_rank.push(Some(rank));
        self.rank_col.push(self.cols.len() - 1);
        Ok(())
    }

    fn solve(&mut self, a: &CscMatrix) {
        let rank = self.rank_col.len();
        let mut y = self.qtb[..rank].to_vec();
        let mut x = vec![0.0; rank];
        for p in (0..rank).rev() {
            let col = &self.r_cols[p];
            x[p] = y[p] / col[p];
            for i in 0..p {
                y[i] -= col[i] * x[p];
            }
        }
        self.coef.iter_mut().for_each(|c| *c = 0.0);
        for (p, &ci) in self.rank_col.iter().enumerate() {
            self.coef[ci] = x[p];
        }
        // explicit residual over L (zero elsewhere since k is in L)
        let mut r = vec![0.0; self.rows.len()];
        r[self.row_pos[&self.k]] = -1.0;
        for (&j, &c) in self.cols.iter().zip(&self.coef) {
            if c == 0.0 {
                continue;
            }
            let (rows, vals) = a.col(j);
            for (&i, &v) in rows.iter().zip(vals) {
                r[self.row_pos[&i]] += v * c;
            }
        }
        self.residual_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.residual = r;
    }

    pub fn column_index(&self) -> usize {
        self.k
    }

    /// Sorted pattern `S_k`.
    pub fn pattern(&self) -> ColumnPattern {
        ColumnPattern::new(self.cols.iter().copied())
    }

    /// Sorted row set `L_k`.
    pub fn rows(&self) -> Vec<usize> {
        let mut r = self.rows.clone();
        r.sort_unstable();
        r
    }

    pub fn len(&self) -> usize {
        self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cols.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.rank_col.len()
    }

    pub fn dependent_columns(&self) -> Vec<usize> {
        let mut d: Vec<usize> =
            self.cols.iter().zip(&self.col_rank).filter(|(_, r)| r.is_none()).map(|(&j, _)| j).collect();
        d.sort_unstable();
        d
    }

    /// `(j, m_jk)` for every pattern entry, sorted by `j`, zeros included.
    pub fn coefficients(&self) -> Vec<(usize, f64)> {
        let mut c: Vec<(usize, f64)> = self.cols.iter().copied().zip(self.coef.iter().copied()).collect();
        c.sort_unstable_by_key(|p| p.0);
        c
    }

    /// The current column `m_k` as a sparse vector (zeros removed).
    pub fn solution(&self) -> SparseVector {
        SparseVector::new(self.n, self.coefficients()).expect("pattern indices are in range")
    }

    pub fn residual_norm(&self) -> f64 {
        self.residual_norm
    }

    /// `A m_k - e_k` as a sparse vector over all `n` rows.
    pub fn residual(&self) -> SparseVector {
        SparseVector::new(self.n, self.rows.iter().copied().zip(self.residual.iter().copied()))
            .expect("row indices are in range")
    }

    /// Scatters `A m_k - e_k` into a dense buffer of length `n` and returns
    /// the touched rows. The buffer must be zero on entry.
    pub fn scatter_residual(&self, dense: &mut [f64]) -> Vec<usize> {
        let mut touched = Vec::with_capacity(self.rows.len());
        for (&i, &v) in self.rows.iter().zip(&self.residual) {
            if v != 0.0 {
                dense[i] = v;
                touched.push(i);
            }
        }
        touched
    }
}

pub fn ls_init(a: &CscMatrix, k: usize, s0: &ColumnPattern) -> Result<LsWorkspace> {
    LsWorkspace::new(a, k, s0, LsOptions::default())
}

pub fn ls_augment(mut w: LsWorkspace, new_cols: &[usize], a: &CscMatrix) -> Result<LsWorkspace> {
    w.augment(a, new_cols)?;
    Ok(w)
}

pub fn ls_drop_columns(w: &LsWorkspace, drop: &[usize], a: &CscMatrix) -> Result<LsWorkspace> {
    w.drop_columns(a, drop)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn upper2() -> CscMatrix {
        CscMatrix::from_triplets(2, 2, [(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0)]).unwrap()
    }

    fn recompute(a: &CscMatrix, w: &LsWorkspace) -> f64 {
        let m = w.solution().to_dense();
        let mut r = a.matvec(&m).unwrap();
        r[w.column_index()] -= 1.0;
        r.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn identity_column() {
        let w = ls_init(&CscMatrix::identity(4), 0, &ColumnPattern::unit(0)).unwrap();
        assert_eq!(w.solution().to_dense(), vec![1.0, 0.0, 0.0, 0.0]);
        assert!(w.residual_norm() < 1e-15);
    }

    #[test]
    fn exact_inverse_column() {
        let a = upper2();
        let w = ls_init(&a, 1, &ColumnPattern::new([0, 1])).unwrap();
        let m = w.solution().to_dense();
        assert!((m[0] + 1.0 / 6.0).abs() < 1e-15);
        assert!((m[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(w.residual_norm() < 1e-15);
    }

    #[test]
    fn tall_block_matches_normal_equations() {
        let a = CscMatrix::from_triplets(
            4,
            4,
            [(0, 0, 1.5), (1, 0, -0.3), (2, 0, 0.7), (3, 0, 2.0), (0, 1, 0.2), (1, 1, 1.1), (2, 1, -0.9), (3, 1, 0.4), (2, 2, 1.0), (3, 3, 1.0)],
        )
        .unwrap();
        let w = ls_init(&a, 2, &ColumnPattern::new([0, 1])).unwrap();
        // normal equations oracle: (B^T B) m = B^T e_2
        let b = a.to_dense().columns(0, 2).into_owned();
        let mut e = DVector::zeros(4);
        e[2] = 1.0;
        let m = (b.transpose() * &b).lu().solve(&(b.transpose() * e)).unwrap();
        let got = w.solution().to_dense();
        assert!((got[0] - m[0]).abs() < 1e-10 && (got[1] - m[1]).abs() < 1e-10);
        assert!((w.residual_norm() - recompute(&a, &w)).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_column_leaves_residual() {
        // column 2 lives on row 2, where the residual of column 0 is zero
        let a = CscMatrix::from_triplets(3, 3, [(0, 0, 2.0), (1, 0, 1.0), (2, 2, 1.0), (1, 1, 1.0)]).unwrap();
        let w0 = ls_init(&a, 0, &ColumnPattern::unit(0)).unwrap();
        let before = w0.residual_norm();
        let w1 = ls_augment(w0, &[2], &a).unwrap();
        assert!((w1.residual_norm() - before).abs() < 1e-12);
    }

    #[test]
    fn augment_to_full_span() {
        let a = upper2();
        let w = ls_init(&a, 1, &ColumnPattern::unit(1)).unwrap();
        assert!(w.residual_norm() > 0.1);
        let w = ls_augment(w, &[0], &a).unwrap();
        assert!(w.residual_norm() < 1e-10);
    }

    #[test]
    fn augment_rejects_bad_columns() {
        let a = upper2();
        let mut w = ls_init(&a, 1, &ColumnPattern::unit(1)).unwrap();
        assert!(matches!(w.augment(&a, &[5]), Err(SaiError::IndexOutOfRange { .. })));
        assert!(w.augment(&a, &[1]).is_err());
    }

    #[test]
    fn zero_pattern_is_degenerate() {
        let a = CscMatrix::from_triplets(2, 2, [(0, 0, 1.0)]).unwrap();
        assert!(matches!(ls_init(&a, 1, &ColumnPattern::unit(1)), Err(SaiError::DegeneratePattern { column: 1 })));
        assert!(ls_init(&a, 1, &ColumnPattern::default()).is_err());
    }

    #[test]
    fn dependent_column_is_flagged() {
        // column 1 = 2 * column 0
        let a = CscMatrix::from_triplets(3, 3, [(0, 0, 1.0), (1, 0, 1.0), (0, 1, 2.0), (1, 1, 2.0), (2, 2, 1.0)]).unwrap();
        let w = ls_init(&a, 0, &ColumnPattern::new([0, 1])).unwrap();
        assert_eq!(w.dependent_columns(), vec![1]);
        assert_eq!(w.rank(), 1);
        assert!((w.residual_norm() - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn drop_only_column_is_degenerate() {
        let a = upper2();
        let w = ls_init(&a, 1, &ColumnPattern::unit(1)).unwrap();
        assert!(matches!(ls_drop_columns(&w, &[1], &a), Err(SaiError::DegeneratePattern { .. })));
    }

    #[test]
    fn drop_zero_coefficient_keeps_residual() {
        let a = CscMatrix::from_triplets(3, 3, [(0, 0, 2.0), (1, 0, 1.0), (2, 2, 1.0), (1, 1, 1.0)]).unwrap();
        let w = ls_init(&a, 0, &ColumnPattern::new([0, 2])).unwrap();
        assert_eq!(w.solution().get(2), 0.0);
        let d = ls_drop_columns(&w, &[2], &a).unwrap();
        assert!((d.residual_norm() - w.residual_norm()).abs() < 1e-12);
    }

    #[test]
    fn drop_then_readd() {
        let a = CscMatrix::from_dense(&DMatrix::from_row_slice(
            3,
            3,
            &[4.0, -1.0, 0.5, 1.0, 3.0, -1.0, 0.2, 1.0, 5.0],
        ));
        let full = ls_init(&a, 1, &ColumnPattern::new([0, 1, 2])).unwrap();
        let dropped = ls_drop_columns(&full, &[2], &a).unwrap();
        let oracle = ls_init(&a, 1, &ColumnPattern::new([0, 1])).unwrap();
        assert!((dropped.residual_norm() - oracle.residual_norm()).abs() < 1e-10);
        let back = ls_augment(dropped, &[2], &a).unwrap();
        let (x, y) = (back.solution().to_dense(), full.solution().to_dense());
        for i in 0..3 {
            assert!((x[i] - y[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn guard_trips() {
        let a = CscMatrix::identity(4);
        let opts = LsOptions { max_workspace_bytes: Some(8) };
        assert!(matches!(LsWorkspace::new(&a, 0, &ColumnPattern::unit(0), opts), Err(SaiError::WorkspaceGuard { .. })));
    }
}
