//! Regular/irregular splitting `A = A~ + U V^T` and the matrix-class
//! checkers used to reason about when `A~` stays nonsingular.
//!
//! Each irregular column `j_i` (at least `factor * p` nonzeros) keeps its
//! diagonal plus `p_kept - 1` other entries in `A~`; the dropped entries
//! become column `i` of `U`, and `V = (e_{j_1}, ..., e_{j_s})`.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaiError};
use crate::sparse::{column_stats, CscMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SparsifyStrategy {
    /// Keep the entries closest to the diagonal, `|i - j|` ascending, ties
    /// to the smaller row.
    #[default]
    NearestDiagonal,
    /// Keep the entries of largest magnitude, ties to the smaller row.
    LargestMagnitude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSystem {
    pub a_tilde: CscMatrix,
    /// `n x s`; column `i` holds the entries dropped from `irregular_cols[i]`.
    pub u: CscMatrix,
    pub irregular_cols: Vec<usize>,
    pub strategy: SparsifyStrategy,
    pub p_kept: usize,
    pub factor: f64,
}

impl SplitSystem {
    pub fn s(&self) -> usize {
        self.irregular_cols.len()
    }

    /// `A~ + U V^T`.
    pub fn reconstruct(&self) -> Result<CscMatrix> {
        let extra = self.u.triplets().map(|(i, c, v)| (i, self.irregular_cols[c], v));
        CscMatrix::from_triplets(
            self.a_tilde.n_rows(),
            self.a_tilde.n_cols(),
            self.a_tilde.triplets().chain(extra),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub factor: f64,
    pub strategy: SparsifyStrategy,
    /// Entries kept per irregular column; `None` means `p`.
    pub p_kept: Option<usize>,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self { factor: crate::sparse::DEFAULT_IRREGULARITY_FACTOR, strategy: SparsifyStrategy::NearestDiagonal, p_kept: None }
    }
}

pub fn split(a: &CscMatrix, opts: &SplitOptions) -> Result<SplitSystem> {
    if !a.is_square() {
        return Err(SaiError::Domain(format!("split needs a square matrix, got {}x{}", a.n_rows(), a.n_cols())));
    }
    let stats = column_stats(a, opts.factor)?;
    let p_kept = opts.p_kept.unwrap_or(stats.p.max(1));
    if p_kept < 1 {
        return Err(SaiError::Domain("p_kept must be at least 1".into()));
    }
    let n = a.n_cols();
    let mut irregular = Vec::new();
    let mut u_triplets = Vec::new();
    let mut dropped = vec![false; a.nnz()];
    for &j in &stats.irregular_cols {
        let (rows, vals) = a.col(j);
        if rows.len() <= p_kept {
            continue;
        }
        let diag_pos = rows.binary_search(&j).map_err(|_| SaiError::ZeroDiagonal { column: j })?;
        let mut others: Vec<usize> = (0..rows.len()).filter(|&p| p != diag_pos).collect();
        match opts.strategy {
            SparsifyStrategy::NearestDiagonal => {
                others.sort_by_key(|&p| (rows[p].abs_diff(j), rows[p]));
            }
            SparsifyStrategy::LargestMagnitude => {
                others.sort_by(|&x, &y| vals[y].abs().total_cmp(&vals[x].abs()).then(rows[x].cmp(&rows[y])));
            }
        }
        let col_index = irregular.len();
        let base = a.col_ptr()[j];
        for &p in &others[p_kept - 1..] {
            dropped[base + p] = true;
            u_triplets.push((rows[p], col_index, vals[p]));
        }
        irregular.push(j);
    }
    let kept = a.triplets().enumerate().filter(|(idx, _)| !dropped[*idx]).map(|(_, t)| t);
    let a_tilde = CscMatrix::from_triplets(n, n, kept)?;
    let u = CscMatrix::from_triplets(n, irregular.len(), u_triplets)?;
    Ok(SplitSystem { a_tilde, u, irregular_cols: irregular, strategy: opts.strategy, p_kept, factor: opts.factor })
}

/// Row margins `beta_i = |a_ii| - sum_{j != i} |a_ij|`.
pub fn row_margins(a: &CscMatrix) -> Vec<f64> {
    let mut m = vec![0.0; a.n_rows()];
    for (i, j, v) in a.triplets() {
        if i == j {
            m[i] += v.abs();
        } else {
            m[i] -= v.abs();
        }
    }
    m
}

/// Column margins `|a_jj| - sum_{i != j} |a_ij|`.
pub fn col_margins(a: &CscMatrix) -> Vec<f64> {
    (0..a.n_cols())
        .map(|j| {
            let (rows, vals) = a.col(j);
            rows.iter().zip(vals).map(|(&i, &v)| if i == j { v.abs() } else { -v.abs() }).sum()
        })
        .collect()
}

/// Strong connectivity of the directed graph with an edge `i -> j` for
/// every off-diagonal `a_ij != 0`.
pub fn is_irreducible(a: &CscMatrix) -> bool {
    let n = a.n_cols();
    if n <= 1 {
        return true;
    }
    let reach_all = |m: &CscMatrix| {
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in m.col(v).0 {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count == n
    };
    // column j of A lists i with a_ij != 0, i.e. edges i -> j walked backwards
    reach_all(a) && reach_all(&a.transpose())
}

/// Above this order the M-matrix test relies on the sign pattern plus
/// strict diagonal dominance instead of a dense inverse.
pub const DENSE_CHECK_MAX_N: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixClassReport {
    pub strict_row_dd: bool,
    pub strict_col_dd: bool,
    pub irreducible: bool,
    /// Weakly row or column dominant, irreducible, with one strict line.
    pub irreducibly_dd: bool,
    pub m_matrix: bool,
    /// False when `m_matrix` came from the sufficient (not necessary)
    /// large-n test.
    pub m_matrix_certified: bool,
    pub beta: Vec<f64>,
    pub beta_tilde: Option<Vec<f64>>,
}

pub fn classify(a: &CscMatrix) -> Result<MatrixClassReport> {
    if !a.is_square() {
        return Err(SaiError::Domain("classify needs a square matrix".into()));
    }
    let beta = row_margins(a);
    let gamma = col_margins(a);
    let strict_row_dd = beta.iter().all(|&b| b > 0.0);
    let strict_col_dd = gamma.iter().all(|&b| b > 0.0);
    let irreducible = is_irreducible(a);
    let weak = |m: &[f64]| m.iter().all(|&b| b >= 0.0) && m.iter().any(|&b| b > 0.0);
    let irreducibly_dd = irreducible && (weak(&beta) || weak(&gamma));

    let n = a.n_cols();
    let z_sign = a.triplets().all(|(i, j, v)| if i == j { v > 0.0 } else { v <= 0.0 })
        && (0..n).all(|i| a.get(i, i) > 0.0);
    let (m_matrix, m_matrix_certified) = if !z_sign {
        (false, true)
    } else if n <= DENSE_CHECK_MAX_N {
        let inv = a.to_dense().try_inverse();
        (inv.is_some_and(|inv| inv.iter().all(|&v| v >= -1e-12)), true)
    } else if strict_row_dd || strict_col_dd || irreducibly_dd {
        (true, true)
    } else {
        (false, false)
    };
    Ok(MatrixClassReport {
        strict_row_dd,
        strict_col_dd,
        irreducible,
        irreducibly_dd,
        m_matrix,
        m_matrix_certified,
        beta,
        beta_tilde: None,
    })
}

/// Class report for `A` with `beta_tilde` filled in from `A~`.
pub fn classify_split(a: &CscMatrix, sys: &SplitSystem) -> Result<MatrixClassReport> {
    let mut r = classify(a)?;
    r.beta_tilde = Some(row_margins(&sys.a_tilde));
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceMargins {
    pub beta: Vec<f64>,
    pub beta_tilde: Vec<f64>,
    /// `1 / min beta_i >= ||A^{-1}||_inf`.
    pub bound_a: f64,
    pub bound_a_tilde: f64,
}

pub fn dominance_margins(a: &CscMatrix, a_tilde: &CscMatrix) -> Result<DominanceMargins> {
    if a.n_rows() != a_tilde.n_rows() {
        return Err(SaiError::DimensionMismatch { expected: a.n_rows(), got: a_tilde.n_rows() });
    }
    let beta = row_margins(a);
    let beta_tilde = row_margins(a_tilde);
    for (row, &margin) in beta.iter().enumerate() {
        if margin <= 0.0 {
            return Err(SaiError::NotDominant { row, margin });
        }
    }
    for (row, &margin) in beta_tilde.iter().enumerate() {
        if margin <= 0.0 {
            return Err(SaiError::NotDominant { row, margin });
        }
    }
    if let Some(i) = (0..beta.len()).find(|&i| beta_tilde[i] < beta[i]) {
        return Err(SaiError::Domain(format!(
            "margin of row {i} shrank from {} to {}; A~ is not a sparsification of A",
            beta[i], beta_tilde[i]
        )));
    }
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DominanceMargins { bound_a: 1.0 / min(&beta), bound_a_tilde: 1.0 / min(&beta_tilde), beta, beta_tilde })
}

/// 1-norm condition number from a dense inverse; `None` when singular or
/// when `n` exceeds [`DENSE_CHECK_MAX_N`].
pub fn condition_number_1(a: &CscMatrix) -> Option<f64> {
    if !a.is_square() || a.n_cols() > DENSE_CHECK_MAX_N || a.n_cols() == 0 {
        return None;
    }
    let inv = a.to_dense().try_inverse()?;
    let inv_norm1 = (0..inv.ncols()).map(|j| inv.column(j).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    Some(a.norm1() * inv_norm1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    DominantRow,
    DominantCol,
    MMatrix,
    IrreduciblyDominant,
}

/// Random sparse test matrix in the requested class.
///
/// Off-diagonal entries are placed independently with probability
/// `density`; `planted_dense_cols` columns are then made fully dense. The
/// diagonal is assigned last so the class property holds by construction:
///
/// * `DominantRow` / `DominantCol`: `|a_ii|` exceeds the off-diagonal
///   row / column sum by a random margin in `[0.5, 1.5)`;
/// * `MMatrix`: nonpositive off-diagonals with a strictly row dominant
///   positive diagonal;
/// * `IrreduciblyDominant`: a cyclic backbone makes the pattern
///   irreducible, every row margin is exactly zero except row 0.
pub fn generate_test_matrix(
    kind: MatrixKind,
    n: usize,
    density: f64,
    planted_dense_cols: usize,
    seed: u64,
) -> Result<CscMatrix> {
    if n < 2 {
        return Err(SaiError::Domain("test matrices need n >= 2".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(SaiError::Domain(format!("density must lie in [0, 1], got {density}")));
    }
    if planted_dense_cols > n {
        return Err(SaiError::Domain(format!("cannot plant {planted_dense_cols} dense columns in order {n}")));
    }
    if kind == MatrixKind::IrreduciblyDominant && density * (n as f64) < 1.0 {
        return Err(SaiError::Domain(format!(
            "density {density} gives fewer than one off-diagonal per row; too sparse for an irreducible pattern"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut off = DMatrix::<f64>::zeros(n, n);
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        // multiples of 1/16 keep row sums exact, so zero margins stay zero
        let mag = rng.gen_range(2..16) as f64 / 16.0;
        match kind {
            MatrixKind::MMatrix => -mag,
            _ => {
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            }
        }
    };
    for j in 0..n {
        for i in 0..n {
            if i != j && density > 0.0 && rng.gen_bool(density) {
                off[(i, j)] = draw(&mut rng);
            }
        }
    }
    if kind == MatrixKind::IrreduciblyDominant {
        for i in 0..n {
            let j = (i + 1) % n;
            if off[(i, j)] == 0.0 {
                off[(i, j)] = draw(&mut rng);
            }
        }
    }
    for j in sample(&mut rng, n, planted_dense_cols).into_iter() {
        for i in 0..n {
            if i != j && off[(i, j)] == 0.0 {
                off[(i, j)] = draw(&mut rng);
            }
        }
    }
    let mut a = off;
    for i in 0..n {
        let sum = match kind {
            MatrixKind::DominantCol => (0..n).map(|r| a[(r, i)].abs()).sum::<f64>(),
            _ => (0..n).map(|c| a[(i, c)].abs()).sum::<f64>(),
        };
        let margin = match kind {
            MatrixKind::IrreduciblyDominant => {
                if i == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            _ => rng.gen_range(8..24) as f64 / 16.0,
        };
        let d = sum + margin;
        a[(i, i)] = match kind {
            MatrixKind::MMatrix => d,
            MatrixKind::IrreduciblyDominant => d,
            _ => {
                if rng.gen_bool(0.5) {
                    d
                } else {
                    -d
                }
            }
        };
    }
    Ok(CscMatrix::from_dense(&a))
}

/// Dense LU with partial pivoting; returns the smallest pivot magnitude,
/// or `None` if a pivot is exactly zero.
pub fn dense_lu_min_pivot(a: &CscMatrix) -> Option<f64> {
    let n = a.n_rows();
    let mut m = a.to_dense();
    let mut min_pivot = f64::INFINITY;
    for k in 0..n {
        let (p, piv) = (k..n).map(|i| (i, m[(i, k)].abs())).max_by(|x, y| x.1.total_cmp(&y.1))?;
        if piv == 0.0 {
            return None;
        }
        min_pivot = min_pivot.min(piv);
        m.swap_rows(k, p);
        for i in k + 1..n {
            let f = m[(i, k)] / m[(k, k)];
            if f != 0.0 {
                for j in k..n {
                    let t = m[(k, j)];
                    m[(i, j)] -= f * t;
                }
            }
        }
    }
    Some(min_pivot)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiag_with_full_col(n: usize, col: usize) -> CscMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 4.0));
            if i + 1 < n {
                t.push((i + 1, i, -1.0));
                t.push((i, i + 1, -1.0));
            }
        }
        let mut a = CscMatrix::from_triplets(n, n, t).unwrap().to_dense();
        for i in 0..n {
            if i != col {
                a[(i, col)] = 0.5 + i as f64;
            }
        }
        CscMatrix::from_dense(&a)
    }

    #[test]
    fn regular_matrix_is_untouched() {
        let a = CscMatrix::identity(6);
        let sys = split(&a, &SplitOptions::default()).unwrap();
        assert_eq!(sys.s(), 0);
        assert_eq!(sys.a_tilde, a);
        assert_eq!((sys.u.n_rows(), sys.u.n_cols()), (6, 0));
    }

    #[test]
    fn hand_built_five_by_five() {
        let a = tridiag_with_full_col(5, 2);
        let opts = SplitOptions { factor: 1.5, p_kept: Some(3), ..SplitOptions::default() };
        let sys = split(&a, &opts).unwrap();
        assert_eq!(sys.irregular_cols, vec![2]);
        assert_eq!(sys.a_tilde.col(2).0, &[1, 2, 3]);
        assert_eq!(sys.u.col(0).0, &[0, 4]);
        assert_eq!(sys.reconstruct().unwrap(), a);
    }

    #[test]
    fn largest_magnitude_strategy() {
        let a = tridiag_with_full_col(6, 1);
        let opts = SplitOptions { factor: 1.5, p_kept: Some(3), strategy: SparsifyStrategy::LargestMagnitude };
        let sys = split(&a, &opts).unwrap();
        // entries of column 1 are 0.5 + i off the diagonal: rows 5 and 4 win
        assert_eq!(sys.a_tilde.col(1).0, &[1, 4, 5]);
        assert_eq!(sys.reconstruct().unwrap(), a);
    }

    #[test]
    fn nearest_ties_go_to_smaller_row() {
        let a = tridiag_with_full_col(7, 3);
        let opts = SplitOptions { factor: 2.0, p_kept: Some(2), ..SplitOptions::default() };
        let sys = split(&a, &opts).unwrap();
        assert_eq!(sys.a_tilde.col(3).0, &[2, 3]);
    }

    #[test]
    fn zero_diagonal_in_irregular_column() {
        let mut d = tridiag_with_full_col(6, 2).to_dense();
        d[(2, 2)] = 0.0;
        let a = CscMatrix::from_dense(&d);
        let opts = SplitOptions { factor: 1.5, ..SplitOptions::default() };
        assert!(matches!(split(&a, &opts), Err(SaiError::ZeroDiagonal { column: 2 })));
    }

    #[test]
    fn short_irregular_column_is_left_alone() {
        let a = tridiag_with_full_col(5, 2);
        let opts = SplitOptions { factor: 1.5, p_kept: Some(5), ..SplitOptions::default() };
        let sys = split(&a, &opts).unwrap();
        assert_eq!(sys.s(), 0);
        assert_eq!(sys.a_tilde, a);
    }

    #[test]
    fn classify_basics() {
        let r = classify(&CscMatrix::identity(4)).unwrap();
        assert!(r.strict_row_dd && r.strict_col_dd && r.m_matrix);
        let a = CscMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, -2.0), (1, 1, 1.0)]).unwrap();
        let r = classify(&a).unwrap();
        assert!(!r.strict_row_dd);
        assert_eq!(r.beta, vec![-1.0, 1.0]);
        assert!(!r.irreducible);
    }

    #[test]
    fn margins_of_scaled_identity() {
        let a = CscMatrix::from_triplets(2, 2, [(0, 0, 2.0), (1, 1, 2.0)]).unwrap();
        let m = dominance_margins(&a, &a).unwrap();
        assert_eq!(m.beta, vec![2.0, 2.0]);
        assert_eq!(m.bound_a, 0.5);
        let inv = a.to_dense().try_inverse().unwrap();
        let inf = (0..2).map(|i| inv.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        assert_eq!(inf, 0.5);
    }

    #[test]
    fn margins_reject_non_dominant() {
        let a = CscMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, -2.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(dominance_margins(&a, &a), Err(SaiError::NotDominant { row: 0, .. })));
    }

    #[test]
    fn generator_classes() {
        let a = generate_test_matrix(MatrixKind::DominantRow, 10, 0.2, 0, 1).unwrap();
        assert!(classify(&a).unwrap().strict_row_dd);
        let a = generate_test_matrix(MatrixKind::DominantCol, 10, 0.2, 1, 2).unwrap();
        assert!(classify(&a).unwrap().strict_col_dd);
        let a = generate_test_matrix(MatrixKind::MMatrix, 8, 0.3, 0, 3).unwrap();
        let inv = a.to_dense().try_inverse().unwrap();
        assert!(inv.iter().all(|&v| v >= -1e-12));
        assert!(classify(&a).unwrap().m_matrix);
        let a = generate_test_matrix(MatrixKind::IrreduciblyDominant, 12, 0.1, 1, 4).unwrap();
        let r = classify(&a).unwrap();
        assert!(r.irreducible && r.irreducibly_dd && !r.strict_row_dd);
    }

    #[test]
    fn generator_plants_dense_columns() {
        let a = generate_test_matrix(MatrixKind::DominantRow, 60, 0.02, 2, 9).unwrap();
        let stats = column_stats(&a, 8.0).unwrap();
        assert!(stats.threshold < 60.0);
        assert_eq!(stats.s, 2);
    }

    #[test]
    fn generator_rejects_bad_requests() {
        assert!(generate_test_matrix(MatrixKind::DominantRow, 1, 0.5, 0, 0).is_err());
        assert!(generate_test_matrix(MatrixKind::IrreduciblyDominant, 10, 0.01, 0, 0).is_err());
        assert!(generate_test_matrix(MatrixKind::DominantRow, 4, 0.5, 5, 0).is_err());
    }

    #[test]
    fn lu_pivots() {
        assert_eq!(dense_lu_min_pivot(&CscMatrix::identity(3)), Some(1.0));
        let sing = CscMatrix::from_triplets(2, 2, [(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        assert_eq!(dense_lu_min_pivot(&sing), None);
    }
}
