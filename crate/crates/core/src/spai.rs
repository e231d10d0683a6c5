//! Adaptive SPAI: each column `m_k` of the right approximate inverse grows
//! its pattern by the most profitable indices until
//! `||A m_k - e_k|| <= delta` or the loop budget runs out.
//!
//! Per loop, the candidate set is every column of `A` touching a nonzero
//! row of the current residual, minus the current pattern. Each candidate
//! `j` is scored by the residual norm `rho_j` left after the best
//! one-dimensional correction along `A e_j`; the `mn` smallest scores
//! (ties to the smaller index) are added in one batch, all scored against
//! the residual at the start of the loop.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaiError};
use crate::lstsq::{ColumnPattern, LsOptions, LsWorkspace};
use crate::sparse::{CscMatrix, SparseVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum InitialPattern {
    /// `S_k^(0) = {k}`.
    #[default]
    Unit,
    /// One caller-supplied pattern per column.
    Custom(Vec<ColumnPattern>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaiConfig {
    pub delta: f64,
    pub l_max: usize,
    pub mn: usize,
    pub initial_pattern: InitialPattern,
    #[serde(skip)]
    pub ls: LsOptions,
}

impl Default for SpaiConfig {
    fn default() -> Self {
        Self { delta: 0.4, l_max: 20, mn: 5, initial_pattern: InitialPattern::Unit, ls: LsOptions::default() }
    }
}

impl SpaiConfig {
    /// Loop budget used by the reference SPAI package.
    pub const PACKAGE_DEFAULT_L_MAX: usize = 5;

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(SaiError::Domain(format!("SPAI delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.mn == 0 {
            return Err(SaiError::Domain("SPAI needs at least one profitable index per loop".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Converged,
    LoopLimit,
    /// Residual above tolerance but no candidate can reduce it.
    NoCandidates,
    WorkspaceGuard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopProfile {
    /// `|J~|` at this loop.
    pub candidates: usize,
    /// `|L|`, nonzero rows of the residual.
    pub residual_rows: usize,
    /// Indices appended to the pattern.
    pub added: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnResult {
    pub m_k: SparseVector,
    pub residual_norm: f64,
    pub loops_used: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub initial_pattern: ColumnPattern,
    /// Residual norm after each solve, starting with the initial pattern.
    pub residual_history: Vec<f64>,
    pub profile: Vec<LoopProfile>,
}

impl ColumnResult {
    pub fn max_candidates(&self) -> usize {
        self.profile.iter().map(|p| p.candidates).max().unwrap_or(0)
    }
}

/// Candidate set `J~ = N \ S` where `N` are the columns of `A` with a
/// nonzero in some row where `r` is nonzero. Builds `A^T` on every call;
/// use [`SpaiEngine`] for repeated use.
pub fn spai_candidates(a: &CscMatrix, r: &SparseVector, pattern: &ColumnPattern) -> Vec<usize> {
    let at = a.transpose();
    let mut mark = vec![false; a.n_cols()];
    candidates_from_rows(&at, r.indices(), pattern, &mut mark)
}

fn candidates_from_rows(at: &CscMatrix, rows: &[usize], pattern: &ColumnPattern, mark: &mut [bool]) -> Vec<usize> {
    let mut out = Vec::new();
    for &i in rows {
        for &j in at.col(i).0 {
            if !mark[j] {
                mark[j] = true;
                out.push(j);
            }
        }
    }
    for &j in &out {
        mark[j] = false;
    }
    out.retain(|j| !pattern.contains(*j));
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profitability {
    pub index: usize,
    pub rho: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ProfitabilityScores {
    pub scores: Vec<Profitability>,
    /// Candidates with `A e_j = 0`, which can never reduce the residual.
    pub skipped: Vec<usize>,
}

/// Scores each candidate by `rho_j^2 = ||r||^2 - (r^T A e_j)^2 / ||A e_j||^2`
/// (clamped at zero), with `mu_j = -(r^T A e_j) / ||A e_j||^2`.
pub fn spai_profitability(a: &CscMatrix, r: &[f64], candidates: &[usize]) -> ProfitabilityScores {
    let r2: f64 = r.iter().map(|v| v * v).sum();
    let mut out = ProfitabilityScores::default();
    for &j in candidates {
        let (rows, vals) = a.col(j);
        let mut dot = 0.0;
        let mut nrm = 0.0;
        for (&i, &v) in rows.iter().zip(vals) {
            dot += r[i] * v;
            nrm += v * v;
        }
        if nrm == 0.0 {
            out.skipped.push(j);
            continue;
        }
        let rho2 = (r2 - dot * dot / nrm).max(0.0);
        out.scores.push(Profitability { index: j, rho: rho2.sqrt(), mu: -dot / nrm });
    }
    out
}

/// The `mn` candidates with smallest `rho`, ties to the smaller index,
/// returned sorted by index.
pub fn most_profitable(scores: &[Profitability], mn: usize) -> Vec<usize> {
    let mut order: Vec<&Profitability> = scores.iter().collect();
    order.sort_by(|x, y| x.rho.total_cmp(&y.rho).then(x.index.cmp(&y.index)));
    let mut picked: Vec<usize> = order.into_iter().take(mn).map(|p| p.index).collect();
    picked.sort_unstable();
    picked
}

/// Shared read-only state for running SPAI over many columns of one matrix.
pub struct SpaiEngine<'a> {
    a: &'a CscMatrix,
    at: CscMatrix,
    cfg: SpaiConfig,
}

struct Scratch {
    r: Vec<f64>,
    mark: Vec<bool>,
}

impl<'a> SpaiEngine<'a> {
    pub fn new(a: &'a CscMatrix, cfg: SpaiConfig) -> Result<Self> {
        cfg.validate()?;
        if !a.is_square() {
            return Err(SaiError::Domain("SPAI needs a square matrix".into()));
        }
        if let InitialPattern::Custom(p) = &cfg.initial_pattern {
            if p.len() != a.n_cols() {
                return Err(SaiError::DimensionMismatch { expected: a.n_cols(), got: p.len() });
            }
        }
        Ok(Self { a, at: a.transpose(), cfg })
    }

    fn scratch(&self) -> Scratch {
        Scratch { r: vec![0.0; self.a.n_rows()], mark: vec![false; self.a.n_cols()] }
    }

    pub fn column(&self, k: usize) -> Result<ColumnResult> {
        self.column_with(k, &mut self.scratch())
    }

    fn initial_workspace(&self, k: usize) -> Result<(LsWorkspace, ColumnPattern)> {
        let s0 = match &self.cfg.initial_pattern {
            InitialPattern::Unit => ColumnPattern::unit(k),
            InitialPattern::Custom(p) => p[k].clone(),
        };
        match LsWorkspace::new(self.a, k, &s0, self.cfg.ls) {
            Ok(w) => Ok((w, s0)),
            Err(SaiError::DegeneratePattern { .. }) => {
                let fallback = ColumnPattern::new(self.a.col(k).0.iter().copied());
                let w = LsWorkspace::new(self.a, k, &fallback, self.cfg.ls)?;
                Ok((w, fallback))
            }
            Err(e) => Err(e),
        }
    }

    fn column_with(&self, k: usize, scratch: &mut Scratch) -> Result<ColumnResult> {
        if k >= self.a.n_cols() {
            return Err(SaiError::IndexOutOfRange { index: k, bound: self.a.n_cols() });
        }
        let (mut ws, s0) = self.initial_workspace(k)?;
        let mut profile = Vec::new();
        let mut history = vec![ws.residual_norm()];
        let stop = loop {
            if ws.residual_norm() <= self.cfg.delta {
                break StopReason::Converged;
            }
            if profile.len() == self.cfg.l_max {
                break StopReason::LoopLimit;
            }
            let touched = ws.scatter_residual(&mut scratch.r);
            let pattern = ws.pattern();
            let cands = candidates_from_rows(&self.at, &touched, &pattern, &mut scratch.mark);
            let scores = spai_profitability(self.a, &scratch.r, &cands);
            for &i in &touched {
                scratch.r[i] = 0.0;
            }
            let picked = most_profitable(&scores.scores, self.cfg.mn);
            profile.push(LoopProfile { candidates: cands.len(), residual_rows: touched.len(), added: picked.clone() });
            if picked.is_empty() {
                profile.last_mut().unwrap().added.clear();
                break StopReason::NoCandidates;
            }
            match ws.augment(self.a, &picked) {
                Ok(()) => history.push(ws.residual_norm()),
                Err(SaiError::WorkspaceGuard { .. }) => {
                    profile.last_mut().unwrap().added.clear();
                    break StopReason::WorkspaceGuard;
                }
                Err(e) => return Err(e),
            }
        };
        let loops_used = history.len() - 1;
        Ok(ColumnResult {
            m_k: ws.solution(),
            residual_norm: ws.residual_norm(),
            loops_used,
            converged: stop == StopReason::Converged,
            stop,
            initial_pattern: s0,
            residual_history: history,
            profile,
        })
    }
}

pub fn spai_column(a: &CscMatrix, k: usize, cfg: &SpaiConfig) -> Result<ColumnResult> {
    SpaiEngine::new(a, cfg.clone())?.column(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub residual_norm: f64,
    pub loops_used: usize,
    pub nnz: usize,
    pub max_candidates: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaiReport {
    pub columns: Vec<ColumnSummary>,
    /// Columns whose residual stayed above `delta`.
    pub n_c: usize,
    /// Largest `|J~|` seen in any loop of any column.
    pub max_candidates: usize,
    /// Columns that could not be started at all; their `m_k` is zero.
    pub failures: Vec<(usize, SaiError)>,
}

impl SpaiReport {
    pub fn residuals(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.residual_norm).collect()
    }

    pub fn guard_hits(&self) -> usize {
        self.columns.iter().filter(|c| c.stop == StopReason::WorkspaceGuard).count()
            + self.failures.iter().filter(|(_, e)| matches!(e, SaiError::WorkspaceGuard { .. })).count()
    }
}

/// Runs SPAI on every column (in parallel on the current rayon pool) and
/// assembles `M`. A column that fails contributes a zero column and is
/// listed in `failures`.
pub fn spai(a: &CscMatrix, cfg: &SpaiConfig) -> Result<(CscMatrix, SpaiReport)> {
    let engine = SpaiEngine::new(a, cfg.clone())?;
    let n = a.n_cols();
    let results: Vec<Result<ColumnResult>> = (0..n)
        .into_par_iter()
        .map_init(|| engine.scratch(), |s, k| engine.column_with(k, s))
        .collect();

    let mut columns = Vec::with_capacity(n);
    let mut summaries = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => {
                summaries.push(ColumnSummary {
                    residual_norm: c.residual_norm,
                    loops_used: c.loops_used,
                    nnz: c.m_k.nnz(),
                    max_candidates: c.max_candidates(),
                    stop: c.stop,
                });
                columns.push(c.m_k);
            }
            Err(e) => {
                summaries.push(ColumnSummary {
                    residual_norm: 1.0,
                    loops_used: 0,
                    nnz: 0,
                    max_candidates: 0,
                    stop: if matches!(e, SaiError::WorkspaceGuard { .. }) { StopReason::WorkspaceGuard } else { StopReason::NoCandidates },
                });
                failures.push((k, e));
                columns.push(SparseVector::zeros(n));
            }
        }
    }
    let m = CscMatrix::from_columns(n, &columns)?;
    let n_c = summaries.iter().filter(|c| c.residual_norm > cfg.delta).count();
    let max_candidates = summaries.iter().map(|c| c.max_candidates).max().unwrap_or(0);
    Ok((m, SpaiReport { columns: summaries, n_c, max_candidates, failures }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upper2() -> CscMatrix {
        CscMatrix::from_triplets(2, 2, [(0, 0, 2.0), (0, 1, 1.0), (1, 1, 3.0)]).unwrap()
    }

    #[test]
    fn candidates_identity() {
        let a = CscMatrix::identity(5);
        let r = SparseVector::unit(5, 3);
        assert_eq!(spai_candidates(&a, &r, &ColumnPattern::unit(1)), vec![3]);
        assert!(spai_candidates(&a, &SparseVector::zeros(5), &ColumnPattern::unit(1)).is_empty());
    }

    #[test]
    fn candidates_with_dense_column() {
        let n = 12;
        let mut t: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 2.0)).collect();
        t.extend((0..n).filter(|&i| i != 3).map(|i| (i, 3, 1.0)));
        let a = CscMatrix::from_triplets(n, n, t).unwrap();
        let r = SparseVector::new(n, (0..n).map(|i| (i, 1.0))).unwrap();
        let s = ColumnPattern::unit(0);
        // brute force over the dense pattern
        let d = a.to_dense();
        let brute: Vec<usize> = (0..n).filter(|&j| !s.contains(j) && (0..n).any(|i| d[(i, j)] != 0.0)).collect();
        let got = spai_candidates(&a, &r, &s);
        assert_eq!(got, brute);
        assert!(got.contains(&3));
        assert_eq!(got.len(), n - 1);
    }

    #[test]
    fn rho_limits() {
        let a = CscMatrix::from_triplets(3, 3, [(0, 0, 1.0), (1, 1, 2.0), (2, 2, 1.0), (0, 2, 1.0), (1, 2, 1.0)]).unwrap();
        // r orthogonal to A e_0
        let r = [0.0, 0.0, 3.0];
        let s = spai_profitability(&a, &r, &[0]);
        assert_eq!(s.scores[0].rho, 3.0);
        // r parallel to A e_2 = (1, 1, 1)
        let r = [2.0, 2.0, 2.0];
        let s = spai_profitability(&a, &r, &[2]);
        assert!(s.scores[0].rho.abs() < 1e-7);
        assert!((s.scores[0].mu + 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_column_is_skipped() {
        let a = CscMatrix::from_triplets(2, 2, [(0, 0, 1.0)]).unwrap();
        let s = spai_profitability(&a, &[1.0, 1.0], &[0, 1]);
        assert_eq!(s.skipped, vec![1]);
        assert_eq!(s.scores.len(), 1);
    }

    #[test]
    fn ties_prefer_smaller_index() {
        let scores = vec![
            Profitability { index: 7, rho: 0.5, mu: 0.0 },
            Profitability { index: 2, rho: 0.5, mu: 0.0 },
            Profitability { index: 4, rho: 0.1, mu: 0.0 },
        ];
        assert_eq!(most_profitable(&scores, 2), vec![2, 4]);
        assert_eq!(most_profitable(&scores, 10), vec![2, 4, 7]);
    }

    #[test]
    fn identity_needs_no_loops() {
        let c = spai_column(&CscMatrix::identity(6), 4, &SpaiConfig::default()).unwrap();
        assert_eq!(c.m_k, SparseVector::unit(6, 4));
        assert_eq!(c.loops_used, 0);
        assert!(c.converged);
    }

    #[test]
    fn upper_triangular_exact_column() {
        let c = spai_column(&upper2(), 1, &SpaiConfig { delta: 0.1, ..SpaiConfig::default() }).unwrap();
        assert!(c.converged);
        assert_eq!(c.loops_used, 1);
        let m = c.m_k.to_dense();
        assert!((m[0] + 1.0 / 6.0).abs() < 1e-14 && (m[1] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn diagonal_matrix() {
        let n = 8;
        let a = CscMatrix::from_triplets(n, n, (0..n).map(|i| (i, i, 2.0))).unwrap();
        let (m, rep) = spai(&a, &SpaiConfig::default()).unwrap();
        assert_eq!(rep.n_c, 0);
        for i in 0..n {
            assert_eq!(m.get(i, i), 0.5);
        }
        assert_eq!(m.nnz(), n);
        let (m, _) = spai(&CscMatrix::identity(n), &SpaiConfig::default()).unwrap();
        assert_eq!(m, CscMatrix::identity(n));
    }

    #[test]
    fn unreachable_target_stops_early() {
        // column 0 only touches row 1, row 0 is empty: e_0 is unreachable
        let a = CscMatrix::from_triplets(2, 2, [(1, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let c = spai_column(&a, 0, &SpaiConfig::default()).unwrap();
        assert!(!c.converged);
        assert_eq!(c.stop, StopReason::NoCandidates);
        assert!((c.residual_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_column_k_is_error() {
        let a = CscMatrix::from_triplets(2, 2, [(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        assert!(matches!(spai_column(&a, 1, &SpaiConfig::default()), Err(SaiError::DegeneratePattern { .. })));
        let (m, rep) = spai(&a, &SpaiConfig::default()).unwrap();
        assert_eq!(rep.failures.len(), 1);
        assert_eq!(m.col_nnz(1), 0);
        assert_eq!(rep.n_c, 2);
    }

    #[test]
    fn config_validation() {
        let bad = SpaiConfig { delta: 1.5, ..SpaiConfig::default() };
        assert!(spai_column(&CscMatrix::identity(2), 0, &bad).is_err());
        let bad = SpaiConfig { mn: 0, ..SpaiConfig::default() };
        assert!(bad.validate().is_err());
    }
}
