//! PSAI(tol): power sparse approximate inverse with adaptive dropping.
//!
//! Column `k` starts from `S = {k}` and `a = e_k`. Each loop replaces `a`
//! by `A a`, merges its pattern into `S`, re-solves the least-squares
//! problem, then drops every entry (except the pivot `m_kk`) whose
//! magnitude is at most `tol_k = delta / (nnz(m_k) * ||A||_1)` and
//! re-solves once on the reduced pattern. The loop ends when the residual
//! reaches `delta` or after `l_max` pattern growths. BPSAI is the same
//! procedure with dropping switched off.
//!
//! Patterns of `A^l e_k` are propagated structurally: an entry that would
//! cancel numerically still counts as a member.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaiError};
use crate::lstsq::{ColumnPattern, LsOptions, LsWorkspace};
use crate::sparse::{CscMatrix, SparseVector};
use crate::spai::StopReason;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum TolPolicy {
    #[default]
    Adaptive,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaiConfig {
    pub delta: f64,
    pub l_max: usize,
    pub tol_policy: TolPolicy,
    #[serde(skip)]
    pub ls: LsOptions,
}

impl Default for PsaiConfig {
    fn default() -> Self {
        Self { delta: 0.4, l_max: 10, tol_policy: TolPolicy::Adaptive, ls: LsOptions::default() }
    }
}

impl PsaiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 0.5) {
            return Err(SaiError::Domain(format!("PSAI delta must lie in (0, 0.5), got {}", self.delta)));
        }
        if let TolPolicy::Fixed(t) = self.tol_policy {
            if !(t.is_finite() && t >= 0.0) {
                return Err(SaiError::Domain(format!("fixed dropping tolerance must be >= 0, got {t}")));
            }
        }
        Ok(())
    }
}

/// Adaptive dropping tolerance `delta / (nnz_mk * a_norm1)`.
pub fn psai_tol(delta: f64, nnz_mk: usize, a_norm1: f64) -> Result<f64> {
    if nnz_mk == 0 {
        return Err(SaiError::Domain("dropping tolerance needs nnz(m_k) >= 1".into()));
    }
    if !(a_norm1 > 0.0) {
        return Err(SaiError::Domain(format!("dropping tolerance needs ||A||_1 > 0, got {a_norm1}")));
    }
    Ok(delta / (nnz_mk as f64 * a_norm1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropEvent {
    /// Loop (1-based pattern growth) at which the entry was removed.
    pub loop_index: usize,
    pub index: usize,
    pub value: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaiColumnResult {
    pub m_k: SparseVector,
    pub residual_norm: f64,
    /// Pattern growths performed (`l_m` for this column).
    pub loops_used: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub dropped_count: usize,
    pub drops: Vec<DropEvent>,
    pub residual_history: Vec<f64>,
}

struct Engine<'a> {
    a: &'a CscMatrix,
    cfg: PsaiConfig,
    norm1: f64,
    dropping: bool,
}

impl Engine<'_> {
    fn new(a: &CscMatrix, cfg: PsaiConfig, dropping: bool) -> Result<Engine<'_>> {
        cfg.validate()?;
        if !a.is_square() {
            return Err(SaiError::Domain("PSAI needs a square matrix".into()));
        }
        Ok(Engine { a, norm1: a.norm1(), cfg, dropping })
    }

    /// Pattern of `A x` given the pattern of `x`.
    fn next_reach(&self, reach: &[usize], mark: &mut [bool]) -> Vec<usize> {
        let mut out = Vec::new();
        for &j in reach {
            for &i in self.a.col(j).0 {
                if !mark[i] {
                    mark[i] = true;
                    out.push(i);
                }
            }
        }
        for &i in &out {
            mark[i] = false;
        }
        out.sort_unstable();
        out
    }

    fn column(&self, k: usize, mark: &mut [bool]) -> Result<PsaiColumnResult> {
        if k >= self.a.n_cols() {
            return Err(SaiError::IndexOutOfRange { index: k, bound: self.a.n_cols() });
        }
        let mut ws = LsWorkspace::new(self.a, k, &ColumnPattern::unit(k), self.cfg.ls)?;
        let mut reach = vec![k];
        let mut history = vec![ws.residual_norm()];
        let mut drops = Vec::new();
        let mut loops = 0;
        let stop = loop {
            if ws.residual_norm() <= self.cfg.delta {
                break StopReason::Converged;
            }
            if loops == self.cfg.l_max {
                break StopReason::LoopLimit;
            }
            loops += 1;
            reach = self.next_reach(&reach, mark);
            let pattern = ws.pattern();
            let fresh: Vec<usize> = reach.iter().copied().filter(|&j| !pattern.contains(j)).collect();
            if !fresh.is_empty() {
                match ws.augment(self.a, &fresh) {
                    Ok(()) => {}
                    Err(SaiError::WorkspaceGuard { .. }) => {
                        history.push(ws.residual_norm());
                        break StopReason::WorkspaceGuard;
                    }
                    Err(e) => return Err(SaiError::Domain(format!("PSAI column {k}: {e}"))),
                }
            }
            if self.dropping {
                let coefs = ws.coefficients();
                let nnz = coefs.iter().filter(|c| c.1 != 0.0).count();
                if nnz > 0 {
                    let tol = match self.cfg.tol_policy {
                        TolPolicy::Adaptive => psai_tol(self.cfg.delta, nnz, self.norm1)?,
                        TolPolicy::Fixed(t) => t,
                    };
                    let mut victims = Vec::new();
                    for &(j, v) in &coefs {
                        if j != k && v.abs() <= tol {
                            victims.push(j);
                            drops.push(DropEvent { loop_index: loops, index: j, value: v, tol });
                        }
                    }
                    if !victims.is_empty() {
                        ws = ws.drop_columns(self.a, &victims)?;
                    }
                }
            }
            history.push(ws.residual_norm());
        };
        Ok(PsaiColumnResult {
            m_k: ws.solution(),
            residual_norm: ws.residual_norm(),
            loops_used: loops,
            converged: stop == StopReason::Converged,
            stop,
            dropped_count: drops.len(),
            drops,
            residual_history: history,
        })
    }
}

pub fn psai_column(a: &CscMatrix, k: usize, cfg: &PsaiConfig) -> Result<PsaiColumnResult> {
    let e = Engine::new(a, cfg.clone(), true)?;
    e.column(k, &mut vec![false; a.n_rows()])
}

/// PSAI without dropping.
pub fn bpsai_column(a: &CscMatrix, k: usize, cfg: &PsaiConfig) -> Result<PsaiColumnResult> {
    let e = Engine::new(a, cfg.clone(), false)?;
    e.column(k, &mut vec![false; a.n_rows()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaiColumnSummary {
    pub residual_norm: f64,
    pub loops_used: usize,
    pub nnz: usize,
    pub dropped_count: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaiReport {
    pub columns: Vec<PsaiColumnSummary>,
    /// Largest number of loops used by any column.
    pub l_m: usize,
    pub n_c: usize,
    pub failures: Vec<(usize, SaiError)>,
}

impl PsaiReport {
    pub fn residuals(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.residual_norm).collect()
    }

    pub fn guard_hits(&self) -> usize {
        self.columns.iter().filter(|c| c.stop == StopReason::WorkspaceGuard).count()
            + self.failures.iter().filter(|(_, e)| matches!(e, SaiError::WorkspaceGuard { .. })).count()
    }
}

fn run(a: &CscMatrix, cfg: &PsaiConfig, dropping: bool) -> Result<(CscMatrix, PsaiReport)> {
    let engine = Engine::new(a, cfg.clone(), dropping)?;
    let n = a.n_cols();
    let results: Vec<Result<PsaiColumnResult>> = (0..n)
        .into_par_iter()
        .map_init(|| vec![false; n], |mark, k| engine.column(k, mark))
        .collect();
    let mut columns = Vec::with_capacity(n);
    let mut summaries = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => {
                summaries.push(PsaiColumnSummary {
                    residual_norm: c.residual_norm,
                    loops_used: c.loops_used,
                    nnz: c.m_k.nnz(),
                    dropped_count: c.dropped_count,
                    stop: c.stop,
                });
                columns.push(c.m_k);
            }
            Err(e) => {
                summaries.push(PsaiColumnSummary {
                    residual_norm: 1.0,
                    loops_used: 0,
                    nnz: 0,
                    dropped_count: 0,
                    stop: if matches!(e, SaiError::WorkspaceGuard { .. }) { StopReason::WorkspaceGuard } else { StopReason::NoCandidates },
                });
                failures.push((k, e));
                columns.push(SparseVector::zeros(n));
            }
        }
    }
    let m = CscMatrix::from_columns(n, &columns)?;
    let l_m = summaries.iter().map(|c| c.loops_used).max().unwrap_or(0);
    let n_c = summaries.iter().filter(|c| c.residual_norm > cfg.delta).count();
    Ok((m, PsaiReport { columns: summaries, l_m, n_c, failures }))
}

/// PSAI(tol) over all columns, in parallel on the current rayon pool.
pub fn psai(a: &CscMatrix, cfg: &PsaiConfig) -> Result<(CscMatrix, PsaiReport)> {
    run(a, cfg, true)
}

pub fn bpsai(a: &CscMatrix, cfg: &PsaiConfig) -> Result<(CscMatrix, PsaiReport)> {
    run(a, cfg, false)
}
