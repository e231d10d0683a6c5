//! End-to-end solves: split `A = A~ + U V^T`, precondition `A~` once,
//! solve the `s + 1` systems `A~ y = b`, `A~ w_j = u_j`, and recover
//!
//! ```text
//! x^ = y^ - W^ (I + V^T W^)^{-1} (V^T y^)
//! ```
//!
//! The `w` systems are stopped at `eps ||b|| / (2 sqrt(s) c ||u_j||)`; with
//! the exact `c = ||(I + V^T W^)^{-1} V^T y^||` this guarantees
//! `||b - A x^|| < eps ||b||`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SaiError};
use crate::krylov::{bicgstab_csc, BicgstabOptions, SolveFlag, SolveOutcome};
use crate::matching::zero_free_diagonal_permutation;
use crate::psai::{psai, PsaiConfig};
use crate::spai::{spai, SpaiConfig};
use crate::sparse::{norm2, CscMatrix};
use crate::splitting::{split, SplitOptions, SplitSystem};

pub const SCHEMA_VERSION: u32 = 1;
/// Relative pivot tolerance for the `s x s` capacitance factorization.
pub const CAPACITANCE_PIVOT_TOL: f64 = 1e-14;
/// Extra re-solve rounds allowed in [`CPolicy::Posthoc`].
pub const MAX_POSTHOC_PASSES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Spai(SpaiConfig),
    Psai(PsaiConfig),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Spai(_) => "spai",
            Method::Psai(_) => "psai",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CPolicy {
    /// Use this value for `c` in the `w` tolerances.
    Fixed(f64),
    /// Start from `c = 1`, then recompute `c` from the solutions and
    /// re-solve the `w` systems until their residuals meet the tolerances
    /// for the computed `c`.
    Posthoc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Permute {
    /// Permute only if the diagonal has structural zeros.
    #[default]
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverConfig {
    pub epsilon: f64,
    pub c_policy: CPolicy,
    pub method: Method,
    pub max_iter: usize,
    pub permute: Permute,
    pub split: SplitOptions,
}

impl Default for DriverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-8,
            c_policy: CPolicy::Fixed(1.0),
            method: Method::Psai(PsaiConfig::default()),
            max_iter: 500,
            permute: Permute::Auto,
            split: SplitOptions::default(),
        }
    }
}

impl DriverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(SaiError::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if let CPolicy::Fixed(c) = self.c_policy {
            if !(c.is_finite() && c > 0.0) {
                return Err(SaiError::Domain(format!("c must be positive, got {c}")));
            }
        }
        match &self.method {
            Method::Spai(c) => c.validate(),
            Method::Psai(c) => c.validate(),
        }
    }
}

// ---------------------------------------------------------------------------
// SMW building blocks

/// Dense LU of a sparse matrix, used for exact inner solves on small
/// problems.
pub struct DenseSolver {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl DenseSolver {
    pub fn new(a: &CscMatrix) -> Result<Self> {
        if !a.is_square() {
            return Err(SaiError::Domain("dense solve needs a square matrix".into()));
        }
        let lu = a.to_dense().lu();
        if !lu.is_invertible() {
            return Err(SaiError::SingularUpdate { cond: f64::INFINITY });
        }
        Ok(Self { lu })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = self
            .lu
            .solve(&DVector::from_column_slice(b))
            .ok_or(SaiError::SingularUpdate { cond: f64::INFINITY })?;
        Ok(x.as_slice().to_vec())
    }
}

/// Result of combining `y^` and `W^`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assembly {
    pub x_hat: Vec<f64>,
    /// `z = (I + V^T W^)^{-1} V^T y^`.
    pub z: Vec<f64>,
    /// `c = ||z||`.
    pub c: f64,
    /// 2-norm condition number of `I + V^T W^`.
    pub cond: f64,
}

fn cond2(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `x^ = y^ - W^ (I + V^T W^)^{-1} (V^T y^)`. `w_hat` is `n x s`.
pub fn assemble_solution(y_hat: &[f64], w_hat: &DMatrix<f64>, irregular_cols: &[usize]) -> Result<Assembly> {
    let n = y_hat.len();
    let s = irregular_cols.len();
    if w_hat.nrows() != n || w_hat.ncols() != s {
        return Err(SaiError::DimensionMismatch { expected: n * s, got: w_hat.nrows() * w_hat.ncols() });
    }
    if s == 0 {
        return Ok(Assembly { x_hat: y_hat.to_vec(), z: Vec::new(), c: 0.0, cond: 1.0 });
    }
    let mut cap = DMatrix::<f64>::identity(s, s);
    for (i, &row) in irregular_cols.iter().enumerate() {
        if row >= n {
            return Err(SaiError::IndexOutOfRange { index: row, bound: n });
        }
        for j in 0..s {
            cap[(i, j)] += w_hat[(row, j)];
        }
    }
    let vty = DVector::from_iterator(s, irregular_cols.iter().map(|&r| y_hat[r]));
    let cond = cond2(&cap);
    let scale = cap.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lu = cap.lu();
    let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if !(min_pivot > CAPACITANCE_PIVOT_TOL * scale) {
        return Err(SaiError::SingularUpdate { cond });
    }
    let z = lu.solve(&vty).ok_or(SaiError::SingularUpdate { cond })?;
    let wz = w_hat * &z;
    let x_hat = y_hat.iter().zip(wz.iter()).map(|(y, d)| y - d).collect();
    Ok(Assembly { x_hat, c: z.norm(), z: z.as_slice().to_vec(), cond })
}

/// Exact SMW solve with a caller-supplied solver for `A~`.
pub fn smw_inverse_apply<F>(solve: F, u: &CscMatrix, irregular_cols: &[usize], b: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let n = b.len();
    if u.n_rows() != n || u.n_cols() != irregular_cols.len() {
        return Err(SaiError::DimensionMismatch { expected: irregular_cols.len(), got: u.n_cols() });
    }
    let y = solve(b)?;
    let mut w = DMatrix::<f64>::zeros(n, irregular_cols.len());
    for j in 0..irregular_cols.len() {
        let wj = solve(&u.column(j).to_dense())?;
        w.set_column(j, &DVector::from_vec(wj));
    }
    Ok(assemble_solution(&y, &w, irregular_cols)?.x_hat)
}

/// `r = r_y - R_W z`, the residual of the assembled solution expressed
/// through the subsystem residuals.
pub fn residual_composition(r_y: &[f64], r_w: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let rz = r_w * DVector::from_column_slice(z);
    r_y.iter().zip(rz.iter()).map(|(a, b)| a - b).collect()
}

/// `(tol_y, tol_w)` with `tol_y = eps / 2` and
/// `tol_w[j] = eps ||b|| / (2 sqrt(s) c ||u_j||)`, all relative to the
/// respective right-hand side.
pub fn subsystem_tolerances(epsilon: f64, s: usize, c: f64, norm_b: f64, norm_u: &[f64]) -> Result<(f64, Vec<f64>)> {
    if !(epsilon > 0.0) {
        return Err(SaiError::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if norm_u.len() != s {
        return Err(SaiError::DimensionMismatch { expected: s, got: norm_u.len() });
    }
    if !(norm_b > 0.0) {
        return Err(SaiError::Domain("right-hand side has zero norm".into()));
    }
    if s == 0 {
        return Ok((epsilon / 2.0, Vec::new()));
    }
    if !(c > 0.0) {
        return Err(SaiError::Domain(format!("c must be positive, got {c}")));
    }
    let root_s = (s as f64).sqrt();
    let mut tol_w = Vec::with_capacity(s);
    for &nu in norm_u {
        if !(nu > 0.0) {
            return Err(SaiError::Domain("column of U has zero norm".into()));
        }
        tol_w.push(epsilon * norm_b / (2.0 * root_s * c * nu));
    }
    Ok((epsilon / 2.0, tol_w))
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecondStats {
    pub method: String,
    pub nnz_m: usize,
    /// `nnz(M)` over `nnz` of the matrix it approximates.
    pub spar: f64,
    /// Columns whose residual stayed above `delta`.
    pub n_c: usize,
    /// PSAI only: most loops used by any column.
    pub l_m: Option<usize>,
    /// SPAI only: largest candidate set seen.
    pub max_candidates: Option<usize>,
    pub guard_hits: usize,
    pub failed_columns: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    Standard,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Timings {
    pub setup_seconds: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub mode: SolveMode,
    pub n: usize,
    pub nnz: usize,
    pub s: usize,
    pub irregular_cols: Vec<usize>,
    pub permuted: bool,
    pub epsilon: f64,
    /// `||b - A x^|| / ||b||` against the original `A`, `b`.
    pub rr: f64,
    /// `rr / epsilon`.
    pub a: f64,
    pub iter_y: usize,
    pub iter_w: Vec<usize>,
    pub max_iter_used: usize,
    pub flag_y: SolveFlag,
    pub flags_w: Vec<SolveFlag>,
    pub c_used: f64,
    /// `||(I + V^T W^)^{-1} V^T y^||` of the final iterates.
    pub c_exact: Option<f64>,
    pub posthoc_passes: usize,
    pub small_system_condition: Option<f64>,
    pub preconditioner: PrecondStats,
    pub timings: Timings,
    pub x_hat: Vec<f64>,
}

impl SolveReport {
    pub fn met_target(&self) -> bool {
        self.a < 1.0
    }

    pub fn all_converged(&self) -> bool {
        self.flag_y == SolveFlag::Converged && self.flags_w.iter().all(|f| *f == SolveFlag::Converged)
    }
}

// ---------------------------------------------------------------------------
// Pipelines

/// Builds `M` for `a` with the configured method.
pub fn build_preconditioner(a: &CscMatrix, method: &Method) -> Result<(CscMatrix, PrecondStats)> {
    let (m, mut stats) = match method {
        Method::Spai(cfg) => {
            let (m, rep) = spai(a, cfg)?;
            let stats = PrecondStats {
                method: "spai".into(),
                nnz_m: m.nnz(),
                spar: 0.0,
                n_c: rep.n_c,
                l_m: None,
                max_candidates: Some(rep.max_candidates),
                guard_hits: rep.guard_hits(),
                failed_columns: rep.failures.len(),
            };
            (m, stats)
        }
        Method::Psai(cfg) => {
            let (m, rep) = psai(a, cfg)?;
            let stats = PrecondStats {
                method: "psai".into(),
                nnz_m: m.nnz(),
                spar: 0.0,
                n_c: rep.n_c,
                l_m: Some(rep.l_m),
                max_candidates: None,
                guard_hits: rep.guard_hits(),
                failed_columns: rep.failures.len(),
            };
            (m, stats)
        }
    };
    stats.spar = m.nnz() as f64 / a.nnz().max(1) as f64;
    Ok((m, stats))
}

fn supplied_stats(m: &CscMatrix, a: &CscMatrix) -> PrecondStats {
    PrecondStats {
        method: "supplied".into(),
        nnz_m: m.nnz(),
        spar: m.nnz() as f64 / a.nnz().max(1) as f64,
        n_c: 0,
        l_m: None,
        max_candidates: None,
        guard_hits: 0,
        failed_columns: 0,
    }
}

/// Applies the configured row permutation. Returns `(PA, Pb, permuted)`.
pub fn preprocess(a: &CscMatrix, b: &[f64], permute: Permute) -> Result<(CscMatrix, Vec<f64>, bool)> {
    let apply = match permute {
        Permute::Never => false,
        Permute::Always => true,
        Permute::Auto => !a.has_zero_free_diagonal(),
    };
    if !apply {
        return Ok((a.clone(), b.to_vec(), false));
    }
    let perm = zero_free_diagonal_permutation(a)?;
    let identity = perm.iter().enumerate().all(|(i, &p)| i == p);
    let pa = a.permute_rows(&perm)?;
    let pb = perm.iter().map(|&i| b[i]).collect();
    Ok((pa, pb, !identity))
}

fn check_inputs(a: &CscMatrix, b: &[f64], cfg: &DriverConfig) -> Result<()> {
    cfg.validate()?;
    if !a.is_square() {
        return Err(SaiError::Domain(format!("solve needs a square matrix, got {}x{}", a.n_rows(), a.n_cols())));
    }
    if b.len() != a.n_rows() {
        return Err(SaiError::DimensionMismatch { expected: a.n_rows(), got: b.len() });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(SaiError::Domain("right-hand side has non-finite entries".into()));
    }
    Ok(())
}

/// `||b - A x|| / ||b||`.
pub fn relative_residual(a: &CscMatrix, x: &[f64], b: &[f64]) -> Result<f64> {
    let ax = a.matvec(x)?;
    let r: f64 = b.iter().zip(&ax).map(|(bi, ai)| (bi - ai) * (bi - ai)).sum();
    let nb = norm2(b);
    Ok(if nb == 0.0 { r.sqrt() } else { r.sqrt() / nb })
}

fn zero_rhs_report(a: &CscMatrix, cfg: &DriverConfig, mode: SolveMode) -> SolveReport {
    SolveReport {
        schema_version: SCHEMA_VERSION,
        mode,
        n: a.n_rows(),
        nnz: a.nnz(),
        s: 0,
        irregular_cols: Vec::new(),
        permuted: false,
        epsilon: cfg.epsilon,
        rr: 0.0,
        a: 0.0,
        iter_y: 0,
        iter_w: Vec::new(),
        max_iter_used: 0,
        flag_y: SolveFlag::Converged,
        flags_w: Vec::new(),
        c_used: 0.0,
        c_exact: None,
        posthoc_passes: 0,
        small_system_condition: None,
        preconditioner: PrecondStats {
            method: cfg.method.name().into(),
            nnz_m: 0,
            spar: 0.0,
            n_c: 0,
            l_m: None,
            max_candidates: None,
            guard_hits: 0,
            failed_columns: 0,
        },
        timings: Timings::default(),
        x_hat: vec![0.0; a.n_rows()],
    }
}

/// Preconditions `A` directly and runs a single solve with `tol = eps`.
pub fn solve_standard(a: &CscMatrix, b: &[f64], cfg: &DriverConfig) -> Result<SolveReport> {
    solve_standard_with(a, b, cfg, None)
}

/// As [`solve_standard`], reusing `m` (built for the permuted `A`) when given.
pub fn solve_standard_with(a: &CscMatrix, b: &[f64], cfg: &DriverConfig, m: Option<&CscMatrix>) -> Result<SolveReport> {
    check_inputs(a, b, cfg)?;
    if norm2(b) == 0.0 {
        return Ok(zero_rhs_report(a, cfg, SolveMode::Standard));
    }
    let (pa, pb, permuted) = preprocess(a, b, cfg.permute)?;
    let t0 = Instant::now();
    let (m, stats) = match m {
        Some(m) => (m.clone(), supplied_stats(m, &pa)),
        None => build_preconditioner(&pa, &cfg.method)?,
    };
    let setup = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let opts = BicgstabOptions { tol: cfg.epsilon, max_iter: cfg.max_iter };
    let out = bicgstab_csc(&pa, Some(&m), &pb, None, &opts)?;
    let solve = t1.elapsed().as_secs_f64();
    let rr = relative_residual(a, &out.x, b)?;
    Ok(SolveReport {
        schema_version: SCHEMA_VERSION,
        mode: SolveMode::Standard,
        n: a.n_rows(),
        nnz: a.nnz(),
        s: 0,
        irregular_cols: Vec::new(),
        permuted,
        epsilon: cfg.epsilon,
        rr,
        a: rr / cfg.epsilon,
        iter_y: out.iterations,
        iter_w: Vec::new(),
        max_iter_used: out.iterations,
        flag_y: out.flag,
        flags_w: Vec::new(),
        c_used: 0.0,
        c_exact: None,
        posthoc_passes: 0,
        small_system_condition: None,
        preconditioner: stats,
        timings: Timings { setup_seconds: setup, solve_seconds: solve },
        x_hat: out.x,
    })
}

/// Splits the (optionally permuted) matrix. Exposed so callers can build
/// a preconditioner for `A~` ahead of [`solve_irregular_with`].
pub fn prepare_split(a: &CscMatrix, b: &[f64], cfg: &DriverConfig) -> Result<(SplitSystem, Vec<f64>, bool)> {
    let (pa, pb, permuted) = preprocess(a, b, cfg.permute)?;
    Ok((split(&pa, &cfg.split)?, pb, permuted))
}

/// The split pipeline. Falls back to [`solve_standard`] when no column is
/// irregular.
pub fn solve_irregular(a: &CscMatrix, b: &[f64], cfg: &DriverConfig) -> Result<SolveReport> {
    solve_irregular_with(a, b, cfg, None)
}

/// As [`solve_irregular`], reusing `m` (built for `A~`) when given.
pub fn solve_irregular_with(a: &CscMatrix, b: &[f64], cfg: &DriverConfig, m: Option<&CscMatrix>) -> Result<SolveReport> {
    check_inputs(a, b, cfg)?;
    if norm2(b) == 0.0 {
        return Ok(zero_rhs_report(a, cfg, SolveMode::Split));
    }
    let (sys, pb, permuted) = prepare_split(a, b, cfg)?;
    if sys.s() == 0 {
        return solve_standard_with(a, b, cfg, m);
    }
    let s = sys.s();
    let n = a.n_rows();
    let t0 = Instant::now();
    let (m, stats) = match m {
        Some(m) => (m.clone(), supplied_stats(m, &sys.a_tilde)),
        None => build_preconditioner(&sys.a_tilde, &cfg.method)?,
    };
    let setup = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let u_cols: Vec<Vec<f64>> = (0..s).map(|j| sys.u.column(j).to_dense()).collect();
    let norm_b = norm2(&pb);
    let norm_u: Vec<f64> = u_cols.iter().map(|u| norm2(u)).collect();
    let c0 = match cfg.c_policy {
        CPolicy::Fixed(c) => c,
        CPolicy::Posthoc => 1.0,
    };
    let (tol_y, tol_w) = subsystem_tolerances(cfg.epsilon, s, c0, norm_b, &norm_u)?;

    let at = &sys.a_tilde;
    let solve_one = |rhs: &[f64], tol: f64, x0: Option<&[f64]>| -> Result<SolveOutcome> {
        bicgstab_csc(at, Some(&m), rhs, x0, &BicgstabOptions { tol, max_iter: cfg.max_iter })
    };
    let mut outcomes: Vec<SolveOutcome> = (0..=s)
        .into_par_iter()
        .map(|j| if j == 0 { solve_one(&pb, tol_y, None) } else { solve_one(&u_cols[j - 1], tol_w[j - 1], None) })
        .collect::<Result<_>>()?;
    let out_y = outcomes.remove(0);
    let mut out_w = outcomes;
    let mut iter_w: Vec<usize> = out_w.iter().map(|o| o.iterations).collect();

    let w_matrix = |out_w: &[SolveOutcome]| {
        let mut w = DMatrix::<f64>::zeros(n, s);
        for (j, o) in out_w.iter().enumerate() {
            w.set_column(j, &DVector::from_column_slice(&o.x));
        }
        w
    };
    let mut asm = assemble_solution(&out_y.x, &w_matrix(&out_w), &sys.irregular_cols)?;
    let mut passes = 0;
    let mut c_used = c0;
    if cfg.c_policy == CPolicy::Posthoc {
        while passes < MAX_POSTHOC_PASSES {
            let c = asm.c.max(f64::MIN_POSITIVE);
            let (_, tol_exact) = subsystem_tolerances(cfg.epsilon, s, c, norm_b, &norm_u)?;
            let redo: Vec<usize> = (0..s).filter(|&j| !(out_w[j].rel_residual < tol_exact[j])).collect();
            if redo.is_empty() {
                break;
            }
            passes += 1;
            c_used = c;
            let fresh: Vec<(usize, SolveOutcome)> = redo
                .par_iter()
                .map(|&j| solve_one(&u_cols[j], tol_exact[j], Some(&out_w[j].x)).map(|o| (j, o)))
                .collect::<Result<_>>()?;
            for (j, o) in fresh {
                iter_w[j] += o.iterations;
                out_w[j] = o;
            }
            asm = assemble_solution(&out_y.x, &w_matrix(&out_w), &sys.irregular_cols)?;
        }
    }
    let solve = t1.elapsed().as_secs_f64();
    let rr = relative_residual(a, &asm.x_hat, b)?;
    let max_iter_used = iter_w.iter().copied().chain([out_y.iterations]).max().unwrap_or(0);
    Ok(SolveReport {
        schema_version: SCHEMA_VERSION,
        mode: SolveMode::Split,
        n,
        nnz: a.nnz(),
        s,
        irregular_cols: sys.irregular_cols.clone(),
        permuted,
        epsilon: cfg.epsilon,
        rr,
        a: rr / cfg.epsilon,
        iter_y: out_y.iterations,
        iter_w,
        max_iter_used,
        flag_y: out_y.flag,
        flags_w: out_w.iter().map(|o| o.flag).collect(),
        c_used,
        c_exact: Some(asm.c),
        posthoc_passes: passes,
        small_system_condition: Some(asm.cond),
        preconditioner: stats,
        timings: Timings { setup_seconds: setup, solve_seconds: solve },
        x_hat: asm.x_hat,
    })
}
