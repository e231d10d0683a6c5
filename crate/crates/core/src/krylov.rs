//! Right-preconditioned BiCGStab.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SaiError};
use crate::sparse::{dot, norm2, CscMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveFlag {
    Converged,
    MaxIter,
    Breakdown,
    Stagnation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||b - A x|| / ||b||` of the returned `x`, recomputed.
    pub rel_residual: f64,
    pub flag: SolveFlag,
}

impl SolveOutcome {
    pub fn converged(&self) -> bool {
        self.flag == SolveFlag::Converged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicgstabOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for BicgstabOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 500 }
    }
}

const BREAKDOWN: f64 = 1e-30;
/// Iterations with a bit-identical true residual before giving up.
const STAGNATION_WINDOW: usize = 5;

/// Solves `A M z = b` and returns `x = M z`.
///
/// `op(x, y)` must write `A x` into `y`; `precond`, if given, writes `M x`.
/// Convergence is judged on the true residual `b - A x`. The iterate with
/// the smallest true residual is returned on breakdown or when the
/// iteration cap is hit.
pub fn bicgstab<F, P>(
    op: F,
    precond: Option<P>,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &BicgstabOptions,
) -> Result<SolveOutcome>
where
    F: Fn(&[f64], &mut [f64]),
    P: Fn(&[f64], &mut [f64]),
{
    if !(opts.tol > 0.0) {
        return Err(SaiError::Domain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let n = b.len();
    if let Some(x0) = x0 {
        if x0.len() != n {
            return Err(SaiError::DimensionMismatch { expected: n, got: x0.len() });
        }
    }
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok(SolveOutcome { x: vec![0.0; n], iterations: 0, rel_residual: 0.0, flag: SolveFlag::Converged });
    }
    let apply_m = |src: &[f64], dst: &mut [f64]| match &precond {
        Some(m) => m(src, dst),
        None => dst.copy_from_slice(src),
    };
    let true_residual = |x: &[f64], tmp: &mut [f64]| -> f64 {
        op(x, tmp);
        let s: f64 = b.iter().zip(tmp.iter()).map(|(bi, ai)| (bi - ai) * (bi - ai)).sum();
        s.sqrt() / bnorm
    };

    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    let mut tmp = vec![0.0; n];
    let mut r = vec![0.0; n];
    op(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut rel = norm2(&r) / bnorm;
    if rel <= opts.tol {
        return Ok(SolveOutcome { x, iterations: 0, rel_residual: rel, flag: SolveFlag::Converged });
    }
    let r_hat = r.clone();
    let mut best = (x.clone(), rel, 0usize);
    let mut p = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut p_hat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut s_hat = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut h = vec![0.0; n];
    let (mut rho, mut alpha, mut omega) = (1.0f64, 1.0f64, 1.0f64);
    let scale = BREAKDOWN * bnorm * bnorm;
    let mut flat = 0usize;

    let finish = |best: (Vec<f64>, f64, usize), iterations: usize, flag: SolveFlag| SolveOutcome {
        x: best.0,
        iterations,
        rel_residual: best.1,
        flag,
    };

    for it in 1..=opts.max_iter {
        let rho_new = dot(&r_hat, &r);
        if !rho_new.is_finite() || rho_new.abs() < scale {
            return Ok(finish(best, it - 1, SolveFlag::Breakdown));
        }
        if it == 1 {
            p.copy_from_slice(&r);
        } else {
            let beta = (rho_new / rho) * (alpha / omega);
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
        }
        rho = rho_new;
        apply_m(&p, &mut p_hat);
        op(&p_hat, &mut v);
        let rv = dot(&r_hat, &v);
        if !rv.is_finite() || rv.abs() < scale {
            return Ok(finish(best, it - 1, SolveFlag::Breakdown));
        }
        alpha = rho / rv;
        for i in 0..n {
            h[i] = x[i] + alpha * p_hat[i];
            s[i] = r[i] - alpha * v[i];
        }
        // half step: only pay for a true residual when the recursive one is small
        if norm2(&s) / bnorm <= opts.tol {
            let rel_h = true_residual(&h, &mut tmp);
            if rel_h < best.1 {
                best = (h.clone(), rel_h, it);
            }
            if rel_h <= opts.tol {
                return Ok(finish(best, it, SolveFlag::Converged));
            }
        }
        apply_m(&s, &mut s_hat);
        op(&s_hat, &mut t);
        let tt = dot(&t, &t);
        let ts = dot(&t, &s);
        if !tt.is_finite() || tt < scale || ts.abs() < scale * f64::EPSILON {
            let rel_h = true_residual(&h, &mut tmp);
            if rel_h.is_finite() && rel_h < best.1 {
                best = (h.clone(), rel_h, it);
            }
            let flag = if rel_h <= opts.tol { SolveFlag::Converged } else { SolveFlag::Breakdown };
            return Ok(finish(best, it, flag));
        }
        omega = ts / tt;
        for i in 0..n {
            x[i] = h[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        let rel_new = true_residual(&x, &mut tmp);
        if !rel_new.is_finite() {
            return Ok(finish(best, it, SolveFlag::Breakdown));
        }
        if rel_new < best.1 {
            best = (x.clone(), rel_new, it);
        }
        if rel_new <= opts.tol {
            return Ok(finish(best, it, SolveFlag::Converged));
        }
        flat = if rel_new == rel { flat + 1 } else { 0 };
        rel = rel_new;
        if flat >= STAGNATION_WINDOW {
            return Ok(finish(best, it, SolveFlag::Stagnation));
        }
    }
    Ok(finish(best, opts.max_iter, SolveFlag::MaxIter))
}

/// [`bicgstab`] with sparse `A` and optional sparse right preconditioner.
pub fn bicgstab_csc(
    a: &CscMatrix,
    m: Option<&CscMatrix>,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &BicgstabOptions,
) -> Result<SolveOutcome> {
    if !a.is_square() || a.n_rows() != b.len() {
        return Err(SaiError::DimensionMismatch { expected: a.n_rows(), got: b.len() });
    }
    if let Some(m) = m {
        if m.n_rows() != a.n_rows() || m.n_cols() != a.n_cols() {
            return Err(SaiError::DimensionMismatch { expected: a.n_rows(), got: m.n_rows() });
        }
    }
    let op = |x: &[f64], y: &mut [f64]| a.matvec_into(x, y).expect("dimensions checked");
    let pc = m.map(|m| move |x: &[f64], y: &mut [f64]| m.matvec_into(x, y).expect("dimensions checked"));
    bicgstab(op, pc, b, x0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_pc() -> Option<fn(&[f64], &mut [f64])> {
        None
    }

    #[test]
    fn identity_one_iteration() {
        let a = CscMatrix::identity(7);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 2.5).collect();
        let out = bicgstab_csc(&a, None, &b, None, &BicgstabOptions::default()).unwrap();
        assert!(out.converged());
        assert!(out.iterations <= 1);
        assert_eq!(out.x, b);
    }

    #[test]
    fn diagonal_closed_form() {
        let a = CscMatrix::from_triplets(10, 10, (0..10).map(|i| (i, i, (i + 1) as f64))).unwrap();
        let b = vec![1.0; 10];
        let out = bicgstab_csc(&a, None, &b, None, &BicgstabOptions { tol: 1e-12, max_iter: 100 }).unwrap();
        assert!(out.converged());
        for i in 0..10 {
            assert!((out.x[i] - 1.0 / (i + 1) as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs() {
        let a = CscMatrix::identity(3);
        let out = bicgstab_csc(&a, None, &[0.0; 3], None, &BicgstabOptions::default()).unwrap();
        assert_eq!((out.x, out.iterations, out.flag), (vec![0.0; 3], 0, SolveFlag::Converged));
    }

    #[test]
    fn exact_inverse_preconditioner() {
        let a = crate::splitting::generate_test_matrix(crate::splitting::MatrixKind::DominantRow, 25, 0.2, 1, 5).unwrap();
        let m = CscMatrix::from_dense(&a.to_dense().try_inverse().unwrap());
        let b = vec![1.0; 25];
        let out = bicgstab_csc(&a, Some(&m), &b, None, &BicgstabOptions { tol: 1e-10, max_iter: 50 }).unwrap();
        assert!(out.converged());
        assert!(out.iterations <= 2);
    }

    #[test]
    fn reported_residual_is_true_residual() {
        let a = crate::splitting::generate_test_matrix(crate::splitting::MatrixKind::DominantCol, 40, 0.1, 2, 8).unwrap();
        let b: Vec<f64> = (0..40).map(|i| (i % 7) as f64 - 3.0).collect();
        for max_iter in [1, 3, 200] {
            let out = bicgstab_csc(&a, None, &b, None, &BicgstabOptions { tol: 1e-12, max_iter }).unwrap();
            let ax = a.matvec(&out.x).unwrap();
            let r: Vec<f64> = b.iter().zip(&ax).map(|(x, y)| x - y).collect();
            let rel = norm2(&r) / norm2(&b);
            assert!((rel - out.rel_residual).abs() <= 1e-10 * rel.max(1e-300));
        }
    }

    #[test]
    fn max_iter_flag() {
        let a = crate::splitting::generate_test_matrix(crate::splitting::MatrixKind::DominantRow, 30, 0.3, 0, 2).unwrap();
        let out = bicgstab_csc(&a, None, &vec![1.0; 30], None, &BicgstabOptions { tol: 1e-15, max_iter: 1 }).unwrap();
        assert_eq!(out.flag, SolveFlag::MaxIter);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn singular_operator_breaks_down() {
        let op = |_: &[f64], y: &mut [f64]| y.fill(0.0);
        let out = bicgstab(op, no_pc(), &[1.0, 1.0], None, &BicgstabOptions::default()).unwrap();
        assert_eq!(out.flag, SolveFlag::Breakdown);
        assert_eq!(out.x, vec![0.0, 0.0]);
    }

    #[test]
    fn nan_is_breakdown() {
        let op = |x: &[f64], y: &mut [f64]| {
            for (yi, xi) in y.iter_mut().zip(x) {
                *yi = xi * f64::NAN;
            }
        };
        let out = bicgstab(op, no_pc(), &[1.0, 2.0], None, &BicgstabOptions::default()).unwrap();
        assert_eq!(out.flag, SolveFlag::Breakdown);
    }

    #[test]
    fn rejects_bad_tolerance() {
        let a = CscMatrix::identity(2);
        assert!(bicgstab_csc(&a, None, &[1.0, 1.0], None, &BicgstabOptions { tol: 0.0, max_iter: 5 }).is_err());
    }
}
