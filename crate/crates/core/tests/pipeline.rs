use sai_core::driver::{solve_irregular, solve_standard, DriverConfig, Method};
use sai_core::krylov::{bicgstab_csc, BicgstabOptions};
use sai_core::psai::{psai, PsaiConfig};
use sai_core::spai::{spai, SpaiConfig};
use sai_core::sparse::{column_stats, CscMatrix};
use sai_core::splitting::{
    classify, condition_number_1, dominance_margins, generate_test_matrix, split, MatrixKind, SplitOptions,
};

fn inverse_inf_norm(a: &CscMatrix) -> f64 {
    let inv = a.to_dense().try_inverse().unwrap();
    (0..inv.nrows()).map(|i| inv.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

#[test]
fn margin_bounds_hold_on_dominant_instances() {
    for seed in 0..10 {
        let a = generate_test_matrix(MatrixKind::DominantRow, 20, 0.15, 1, seed).unwrap();
        let sys = split(&a, &SplitOptions { factor: 2.0, ..SplitOptions::default() }).unwrap();
        let m = dominance_margins(&a, &sys.a_tilde).unwrap();
        assert!(m.bound_a >= inverse_inf_norm(&a));
        assert!(m.bound_a_tilde >= inverse_inf_norm(&sys.a_tilde));
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min(&m.beta_tilde) >= min(&m.beta));
    }
}

#[test]
fn thirty_by_thirty_spai_converges() {
    let a = generate_test_matrix(MatrixKind::DominantRow, 30, 0.2, 0, 77).unwrap();
    let (m, rep) = spai(&a, &SpaiConfig::default()).unwrap();
    assert_eq!(rep.n_c, 0);
    for k in 0..30 {
        let mut r = a.matvec(&m.column(k).to_dense()).unwrap();
        r[k] -= 1.0;
        assert!(r.iter().map(|v| v * v).sum::<f64>().sqrt() <= 0.4);
    }
}

#[test]
fn psai_preconditioner_cuts_iterations() {
    let a = generate_test_matrix(MatrixKind::IrreduciblyDominant, 50, 0.08, 0, 5).unwrap();
    let b = a.matvec(&[1.0; 50]).unwrap();
    let (m, _) = psai(&a, &PsaiConfig::default()).unwrap();
    let opts = BicgstabOptions { tol: 1e-8, max_iter: 500 };
    let plain = bicgstab_csc(&a, None, &b, None, &opts).unwrap();
    let pre = bicgstab_csc(&a, Some(&m), &b, None, &opts).unwrap();
    assert!(pre.converged());
    assert!(pre.iterations < plain.iterations, "{} vs {}", pre.iterations, plain.iterations);
}

#[test]
fn dense_column_inflates_spai_candidates() {
    let a = generate_test_matrix(MatrixKind::IrreduciblyDominant, 60, 0.04, 1, 21).unwrap();
    let stats = column_stats(&a, 10.0).unwrap();
    assert_eq!(stats.s, 1);
    let sys = split(&a, &SplitOptions::default()).unwrap();
    let cfg = SpaiConfig::default();
    let (_, on_a) = spai(&a, &cfg).unwrap();
    let (_, on_t) = spai(&sys.a_tilde, &cfg).unwrap();
    assert!(on_a.max_candidates > on_t.max_candidates);
}

#[test]
fn spai_and_psai_methods_both_solve() {
    let a = generate_test_matrix(MatrixKind::MMatrix, 120, 0.01, 2, 4).unwrap();
    let b = a.matvec(&vec![1.0; 120]).unwrap();
    for method in [Method::Spai(SpaiConfig::default()), Method::Psai(PsaiConfig::default())] {
        let cfg = DriverConfig { method, ..DriverConfig::default() };
        let split_rep = solve_irregular(&a, &b, &cfg).unwrap();
        let std_rep = solve_standard(&a, &b, &cfg).unwrap();
        assert!(split_rep.s > 0);
        assert!(split_rep.a < 1.0 && std_rep.a < 1.0);
        // the split variant never preconditions the dense column
        assert!(split_rep.preconditioner.nnz_m <= std_rep.preconditioner.nnz_m);
    }
}

#[test]
fn report_is_deterministic() {
    let a = generate_test_matrix(MatrixKind::DominantCol, 80, 0.02, 1, 9).unwrap();
    let b = a.matvec(&vec![1.0; 80]).unwrap();
    let mut r1 = solve_irregular(&a, &b, &DriverConfig::default()).unwrap();
    let mut r2 = solve_irregular(&a, &b, &DriverConfig::default()).unwrap();
    r1.timings = Default::default();
    r2.timings = Default::default();
    assert_eq!(serde_json::to_string(&r1).unwrap(), serde_json::to_string(&r2).unwrap());
}

#[test]
fn split_keeps_classes_and_conditioning_is_reported() {
    let a = generate_test_matrix(MatrixKind::MMatrix, 40, 0.05, 1, 2).unwrap();
    let sys = split(&a, &SplitOptions { factor: 3.0, ..SplitOptions::default() }).unwrap();
    assert!(classify(&sys.a_tilde).unwrap().m_matrix);
    assert!(condition_number_1(&a).unwrap() >= 1.0);
    assert!(condition_number_1(&sys.a_tilde).unwrap() >= 1.0);
}
