use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sai_core::driver::{assemble_solution, residual_composition};
use sai_core::lstsq::{ColumnPattern, LsOptions, LsWorkspace};
use sai_core::mm::{read_matrix_market_str, write_matrix_market};
use sai_core::sparse::{column_stats, CscMatrix};
use sai_core::splitting::{generate_test_matrix, row_margins, split, MatrixKind, SplitOptions, SparsifyStrategy};

fn triplets(max_n: usize) -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, f64)>)> {
    (1..max_n, 1..max_n).prop_flat_map(|(r, c)| {
        let entry = (0..r, 0..c, -10.0f64..10.0);
        (Just(r), Just(c), prop::collection::vec(entry, 0..(r * c).min(40) + 1))
    })
}

fn square_with_diag(max_n: usize) -> impl Strategy<Value = CscMatrix> {
    (2..max_n).prop_flat_map(|n| {
        let off = prop::collection::vec((0..n, 0..n, -4.0f64..4.0), 0..n * 3);
        let dense_cols = prop::collection::vec(0..n, 0..3);
        (Just(n), off, dense_cols).prop_map(|(n, off, dense)| {
            let mut t: Vec<_> = (0..n).map(|i| (i, i, 5.0 + i as f64)).collect();
            t.extend(off.into_iter().filter(|(i, j, _)| i != j));
            for j in dense {
                t.extend((0..n).filter(|&i| i != j).map(|i| (i, j, 0.25 + i as f64 / 8.0)));
            }
            CscMatrix::from_triplets(n, n, t).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matvec_matches_dense((r, c, t) in triplets(12), seed in 0u64..1000) {
        let a = CscMatrix::from_triplets(r, c, t).unwrap();
        let x: Vec<f64> = (0..c).map(|i| ((i as u64 * 31 + seed) % 17) as f64 - 8.0).collect();
        let y = a.matvec(&x).unwrap();
        let yd = a.to_dense() * DVector::from_vec(x);
        for i in 0..r {
            prop_assert!((y[i] - yd[i]).abs() <= 1e-12 * (1.0 + yd[i].abs()));
        }
    }

    #[test]
    fn transpose_is_involution((r, c, t) in triplets(12)) {
        let a = CscMatrix::from_triplets(r, c, t).unwrap();
        prop_assert_eq!(a.transpose().transpose(), a.clone());
        prop_assert_eq!(a.transpose().to_dense(), a.to_dense().transpose());
    }

    #[test]
    fn matrix_market_round_trip((r, c, t) in triplets(12)) {
        let a = CscMatrix::from_triplets(r, c, t).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&a, &mut buf).unwrap();
        let back = read_matrix_market_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn least_squares_matches_svd(a in square_with_diag(10), k_seed in 0usize..100, extra in prop::collection::vec(0usize..100, 0..5)) {
        let n = a.n_cols();
        let k = k_seed % n;
        let mut pattern: Vec<usize> = extra.iter().map(|e| e % n).collect();
        pattern.push(k);
        let pattern = ColumnPattern::new(pattern);
        let ws = LsWorkspace::new(&a, k, &pattern, LsOptions::default()).unwrap();
        let d = a.to_dense();
        let cols = pattern.indices();
        let sub = DMatrix::from_fn(n, cols.len(), |i, c| d[(i, cols[c])]);
        let mut ek = DVector::zeros(n);
        ek[k] = 1.0;
        let coef = sub.clone().svd(true, true).solve(&ek, 1e-13).unwrap();
        let oracle = (&sub * coef - &ek).norm();
        prop_assert!((ws.residual_norm() - oracle).abs() <= 1e-10);
        let m = ws.solution().to_dense();
        let mut r = a.matvec(&m).unwrap();
        r[k] -= 1.0;
        let rn: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((rn - ws.residual_norm()).abs() <= 1e-10);
    }

    #[test]
    fn split_reconstructs(a in square_with_diag(24), factor in 1.5f64..6.0, largest in any::<bool>()) {
        let strategy = if largest { SparsifyStrategy::LargestMagnitude } else { SparsifyStrategy::NearestDiagonal };
        let sys = split(&a, &SplitOptions { factor, strategy, p_kept: None }).unwrap();
        prop_assert_eq!(sys.reconstruct().unwrap(), a.clone());
        prop_assert!(sys.a_tilde.norm1() <= a.norm1());
        prop_assert!(sys.a_tilde.norm_inf() <= a.norm_inf());
        let stats = column_stats(&a, factor).unwrap();
        for j in 0..a.n_cols() {
            if let Some(pos) = sys.irregular_cols.iter().position(|&c| c == j) {
                prop_assert_eq!(sys.a_tilde.col_nnz(j), sys.p_kept.min(stats.per_col_nnz[j]));
                prop_assert_eq!(sys.u.col_nnz(pos), stats.per_col_nnz[j] - sys.a_tilde.col_nnz(j));
                prop_assert!(sys.a_tilde.get(j, j) != 0.0);
            } else {
                prop_assert_eq!(sys.a_tilde.col(j), a.col(j));
            }
        }
        let beta = row_margins(&a);
        let beta_t = row_margins(&sys.a_tilde);
        for i in 0..a.n_rows() {
            prop_assert!(beta_t[i] >= beta[i] - 1e-12);
        }
    }

    #[test]
    fn residual_composition_identity(seed in 0u64..500, n in 8usize..40, s in 1usize..4) {
        let a = generate_test_matrix(MatrixKind::DominantRow, n, 0.1, s.min(n), seed).unwrap();
        let sys = split(&a, &SplitOptions { factor: 2.0, ..SplitOptions::default() }).unwrap();
        prop_assume!(sys.s() > 0);
        let s = sys.s();
        // arbitrary y^, W^: the identity does not need converged iterates
        let y: Vec<f64> = (0..n).map(|i| ((i as u64 * 7 + seed) % 11) as f64 / 5.0 - 1.0).collect();
        let w = DMatrix::from_fn(n, s, |i, j| (((i * 3 + j * 5) as u64 + seed) % 13) as f64 / 40.0 - 0.15);
        let Ok(asm) = assemble_solution(&y, &w, &sys.irregular_cols) else { return Ok(()); };
        let b: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
        let at = &sys.a_tilde;
        let ry: Vec<f64> = b.iter().zip(at.matvec(&y).unwrap()).map(|(x, z)| x - z).collect();
        let u = sys.u.to_dense();
        let aw = at.to_dense() * &w;
        let rw = &u - aw;
        let formula = residual_composition(&ry, &rw, &asm.z);
        let ax = a.matvec(&asm.x_hat).unwrap();
        let scale = 1.0 + asm.z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..n {
            prop_assert!(((b[i] - ax[i]) - formula[i]).abs() <= 1e-10 * scale * (1.0 + b[i].abs()));
        }
    }
}
