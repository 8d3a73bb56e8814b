mod common;

use homog_core::sparse_la::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random sparse matrix with a few entries per row; `shift` is added to the diagonal.
fn random_sparse(n: usize, per_row: usize, shift: f64, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let mut t = Vec::new();
    for i in 0..n {
        t.push((i, i, shift));
        for _ in 0..per_row {
            let j = rng.gen_range(0..n);
            t.push((i, j, rng.gen_range(-1.0..1.0)));
        }
    }
    CsrMatrix::from_triplets(n, &t)
}

/// `M^T M + I`.
fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
    let m = random_sparse(n, 3, 0.0, rng).to_dense();
    let mut t = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let v: f64 = (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            if v != 0.0 {
                t.push((i, j, v));
            }
        }
    }
    CsrMatrix::from_triplets(n, &t)
}

fn rhs(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn direct_matches_dense_elimination(seed in any::<u64>(), n in 2usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_sparse(n, 3, 4.0, &mut rng);
        let b = rhs(n, &mut rng);
        let want = common::dense_solve(a.to_dense(), b.clone());
        let (x, rep) = solve_direct(&a, &b).unwrap();
        prop_assert!(common::max_abs_diff(&x, &want) <= 1e-10);
        prop_assert!(rep.relative_residual <= 1e-12);
    }

    #[test]
    fn banded_lu_reconstructs_the_matrix(seed in any::<u64>(), n in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_sparse(n, 2, 0.5, &mut rng);
        let lu = match BandedLu::factor(&a) {
            Ok(lu) => lu,
            Err(SolverError::SingularMatrix { .. }) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let (l, u, perm) = lu.dense_factors();
        let d = a.to_dense();
        let scale = a.max_abs();
        for i in 0..n {
            for j in 0..n {
                let lu_ij: f64 = (0..n).map(|k| l[i][k] * u[k][j]).sum();
                prop_assert!((lu_ij - d[perm[i]][j]).abs() <= 1e-10 * scale, "({i},{j})");
            }
        }
    }

    #[test]
    fn cg_error_decreases_in_energy_norm(seed in any::<u64>(), n in 5usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_spd(n, &mut rng);
        let b = rhs(n, &mut rng);
        let exact = common::dense_solve(a.to_dense(), b.clone());
        let mut errs = Vec::new();
        let (x, _) = solve_spd_observed(&a, &b, 1e-12, 10 * n, |_, x| {
            let e: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
            errs.push(dot(&e, &a.matvec(&e)).sqrt());
        })
        .unwrap();
        prop_assert!(common::max_abs_diff(&x, &exact) <= 1e-8);
        let e0 = dot(&exact, &a.matvec(&exact)).sqrt();
        let mut last = e0;
        for e in errs {
            prop_assert!(e <= last * (1.0 + 1e-10) + 1e-14 * e0);
            last = e;
        }
    }

    #[test]
    fn gmres_matches_direct(seed in any::<u64>(), n in 5usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_sparse(n, 4, 3.0, &mut rng);
        let b = rhs(n, &mut rng);
        let (x, rep) = solve_general(&a, &b, 1e-12, 30, 500).unwrap();
        let (y, _) = solve_direct(&a, &b).unwrap();
        prop_assert!(rep.relative_residual <= 1e-12);
        prop_assert!(common::max_abs_diff(&x, &y) <= 1e-9 * (1.0 + norm(&y)));
    }

    #[test]
    fn refinement_against_a_nearby_factor(seed in any::<u64>(), n in 5usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_sparse(n, 3, 6.0, &mut rng);
        let near = DirectFactor::new(&a).unwrap();
        let t: Vec<_> = a.triplets().into_iter().map(|(i, j, v)| (i, j, v * (1.0 + 0.01 * ((i + 2 * j) % 3) as f64))).collect();
        let perturbed = CsrMatrix::from_triplets(n, &t);
        let b = rhs(n, &mut rng);
        let (x, rep) = solve_refined(&perturbed, &near, &b, 1e-13, 50).unwrap();
        prop_assert!(rep.relative_residual <= 1e-13);
        let (y, _) = solve_direct(&perturbed, &b).unwrap();
        prop_assert!(common::max_abs_diff(&x, &y) <= 1e-10 * (1.0 + norm(&y)));
    }

    #[test]
    fn transpose_and_add_are_consistent(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_sparse(n, 3, 0.0, &mut rng);
        let s = a.add(0.5, &a.transpose(), -0.5);
        let d = a.to_dense();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(s.get(i, j), 0.5 * d[i][j] - 0.5 * d[j][i]);
                prop_assert_eq!(s.get(i, j), -s.get(j, i));
            }
        }
    }
}

#[test]
fn refinement_refuses_a_distant_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_sparse(30, 3, 6.0, &mut rng);
    let far = DirectFactor::new(&CsrMatrix::identity(30)).unwrap();
    let b = rhs(30, &mut rng);
    assert!(matches!(solve_refined(&a, &far, &b, 1e-12, 50), Err(SolverError::NotConverged { .. })));
    let small = DirectFactor::new(&CsrMatrix::identity(3)).unwrap();
    assert!(matches!(solve_refined(&a, &small, &b, 1e-12, 50), Err(SolverError::Dimension(_))));
}

#[test]
fn large_band_uses_the_sparse_factor_and_agrees() {
    // A 2D five-point Laplacian plus random long-range couplings keeps the band wide.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let k = 120;
    let n = k * k;
    let mut t = Vec::new();
    for j in 0..k {
        for i in 0..k {
            let p = j * k + i;
            t.push((p, p, 4.5));
            for (di, dj) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a >= 0 && b >= 0 && a < k as i64 && b < k as i64 {
                    t.push((p, (b as usize) * k + a as usize, -1.0));
                }
            }
        }
    }
    for _ in 0..n / 4 {
        let (p, q) = (rng.gen_range(0..n), rng.gen_range(0..n));
        t.push((p, q, 0.1));
        t.push((q, p, -0.1));
    }
    let a = CsrMatrix::from_triplets(n, &t);
    let f = DirectFactor::new(&a).unwrap();
    assert!(matches!(f, DirectFactor::Sparse { .. }));
    let b = rhs(n, &mut rng);
    let x = f.solve(&b).unwrap();
    let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
    assert!(norm(&r) <= 1e-12 * norm(&b));
}

#[test]
fn solves_are_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_sparse(200, 4, 5.0, &mut rng);
    let s = random_spd(60, &mut rng);
    let b = rhs(200, &mut rng);
    let c = rhs(60, &mut rng);
    let run = || {
        (
            solve_direct(&a, &b).unwrap().0,
            solve_general(&a, &b, 1e-12, 20, 400).unwrap().0,
            solve_spd(&s, &c, 1e-12, 600).unwrap().0,
        )
    };
    assert_eq!(run(), run());
}

#[test]
fn rcm_is_a_permutation_and_narrows_the_band() {
    let mut t = Vec::new();
    let n = 50;
    // A path graph numbered in a scattered order.
    let order: Vec<usize> = (0..n).map(|i| (i * 17) % n).collect();
    for w in order.windows(2) {
        t.push((w[0], w[1], -1.0));
        t.push((w[1], w[0], -1.0));
    }
    for i in 0..n {
        t.push((i, i, 2.0));
    }
    let a = CsrMatrix::from_triplets(n, &t);
    let perm = rcm_ordering(&a);
    let mut seen = perm.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..n).collect::<Vec<_>>());
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let pt: Vec<_> = a.triplets().into_iter().map(|(i, j, v)| (inv[i], inv[j], v)).collect();
    let (kl, ku) = BandedLu::bandwidths(&CsrMatrix::from_triplets(n, &pt));
    assert!(kl <= 1 && ku <= 1, "{kl} {ku}");
    assert!(BandedLu::bandwidths(&a).0 > 10);
}

#[test]
fn errors_are_typed() {
    let a = CsrMatrix::identity(3);
    assert!(matches!(solve_spd(&a, &[1.0], 1e-10, 10), Err(SolverError::Dimension(_))));
    let lap = CsrMatrix::from_triplets(3, &[(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 2.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 2.0)]);
    match solve_spd(&lap, &[1.0, 0.0, 1.0], 1e-14, 1) {
        Err(SolverError::NotConverged { x, report }) => {
            assert_eq!(x.len(), 3);
            assert_eq!(report.iterations, 1);
        }
        other => panic!("{other:?}"),
    }
    let empty_row = CsrMatrix::from_triplets(2, &[(0, 0, 1.0)]);
    assert!(matches!(DirectFactor::new(&empty_row), Err(SolverError::SingularMatrix { .. })));
}
