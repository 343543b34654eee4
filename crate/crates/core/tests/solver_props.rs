mod common;

use common::{orders, random_instance, Instance};
use lowrank::oracle::{eckart_young_reference, gaussian_matrix, seeded_rng};
use lowrank::solver::predicted_error_expanded;
use lowrank::{
    build_z, numerical_rank, projector_topk, schatten_norm, solve_lowrank, solve_weighted,
    DenseMatrix, Error, SchattenP, ToleranceConfig,
};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = Instance> {
    (any::<u64>(), any::<bool>()).prop_map(|(seed, deficient)| {
        let mut rng = seeded_rng(seed);
        random_instance(&mut rng, deficient)
    })
}

fn tol() -> ToleranceConfig {
    ToleranceConfig::default()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn error_does_not_increase_with_k(inst in instance()) {
        let n = inst.y.nrows();
        for p in orders() {
            let mut last = f64::INFINITY;
            for k in 0..=n {
                let e = solve_lowrank(&inst.x, &inst.y, k, p, &tol()).unwrap().achieved_error;
                prop_assert!(e <= last * (1.0 + 1e-12) + 1e-13, "p={p} k={k}: {e} > {last}");
                last = e;
            }
        }
    }

    #[test]
    fn projector_is_an_orthogonal_projection(inst in instance()) {
        let z = build_z(&inst.x, &inst.y, &tol()).unwrap();
        let q = projector_topk(&z, inst.k, &tol()).unwrap();
        let qtq = q.transpose() * &q;
        prop_assert!((qtq - DenseMatrix::identity(q.ncols(), q.ncols())).norm() <= 1e-12);
        let pk = &q * q.transpose();
        let n = z.nrows();
        prop_assert!((&pk * &pk - &pk).norm() <= 1e-12 * (1.0 + n as f64));
        prop_assert!((pk.transpose() - &pk).norm() <= 1e-14 * (1.0 + n as f64));
        let trace = pk.trace();
        let expected = inst.k.min(numerical_rank(&z, &tol()).unwrap()) as f64;
        prop_assert!((trace - expected).abs() <= 1e-10);
    }

    #[test]
    fn solution_rank_is_bounded(inst in instance()) {
        let sol = solve_lowrank(&inst.x, &inst.y, inst.k, SchattenP::FROBENIUS, &tol()).unwrap();
        let loose = ToleranceConfig { rank_rtol: 1e-9, ..tol() };
        prop_assert!(numerical_rank(&sol.m_star, &loose).unwrap() <= inst.k);
        prop_assert!(sol.k_effective() <= inst.k);
    }

    #[test]
    fn frobenius_prediction_is_exact(inst in instance()) {
        let sol = solve_lowrank(&inst.x, &inst.y, inst.k, SchattenP::FROBENIUS, &tol()).unwrap();
        let gap = (sol.achieved_error - sol.predicted_error).abs();
        prop_assert!(gap <= 1e-10 * (1.0 + sol.achieved_error));
        let expanded = predicted_error_expanded(&inst.x, &inst.y, inst.k, SchattenP::FROBENIUS, &tol()).unwrap();
        prop_assert!((expanded - sol.predicted_error).abs() <= 1e-10 * (1.0 + expanded));
    }

    #[test]
    fn scaling_y_scales_the_solution(inst in instance(), c in 0.1f64..10.0) {
        let a = solve_lowrank(&inst.x, &inst.y, inst.k, SchattenP::SPECTRAL, &tol()).unwrap();
        let b = solve_lowrank(&inst.x, &(&inst.y * c), inst.k, SchattenP::SPECTRAL, &tol()).unwrap();
        prop_assert!((&a.m_star * c - &b.m_star).norm() <= 1e-9 * c * (1.0 + a.m_star.norm()));
        prop_assert!((a.achieved_error * c - b.achieved_error).abs() <= 1e-10 * c * (1.0 + a.achieved_error));
    }

    #[test]
    fn weight_scaling_leaves_the_operator_unchanged(seed in any::<u64>(), c in 0.1f64..10.0) {
        let mut rng = seeded_rng(seed);
        let inst = random_instance(&mut rng, false);
        let n = inst.y.nrows();
        let a = gaussian_matrix(n, n, &mut rng);
        let w = &a * a.transpose() + DenseMatrix::identity(n, n) * 0.5;
        let p = SchattenP::FROBENIUS;
        let s1 = solve_weighted(&inst.x, &inst.y, &w, inst.k, p, &tol()).unwrap();
        let s2 = solve_weighted(&inst.x, &inst.y, &(&w * c), inst.k, p, &tol()).unwrap();
        prop_assert!((&s1.m_star - &s2.m_star).norm() <= 1e-8 * (1.0 + s1.m_star.norm()));
        let ratio = s2.achieved_error / s1.achieved_error.max(1e-300);
        if s1.achieved_error > 1e-10 * inst.y.norm() {
            prop_assert!((ratio - c.sqrt()).abs() <= 1e-8 * c.sqrt());
        }
    }
}

#[test]
fn identity_x_recovers_truncated_svd_for_every_k() {
    let mut rng = seeded_rng(7);
    let y = gaussian_matrix(6, 6, &mut rng);
    let x = DenseMatrix::identity(6, 6);
    for k in 0..=6 {
        let sol = solve_lowrank(&x, &y, k, SchattenP::TRACE, &tol()).unwrap();
        let reference = eckart_young_reference(&y, k).unwrap();
        assert!((&sol.m_star - &reference.matrix).norm() <= 1e-10 * y.norm());
        let tail = reference.tail_error(SchattenP::TRACE);
        assert!((sol.achieved_error - tail).abs() <= 1e-10 * (1.0 + tail));
    }
}

#[test]
fn k_beyond_rank_of_z_pays_only_the_second_term() {
    let mut rng = seeded_rng(3);
    let x = lowrank::oracle::gaussian_low_rank(5, 7, 2, &mut rng);
    let y = gaussian_matrix(5, 7, &mut rng);
    let sol = solve_lowrank(&x, &y, 5, SchattenP::FROBENIUS, &tol()).unwrap();
    assert_eq!(sol.k_effective(), 2);
    let z = build_z(&x, &y, &tol()).unwrap();
    let second = schatten_norm(&(&y - &z), SchattenP::FROBENIUS).unwrap();
    assert!((sol.predicted_error - second).abs() <= 1e-10 * (1.0 + second));
    assert_eq!(sol.spectral_gap, None);
}

#[test]
fn zero_x_gives_zero_operator() {
    let x = DenseMatrix::zeros(3, 4);
    let y = DenseMatrix::from_element(3, 4, 1.0);
    let sol = solve_lowrank(&x, &y, 2, SchattenP::SPECTRAL, &tol()).unwrap();
    assert_eq!(sol.rank_x, 0);
    assert_eq!(sol.m_star, DenseMatrix::zeros(3, 3));
    assert!((sol.achieved_error - y.norm()).abs() <= 1e-12);
}

#[test]
fn shape_mismatch_is_reported() {
    let x = DenseMatrix::zeros(3, 4);
    let y = DenseMatrix::zeros(3, 5);
    let err = solve_lowrank(&x, &y, 1, SchattenP::FROBENIUS, &tol()).unwrap_err();
    assert!(matches!(err, Error::DimensionMismatch(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn weight_must_be_psd() {
    let x = DenseMatrix::identity(2, 2);
    let y = DenseMatrix::identity(2, 2);
    let k = DenseMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let err = solve_weighted(&x, &y, &k, 1, SchattenP::FROBENIUS, &tol()).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}
