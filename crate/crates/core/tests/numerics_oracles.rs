use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use irm_ite_core::numerics::{
    cholesky, qr_orthonormal, random_orthonormal, sample_normal, solve_spd, Matrix, Rng,
};
use irm_ite_core::Error;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn gaussian(rng: &mut Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_vec(r, c, sample_normal(rng, r * c)).unwrap()
}

fn spd(rng: &mut Rng, d: usize) -> Matrix {
    let b = gaussian(rng, d, d);
    let mut a = b.matmul(&b.transpose()).unwrap();
    for i in 0..d {
        a[(i, i)] += 0.1;
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qr_factor_is_orthonormal_with_unit_determinant(seed in any::<u64>(), d in 1usize..12) {
        let g = gaussian(&mut Rng::new(seed), d, d);
        let q = qr_orthonormal(&g).unwrap();
        let qtq = q.transpose().matmul(&q).unwrap();
        prop_assert!(qtq.max_abs_diff(&Matrix::identity(d)) < 1e-12);
        prop_assert!((to_na(&q).determinant().abs() - 1.0).abs() < 1e-10);
        // R = QᵀG is upper triangular with a non-negative diagonal.
        let r = q.transpose().matmul(&g).unwrap();
        for i in 0..d {
            prop_assert!(r[(i, i)] >= -1e-12);
            for j in 0..i {
                prop_assert!(r[(i, j)].abs() < 1e-10);
            }
        }
    }

    #[test]
    fn random_orthonormal_is_orthonormal(seed in any::<u64>(), d in 1usize..20) {
        let q = random_orthonormal(&mut Rng::new(seed), d).unwrap();
        prop_assert!(q.matmul(&q.transpose()).unwrap().max_abs_diff(&Matrix::identity(d)) < 1e-12);
    }

    #[test]
    fn cholesky_matches_nalgebra(seed in any::<u64>(), d in 1usize..15) {
        let a = spd(&mut Rng::new(seed), d);
        let l = cholesky(&a).unwrap();
        let oracle = to_na(&a).cholesky().unwrap().l();
        let scale = a.as_slice().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!((to_na(&l) - oracle).amax() < 1e-10 * scale);
        prop_assert!(l.matmul(&l.transpose()).unwrap().max_abs_diff(&a) < 1e-10 * scale);
    }

    #[test]
    fn solve_spd_agrees_with_nalgebra(seed in any::<u64>(), d in 1usize..15) {
        let mut rng = Rng::new(seed);
        let a = spd(&mut rng, d);
        let b = sample_normal(&mut rng, d);
        let x = solve_spd(&a, &b).unwrap();
        let oracle = to_na(&a).lu().solve(&DVector::from_column_slice(&b)).unwrap();
        let residual = a.matvec(&x).unwrap().iter().zip(&b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        prop_assert!(residual < 1e-8);
        for (u, v) in x.iter().zip(oracle.iter()) {
            prop_assert!((u - v).abs() < 1e-6 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn split_is_a_pure_function_of_seed_and_label(seed in any::<u64>(), label in "[a-z/]{1,12}") {
        let a = Rng::new(seed).split(&label);
        let mut parent = Rng::new(seed);
        parent.next_f64();
        prop_assert_eq!(a.seed(), parent.split(&label).seed());
    }
}

#[test]
fn rank_deficient_psd_factorizes() {
    let mut rng = Rng::new(9);
    let b = gaussian(&mut rng, 6, 4);
    let a = b.matmul(&b.transpose()).unwrap();
    let l = cholesky(&a).unwrap();
    assert!(l.matmul(&l.transpose()).unwrap().max_abs_diff(&a) < 1e-8);
}

#[test]
fn indefinite_matrix_is_rejected() {
    let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
    assert!(matches!(cholesky(&a), Err(Error::NotPsd { .. })));
}

#[test]
fn normal_samples_fit_the_standard_normal_cdf() {
    let n = 20_000;
    let mut v = sample_normal(&mut Rng::new(17), n);
    v.sort_by(f64::total_cmp);
    let phi = Normal::new(0.0, 1.0).unwrap();
    let ks = v
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = phi.cdf(x);
            (f - i as f64 / n as f64)
                .abs()
                .max(((i + 1) as f64 / n as f64 - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value of the Kolmogorov-Smirnov statistic.
    assert!(ks < 1.63 / (n as f64).sqrt(), "KS statistic {ks}");
}
