use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use irm_ite_core::datagen::{
    build_covariances, gen_features, gen_outcome_params, generate, min_group_size, Dataset,
    FeatureModel, GenSpec, OutcomeModel,
};
use irm_ite_core::numerics::{Matrix, Rng};

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn sample_covariance(x: &Matrix) -> DMatrix<f64> {
    let x = to_na(x);
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)] - mean[j]);
    centered.transpose() * centered / (n - 1.0)
}

fn sorted_eigenvalues(m: &Matrix) -> Vec<f64> {
    let mut ev: Vec<f64> = to_na(m)
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[test]
fn covariance_eigenvalues_are_recovered() {
    for d in [2, 5, 20, 50] {
        let cov = build_covariances(&mut Rng::new(d as u64), d).unwrap();
        let mut desc = cov.lambda_1.clone();
        desc.reverse();
        for (sigma, lambda) in [
            (&cov.sigma_a, &cov.lambda_a),
            (&cov.sigma_0, &cov.lambda_0),
            (&cov.sigma_1, &desc),
        ] {
            for (a, b) in sorted_eigenvalues(sigma).iter().zip(lambda) {
                assert!((a - b).abs() < 1e-12, "d={d}: {a} vs {b}");
            }
        }
        assert!(cov.lambda_0.windows(2).all(|w| w[0] <= w[1]));
        assert!(cov.lambda_1.windows(2).all(|w| w[0] >= w[1]));
        assert!((to_na(&cov.q_a).determinant().abs() - 1.0).abs() < 1e-10);
        assert!((to_na(&cov.q_b).determinant().abs() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn covariances_are_positive_semidefinite() {
    for d in [5, 35] {
        let cov = build_covariances(&mut Rng::new(77), d).unwrap();
        for s in [&cov.sigma_a, &cov.sigma_0, &cov.sigma_1] {
            assert!(sorted_eigenvalues(s)[0] > -1e-14);
        }
    }
}

fn group_rows(t: &[u8], arm: u8) -> Vec<usize> {
    (0..t.len()).filter(|&i| t[i] == arm).collect()
}

#[test]
fn model_a_feature_moments() {
    let d = 5;
    let spec = GenSpec::symmetric(d, FeatureModel::ModelA, OutcomeModel::Linear, 0.5);
    let cov = build_covariances(&mut Rng::new(3), d).unwrap();
    let n = 40_000;
    let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let x = gen_features(&mut Rng::new(4), &spec, &cov, &t).unwrap();
    for arm in [0, 1] {
        let xs = x.select_rows(&group_rows(&t, arm));
        let mean = to_na(&xs).row_mean();
        for j in 0..d {
            assert!((mean[j] - spec.mean(arm)[j]).abs() < 0.02);
        }
        assert!((sample_covariance(&xs) - to_na(&cov.sigma_a)).amax() < 0.01);
    }
}

#[test]
fn model_b_within_group_covariance_is_the_mixture_average() {
    let d = 4;
    let spec = GenSpec::symmetric(d, FeatureModel::ModelB, OutcomeModel::Linear, 1.0);
    let cov = build_covariances(&mut Rng::new(5), d).unwrap();
    let n = 40_000;
    let t = vec![1u8; n];
    let x = gen_features(&mut Rng::new(6), &spec, &cov, &t).unwrap();
    let expected = (to_na(&cov.sigma_0) + to_na(&cov.sigma_1)) * 0.5;
    assert!((sample_covariance(&x) - expected).amax() < 0.01);
    let mean = to_na(&x).row_mean();
    assert!(mean.iter().all(|m| (m - 1.0).abs() < 0.02));
}

#[test]
fn quadratic_mean_matches_matrix_form() {
    let d = 6;
    let spec = GenSpec::symmetric(d, FeatureModel::ModelA, OutcomeModel::Quadratic, 0.1);
    let params = gen_outcome_params(&mut Rng::new(8), &spec);
    let x = DVector::from_fn(d, |i, _| 0.3 * i as f64 - 0.7);
    for arm in [0u8, 1] {
        let (a, b, c) = if arm == 1 {
            (params.a1.as_ref().unwrap(), &params.b1, params.c1)
        } else {
            (params.a0.as_ref().unwrap(), &params.b0, params.c0)
        };
        let oracle = (x.transpose() * to_na(a) * &x)[0] + DVector::from_column_slice(b).dot(&x) + c;
        assert!((params.mean_outcome(arm, x.as_slice()) - oracle).abs() < 1e-12);
    }
}

fn fm_strategy() -> impl Strategy<Value = FeatureModel> {
    prop_oneof![Just(FeatureModel::ModelA), Just(FeatureModel::ModelB)]
}

fn om_strategy() -> impl Strategy<Value = OutcomeModel> {
    prop_oneof![Just(OutcomeModel::Linear), Just(OutcomeModel::Quadratic)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn generation_is_deterministic(seed in any::<u64>(), d in 1usize..12, fm in fm_strategy(), om in om_strategy()) {
        let spec = GenSpec::symmetric(d, fm, om, 0.3);
        let a = generate(seed, &spec, 60, 20).unwrap();
        let b = generate(seed, &spec, 60, 20).unwrap();
        prop_assert_eq!(&a.train, &b.train);
        prop_assert_eq!(&a.test, &b.test);
        prop_assert_eq!(&a.params, &b.params);
    }

    #[test]
    fn training_groups_meet_the_minimum(seed in any::<u64>(), d in 1usize..30) {
        let spec = GenSpec::symmetric(d, FeatureModel::ModelA, OutcomeModel::Linear, 1.0);
        let g = generate(seed, &spec, 80, 10).unwrap();
        prop_assert!(g.train.group_size(0) >= min_group_size(d));
        prop_assert!(g.train.group_size(1) >= min_group_size(d));
    }

    #[test]
    fn factual_outcome_and_effect_identities(seed in any::<u64>(), d in 1usize..10, fm in fm_strategy(), om in om_strategy()) {
        let g = generate(seed, &GenSpec::symmetric(d, fm, om, 0.5), 50, 50).unwrap();
        for ds in [&g.train, &g.test] {
            let o = ds.oracle.as_ref().unwrap();
            for i in 0..ds.len() {
                prop_assert_eq!(ds.y_f[i], if ds.t[i] == 1 { o.y1[i] } else { o.y0[i] });
                prop_assert_eq!(o.ite[i], o.y1[i] - o.y0[i]);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>(), d in 1usize..6) {
        let g = generate(seed, &GenSpec::symmetric(d, FeatureModel::ModelB, OutcomeModel::Quadratic, 0.2), 30, 5).unwrap();
        let text = g.train.to_csv_string();
        prop_assert_eq!(Dataset::read_csv(text.as_bytes()).unwrap(), g.train);
    }
}
