//! PEHE and the group-separability probe.

use crate::datagen::{gen_features, gen_treatment, CovarianceSet, Dataset, GenSpec};
use crate::error::{Error, Result};
use crate::learners::Standardizer;
use crate::metalearners::IteModel;
use crate::numerics::{dot, Rng};

/// Logistic-regression settings of the separability probe.
const PROBE_STEPS: usize = 2000;
const PROBE_LR: f64 = 0.1;
const PROBE_L2: f64 = 1e-4;
pub const MIN_PROBE_SIZE: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub pehe: f64,
    pub sqrt_pehe: f64,
    pub n: usize,
}

/// Mean squared difference between true and estimated effects.
pub fn pehe(ite_true: &[f64], ite_hat: &[f64]) -> Result<EvalReport> {
    if ite_true.len() != ite_hat.len() {
        return Err(Error::LengthMismatch {
            left: ite_true.len(),
            right: ite_hat.len(),
        });
    }
    if ite_true.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = ite_true.len();
    let pehe = ite_true
        .iter()
        .zip(ite_hat)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n as f64;
    Ok(EvalReport {
        pehe,
        sqrt_pehe: pehe.sqrt(),
        n,
    })
}

/// PEHE of `est` over the rows of `test`.
pub fn evaluate_estimator(est: &dyn IteModel, test: &Dataset) -> Result<EvalReport> {
    let oracle = test.oracle.as_ref().ok_or(Error::MissingOracle)?;
    let hat = est.predict_ite(&test.x)?;
    pehe(&oracle.ite, &hat)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Held-out accuracy of a logistic-regression classifier predicting the
/// treatment arm from features.
///
/// Draws `n_probe` fresh rows from the scheme (`t ~ Bernoulli(0.5)`), fits on
/// the first half with ℓ2-regularized full-batch gradient descent over
/// standardized features, and scores on the second half.
pub fn group_classification_accuracy(
    rng: &mut Rng,
    spec: &GenSpec,
    cov: &CovarianceSet,
    n_probe: usize,
) -> Result<f64> {
    if n_probe < MIN_PROBE_SIZE {
        return Err(Error::InvalidArgument(format!(
            "probe needs at least {MIN_PROBE_SIZE} rows, got {n_probe}"
        )));
    }
    let t = gen_treatment(&mut rng.split("probe/treatment"), n_probe, 0.5);
    let x = gen_features(&mut rng.split("probe/features"), spec, cov, &t)?;
    let half = n_probe / 2;
    let train_rows: Vec<usize> = (0..half).collect();
    let test_rows: Vec<usize> = (half..n_probe).collect();
    let x_train = x.select_rows(&train_rows);
    let st = Standardizer::fit(&x_train);
    let z_train = st.transform(&x_train);
    let z_test = st.transform(&x.select_rows(&test_rows));

    let p = x.cols();
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    let mut gw = vec![0.0; p];
    for _ in 0..PROBE_STEPS {
        gw.iter_mut().zip(&w).for_each(|(g, wj)| *g = PROBE_L2 * wj);
        let mut gb = 0.0;
        for (row, &ti) in z_train.row_iter().zip(&t[..half]) {
            let err = (sigmoid(dot(row, &w) + b) - f64::from(ti)) / half as f64;
            for (g, zj) in gw.iter_mut().zip(row) {
                *g += err * zj;
            }
            gb += err;
        }
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= PROBE_LR * g;
        }
        b -= PROBE_LR * gb;
    }
    let correct = z_test
        .row_iter()
        .zip(&t[half..])
        .filter(|(row, &ti)| u8::from(dot(row, &w) + b >= 0.0) == ti)
        .count();
    Ok(correct as f64 / (n_probe - half) as f64)
}
