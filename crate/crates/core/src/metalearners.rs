//! T-learner and S-learner wrappers that turn a linear base-learner into an
//! individual treatment effect estimator.
//!
//! The S-learner regresses `y_f` on `[x, t, x·t]`. The binary `t` column is
//! left unstandardized; the two continuous blocks are standardized.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::domains::{partition, DomainAssignment, Group};
use crate::error::{Error, Result};
use crate::learners::{
    irm_fit, irm_fit_with, ols_fit, ols_fit_with, IrmConfig, LinearModel, Standardizer,
};
use crate::numerics::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetaKind {
    TLearner,
    SLearner,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaseKind {
    #[serde(rename = "IRM")]
    Irm,
    #[serde(rename = "OLS")]
    Ols,
}

/// Base-learner together with its settings.
#[derive(Clone, Debug, PartialEq)]
pub enum BaseLearner {
    /// Closed-form least squares on the pooled rows; domains are ignored.
    Ols {
        ridge: f64,
    },
    Irm(IrmConfig),
}

impl BaseLearner {
    pub fn kind(&self) -> BaseKind {
        match self {
            BaseLearner::Ols { .. } => BaseKind::Ols,
            BaseLearner::Irm(_) => BaseKind::Irm,
        }
    }
}

/// Anything that maps a feature matrix to per-row effect estimates.
pub trait IteModel {
    fn predict_ite(&self, x: &Matrix) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Branches {
    Two {
        control_model: LinearModel,
        treatment_model: LinearModel,
    },
    Single {
        single_model: LinearModel,
    },
}

/// A fitted effect estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IteEstimator {
    pub kind: MetaKind,
    pub base: BaseKind,
    pub n_domains: usize,
    /// Raw feature dimension `d`.
    pub n_features: usize,
    #[serde(flatten)]
    pub branches: Branches,
}

impl IteEstimator {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("estimator serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let est: IteEstimator = serde_json::from_str(s)?;
        let (expect_dim, ok) = match (&est.kind, &est.branches) {
            (
                MetaKind::TLearner,
                Branches::Two {
                    control_model,
                    treatment_model,
                },
            ) => (
                est.n_features,
                control_model.dim() == est.n_features && treatment_model.dim() == est.n_features,
            ),
            (MetaKind::SLearner, Branches::Single { single_model }) => (
                2 * est.n_features + 1,
                single_model.dim() == 2 * est.n_features + 1,
            ),
            _ => {
                return Err(Error::Schema(
                    "estimator kind does not match its models".into(),
                ))
            }
        };
        if !ok {
            return Err(Error::Schema(format!(
                "model weights must have length {expect_dim}"
            )));
        }
        if est.base == BaseKind::Ols && est.n_domains != 1 {
            return Err(Error::Schema(
                "OLS estimators use exactly one domain".into(),
            ));
        }
        Ok(est)
    }
}

impl IteModel for IteEstimator {
    fn predict_ite(&self, x: &Matrix) -> Result<Vec<f64>> {
        predict_ite(self, x)
    }
}

fn domain_data(parts: &[Dataset]) -> Vec<(&Matrix, &[f64])> {
    parts.iter().map(|p| (&p.x, p.y_f.as_slice())).collect()
}

fn check_assignment(train: &Dataset, assign: &DomainAssignment) -> Result<()> {
    if assign.len() != train.len() {
        return Err(Error::LengthMismatch {
            left: train.len(),
            right: assign.len(),
        });
    }
    Ok(())
}

/// Separate outcome regressions for the control and treated rows.
pub fn fit_t_learner(
    train: &Dataset,
    assign: &DomainAssignment,
    base: &BaseLearner,
) -> Result<IteEstimator> {
    check_assignment(train, assign)?;
    let (control_model, treatment_model, n_domains) = match base {
        BaseLearner::Ols { ridge } => {
            let all = DomainAssignment::single(train.len());
            let control = partition(train, &all, Group::Control)?;
            let treated = partition(train, &all, Group::Treatment)?;
            let (c, t) = rayon::join(
                || ols_fit(&control[0].x, &control[0].y_f, *ridge),
                || ols_fit(&treated[0].x, &treated[0].y_f, *ridge),
            );
            (c?, t?, 1)
        }
        BaseLearner::Irm(cfg) => {
            let control = partition(train, assign, Group::Control)?;
            let treated = partition(train, assign, Group::Treatment)?;
            let (c, t) = rayon::join(
                || irm_fit(&domain_data(&control), cfg),
                || irm_fit(&domain_data(&treated), cfg),
            );
            (c?, t?, assign.n_domains())
        }
    };
    Ok(IteEstimator {
        kind: MetaKind::TLearner,
        base: base.kind(),
        n_domains,
        n_features: train.dim(),
        branches: Branches::Two {
            control_model,
            treatment_model,
        },
    })
}

/// `[x, t, x·t]`, giving `2d + 1` columns.
pub fn expand_features(x: &Matrix, t: &[u8]) -> Result<Matrix> {
    if x.rows() != t.len() {
        return Err(Error::LengthMismatch {
            left: x.rows(),
            right: t.len(),
        });
    }
    let d = x.cols();
    Ok(Matrix::from_fn(x.rows(), 2 * d + 1, |i, j| {
        let ti = f64::from(t[i]);
        match j {
            j if j < d => x[(i, j)],
            j if j == d => ti,
            j => ti * x[(i, j - d - 1)],
        }
    }))
}

/// Test-time encoding with every row assigned to `arm`: `(x, 0, 0)` or `(x, 1, x)`.
pub fn encode_arm(x: &Matrix, arm: u8) -> Matrix {
    expand_features(x, &vec![arm; x.rows()]).expect("lengths agree by construction")
}

fn s_learner_standardizer(parts: &[&Matrix], d: usize) -> Standardizer {
    Standardizer::fit_pooled(parts, &[d])
}

/// One regression on `[x, t, x·t]` over all rows.
pub fn fit_s_learner(
    train: &Dataset,
    assign: &DomainAssignment,
    base: &BaseLearner,
) -> Result<IteEstimator> {
    check_assignment(train, assign)?;
    let d = train.dim();
    for (arm, group) in [(0, "control"), (1, "treatment")] {
        if train.group_size(arm) == 0 {
            return Err(Error::EmptyDomainGroup { domain: 0, group });
        }
    }
    let (single_model, n_domains) = match base {
        BaseLearner::Ols { ridge } => {
            let xe = expand_features(&train.x, &train.t)?;
            let st = s_learner_standardizer(&[&xe], d);
            (ols_fit_with(&xe, &train.y_f, *ridge, st)?, 1)
        }
        BaseLearner::Irm(cfg) => {
            let parts = partition(train, assign, Group::Both)?;
            let expanded = parts
                .iter()
                .map(|p| expand_features(&p.x, &p.t))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Matrix> = expanded.iter().collect();
            let st = s_learner_standardizer(&refs, d);
            let data: Vec<(&Matrix, &[f64])> = expanded
                .iter()
                .zip(&parts)
                .map(|(x, p)| (x, p.y_f.as_slice()))
                .collect();
            (irm_fit_with(&data, cfg, st)?, assign.n_domains())
        }
    };
    Ok(IteEstimator {
        kind: MetaKind::SLearner,
        base: base.kind(),
        n_domains,
        n_features: d,
        branches: Branches::Single { single_model },
    })
}

/// Estimated `y1 - y0` for every row of `x`.
pub fn predict_ite(est: &IteEstimator, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() != est.n_features {
        return Err(Error::DimensionMismatch {
            expected: est.n_features,
            actual: x.cols(),
        });
    }
    let (y1, y0) = match &est.branches {
        Branches::Two {
            control_model,
            treatment_model,
        } => (treatment_model.predict(x)?, control_model.predict(x)?),
        Branches::Single { single_model } => (
            single_model.predict(&encode_arm(x, 1))?,
            single_model.predict(&encode_arm(x, 0))?,
        ),
    };
    Ok(y1.iter().zip(&y0).map(|(a, b)| a - b).collect())
}
