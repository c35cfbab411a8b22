//! Experiment orchestration: one repetition, the two sweep families, and the
//! results CSV.
//!
//! Seeds form a tree: `root_seed → rep/<k> → {data, domains, optimizer,
//! probe}`. The data seed further splits into covariance, coefficient,
//! treatment, feature and outcome streams inside [`generate`]. Estimators
//! never draw from the data streams, so adding one does not perturb the data.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{fmt_f64, generate, GenSpec, Generated, OutcomeModel};
use crate::domains::{split_populated, DomainAssignment, UniformSplitter};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_estimator, group_classification_accuracy, MIN_PROBE_SIZE};
use crate::learners::{IrmConfig, DEFAULT_OLS_RIDGE};
use crate::metalearners::{fit_s_learner, fit_t_learner, BaseLearner, IteEstimator};
use crate::numerics::Rng;

/// Exact header of the results CSV.
pub const RESULTS_HEADER: &str =
    "sweep,x_value,measured_accuracy,estimator,rep,sqrt_pehe,wall_time_s,error";

pub const DEFAULT_DIMS: [usize; 5] = [5, 10, 20, 35, 50];
pub const DEFAULT_LINEAR_SEPARATIONS: [f64; 5] = [0.0, 0.5, 1.0, 2.0, 4.0];
pub const DEFAULT_QUADRATIC_SEPARATIONS: [f64; 7] = [0.0, 0.0025, 0.005, 0.01, 0.02, 0.05, 0.1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "IRM2")]
    Irm2,
    #[serde(rename = "IRM1")]
    Irm1,
    #[serde(rename = "OLS_LR2")]
    OlsLr2,
    #[serde(rename = "OLS_LR1")]
    OlsLr1,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Irm2,
        EstimatorKind::Irm1,
        EstimatorKind::OlsLr2,
        EstimatorKind::OlsLr1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Irm2 => "IRM2",
            EstimatorKind::Irm1 => "IRM1",
            EstimatorKind::OlsLr2 => "OLS_LR2",
            EstimatorKind::OlsLr1 => "OLS_LR1",
        }
    }

    pub fn uses_domains(self) -> bool {
        matches!(self, EstimatorKind::Irm2 | EstimatorKind::Irm1)
    }

    fn fit(
        self,
        train: &crate::datagen::Dataset,
        assign: &DomainAssignment,
        irm: &IrmConfig,
        ridge: f64,
    ) -> Result<IteEstimator> {
        let ols = BaseLearner::Ols { ridge };
        let irm = BaseLearner::Irm(irm.clone());
        match self {
            EstimatorKind::Irm2 => fit_t_learner(train, assign, &irm),
            EstimatorKind::Irm1 => fit_s_learner(train, assign, &irm),
            EstimatorKind::OlsLr2 => fit_t_learner(train, assign, &ols),
            EstimatorKind::OlsLr1 => fit_s_learner(train, assign, &ols),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown estimator {s:?}")))
    }
}

fn default_n_tr() -> usize {
    200
}
fn default_n_te() -> usize {
    100
}
fn default_n_e() -> usize {
    3
}
fn default_reps() -> usize {
    10
}
fn default_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}
fn default_ridge() -> f64 {
    DEFAULT_OLS_RIDGE
}
fn default_n_probe() -> usize {
    4000
}

/// Everything one experiment needs. Field names match the JSON config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: GenSpec,
    #[serde(default = "default_n_tr")]
    pub n_tr: usize,
    #[serde(default = "default_n_te")]
    pub n_te: usize,
    #[serde(default = "default_n_e")]
    pub n_e: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub irm: IrmConfig,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_ridge")]
    pub ols_ridge: f64,
    /// Rows drawn for each separability probe.
    #[serde(default = "default_n_probe")]
    pub n_probe: usize,
    /// Accuracy-sweep grid; defaults depend on the outcome model.
    #[serde(default)]
    pub separations: Option<Vec<f64>>,
    /// Dimension-sweep grid.
    #[serde(default)]
    pub dims: Option<Vec<usize>>,
    /// `mu1 = -mu0 = mean_scale · 1` in dimension sweeps; 1.0 for linear and
    /// 0.1 for quadratic outcomes when absent.
    #[serde(default)]
    pub mean_scale: Option<f64>,
    /// Fill the `wall_time_s` column. Off by default so that reruns are
    /// byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl ExperimentConfig {
    pub fn new(spec: GenSpec) -> Self {
        ExperimentConfig {
            spec,
            n_tr: default_n_tr(),
            n_te: default_n_te(),
            n_e: default_n_e(),
            reps: default_reps(),
            irm: IrmConfig::default(),
            estimators: default_estimators(),
            root_seed: 0,
            ols_ridge: default_ridge(),
            n_probe: default_n_probe(),
            separations: None,
            dims: None,
            mean_scale: None,
            record_wall_time: false,
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.irm.validate()?;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.estimators.is_empty() {
            return bad("estimators must not be empty");
        }
        if self.n_tr == 0 || self.n_te == 0 {
            return bad("n_tr and n_te must be at least 1");
        }
        if self.n_e == 0 || self.n_e > self.n_tr {
            return bad("n_e must lie in 1..=n_tr");
        }
        if self.ols_ridge.is_nan() || self.ols_ridge < 0.0 {
            return bad("ols_ridge must be non-negative");
        }
        if self.n_probe < MIN_PROBE_SIZE {
            return bad("n_probe must be at least 100");
        }
        if let Some(d) = &self.dims {
            if d.is_empty() || d.contains(&0) {
                return bad("dims must be a non-empty list of positive integers");
            }
        }
        if let Some(s) = &self.separations {
            if s.is_empty() || s.iter().any(|v| !v.is_finite()) {
                return bad("separations must be a non-empty list of finite numbers");
            }
        }
        Ok(())
    }

    pub fn default_separations(&self) -> Vec<f64> {
        self.separations
            .clone()
            .unwrap_or_else(|| match self.spec.outcome_model {
                OutcomeModel::Linear => DEFAULT_LINEAR_SEPARATIONS.to_vec(),
                OutcomeModel::Quadratic => DEFAULT_QUADRATIC_SEPARATIONS.to_vec(),
            })
    }

    pub fn default_dims(&self) -> Vec<usize> {
        self.dims.clone().unwrap_or_else(|| DEFAULT_DIMS.to_vec())
    }

    pub fn dimension_mean_scale(&self) -> f64 {
        self.mean_scale.unwrap_or(match self.spec.outcome_model {
            OutcomeModel::Linear => 1.0,
            OutcomeModel::Quadratic => 0.1,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SweepKind {
    Run,
    Accuracy,
    Dimension,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Run => "run",
            SweepKind::Accuracy => "accuracy",
            SweepKind::Dimension => "dimension",
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "run" => Ok(SweepKind::Run),
            "accuracy" => Ok(SweepKind::Accuracy),
            "dimension" => Ok(SweepKind::Dimension),
            other => Err(Error::Schema(format!("unknown sweep kind {other:?}"))),
        }
    }
}

/// One (sweep point, estimator, repetition) outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRecord {
    pub sweep: SweepKind,
    /// Separation for accuracy sweeps, dimension otherwise.
    pub x_value: f64,
    pub measured_accuracy: Option<f64>,
    pub estimator: EstimatorKind,
    pub rep: usize,
    /// `None` on failed rows.
    pub sqrt_pehe: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Data shared by every estimator within one repetition.
#[derive(Clone, Debug)]
pub struct RepData {
    pub generated: Generated,
    /// Split used by the IRM estimators; an error if no populated split exists.
    pub assignment: std::result::Result<DomainAssignment, String>,
    pub irm: IrmConfig,
}

fn rep_rng(cfg: &ExperimentConfig, rep: usize) -> Rng {
    Rng::new(cfg.root_seed).split_indexed("rep", rep)
}

/// Draws the train/test data and domain split for repetition `rep` of the
/// scheme `spec`.
pub fn prepare_rep(cfg: &ExperimentConfig, spec: &GenSpec, rep: usize) -> Result<RepData> {
    let rng = rep_rng(cfg, rep);
    let generated = generate(rng.split("data").seed(), spec, cfg.n_tr, cfg.n_te)?;
    let assignment = split_populated(
        &UniformSplitter,
        &rng.split("domains"),
        &generated.train,
        cfg.n_e,
    )
    .map_err(|e| e.to_string());
    let irm = IrmConfig {
        seed: rng.split("optimizer").seed(),
        ..cfg.irm.clone()
    };
    Ok(RepData {
        generated,
        assignment,
        irm,
    })
}

struct Point {
    sweep: SweepKind,
    x_value: f64,
    spec: GenSpec,
    measure_accuracy: bool,
}

/// Records of one repetition, in `cfg.estimators` order.
fn run_rep(cfg: &ExperimentConfig, point: &Point, rep: usize) -> Vec<ResultRecord> {
    let record = |estimator, measured_accuracy, outcome: Result<f64>, wall: f64| ResultRecord {
        sweep: point.sweep,
        x_value: point.x_value,
        measured_accuracy,
        estimator,
        rep,
        sqrt_pehe: outcome.as_ref().ok().copied(),
        wall_time_s: cfg.record_wall_time.then_some(wall),
        error: outcome.err().map(|e| e.to_string()),
    };
    let data = match prepare_rep(cfg, &point.spec, rep) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return cfg
                .estimators
                .iter()
                .map(|&k| record(k, None, Err(Error::InvalidArgument(msg.clone())), 0.0))
                .collect();
        }
    };
    let accuracy = point.measure_accuracy.then(|| {
        group_classification_accuracy(
            &mut rep_rng(cfg, rep).split("probe"),
            &point.spec,
            &data.generated.cov,
            cfg.n_probe,
        )
    });
    let measured = accuracy.as_ref().and_then(|a| a.as_ref().ok().copied());
    let single = DomainAssignment::single(data.generated.train.len());
    cfg.estimators
        .iter()
        .map(|&kind| {
            let start = Instant::now();
            let outcome = (|| {
                if let Some(Err(e)) = &accuracy {
                    return Err(Error::InvalidArgument(format!("probe failed: {e}")));
                }
                let assign = if kind.uses_domains() {
                    data.assignment
                        .as_ref()
                        .map_err(|e| Error::InvalidArgument(e.clone()))?
                } else {
                    &single
                };
                let est = kind.fit(&data.generated.train, assign, &data.irm, cfg.ols_ridge)?;
                Ok(evaluate_estimator(&est, &data.generated.test)?.sqrt_pehe)
            })();
            record(kind, measured, outcome, start.elapsed().as_secs_f64())
        })
        .collect()
}

/// All repetitions of one sweep point, ordered by estimator then repetition.
fn run_point(cfg: &ExperimentConfig, point: &Point) -> Vec<ResultRecord> {
    let per_rep: Vec<Vec<ResultRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| run_rep(cfg, point, rep))
        .collect();
    let mut out = Vec::with_capacity(cfg.reps * cfg.estimators.len());
    for k in 0..cfg.estimators.len() {
        out.extend(per_rep.iter().map(|recs| recs[k].clone()));
    }
    out
}

/// Generate, split, fit every requested estimator and score it on the test
/// set for repetition `rep` of `cfg.spec`. Fit failures become error rows.
pub fn run_once(cfg: &ExperimentConfig, rep: usize) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let point = Point {
        sweep: SweepKind::Run,
        x_value: cfg.spec.d as f64,
        spec: cfg.spec.clone(),
        measure_accuracy: false,
    };
    Ok(run_rep(cfg, &point, rep))
}

/// Every repetition of `cfg.spec`.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let point = Point {
        sweep: SweepKind::Run,
        x_value: cfg.spec.d as f64,
        spec: cfg.spec.clone(),
        measure_accuracy: false,
    };
    Ok(run_point(cfg, &point))
}

/// For each separation `s`, sets `mu0 = -s·1`, `mu1 = s·1`, measures group
/// classification accuracy per repetition and scores every estimator.
pub fn sweep_accuracy(cfg: &ExperimentConfig, separations: &[f64]) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    Ok(separations
        .iter()
        .flat_map(|&s| {
            let point = Point {
                sweep: SweepKind::Accuracy,
                x_value: s,
                spec: cfg.spec.resized(cfg.spec.d, s),
                measure_accuracy: true,
            };
            run_point(cfg, &point)
        })
        .collect())
}

/// Scores every estimator at each dimension with `mu = ±mean_scale·1`.
pub fn sweep_dimension(cfg: &ExperimentConfig, dims: &[usize]) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    if dims.contains(&0) {
        return Err(Error::Config("dimensions must be positive".into()));
    }
    let scale = cfg.dimension_mean_scale();
    Ok(dims
        .iter()
        .flat_map(|&d| {
            let point = Point {
                sweep: SweepKind::Dimension,
                x_value: d as f64,
                spec: cfg.spec.resized(d, scale),
                measure_accuracy: false,
            };
            run_point(cfg, &point)
        })
        .collect())
}

pub fn write_results_csv<W: Write>(records: &[ResultRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER.split(','))?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in records {
        w.write_record([
            r.sweep.name().to_string(),
            fmt_f64(r.x_value),
            opt(r.measured_accuracy),
            r.estimator.name().to_string(),
            r.rep.to_string(),
            opt(r.sqrt_pehe),
            opt(r.wall_time_s),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn results_to_csv_string(records: &[ResultRecord]) -> String {
    let mut buf = Vec::new();
    write_results_csv(records, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

/// Parses a results CSV, rejecting anything that does not match the schema.
pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(|e| Error::Schema(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != RESULTS_HEADER {
        return Err(Error::Schema(format!("expected header {RESULTS_HEADER}")));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(e.to_string()))?;
        let schema = |what: &str| Error::Schema(format!("row {}: bad {what}", line + 1));
        let num = |j: usize, what: &str| -> Result<Option<f64>> {
            match rec.get(j).unwrap_or("") {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| schema(what)),
            }
        };
        let error = rec.get(7).filter(|s| !s.is_empty()).map(String::from);
        let sqrt_pehe = num(5, "sqrt_pehe")?;
        if sqrt_pehe.is_none() && error.is_none() {
            return Err(schema("sqrt_pehe"));
        }
        out.push(ResultRecord {
            sweep: rec.get(0).unwrap_or("").parse()?,
            x_value: num(1, "x_value")?.ok_or_else(|| schema("x_value"))?,
            measured_accuracy: num(2, "measured_accuracy")?,
            estimator: rec.get(3).unwrap_or("").parse()?,
            rep: rec
                .get(4)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| schema("rep"))?,
            sqrt_pehe,
            wall_time_s: num(6, "wall_time_s")?,
            error,
        });
    }
    Ok(out)
}
