//! Python bindings: data generation, estimator fitting and scoring, and the
//! experiment sweeps.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use irm_ite_core::datagen::{self, Dataset, FeatureModel, GenSpec, OutcomeModel};
use irm_ite_core::domains::{split_populated, DomainAssignment, UniformSplitter};
use irm_ite_core::evaluation::{self, evaluate_estimator};
use irm_ite_core::harness::{self, ExperimentConfig, ResultRecord};
use irm_ite_core::learners::IrmConfig;
use irm_ite_core::metalearners::{
    fit_s_learner, fit_t_learner, predict_ite, BaseLearner, IteEstimator, MetaKind,
};
use irm_ite_core::numerics::{Matrix, Rng};
use irm_ite_core::plot::{plot_svg as render_svg, PlotKind};
use irm_ite_core::Error;

fn py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    if rows.is_empty() {
        return Err(PyValueError::new_err("feature matrix has no rows"));
    }
    Matrix::from_rows(&rows).map_err(py_err)
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

/// Features, treatment and factual outcome; generated sets also carry the
/// potential outcomes.
#[pyclass(name = "Dataset", module = "irm_ite", skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(x: Vec<Vec<f64>>, t: Vec<u8>, y_f: Vec<f64>) -> PyResult<Self> {
        let inner = Dataset::new(matrix(x)?, t, y_f, None).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        let inner = Dataset::read_csv(text.as_bytes()).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.x)
    }

    #[getter]
    fn t(&self) -> Vec<u8> {
        self.inner.t.clone()
    }

    #[getter]
    fn y_f(&self) -> Vec<f64> {
        self.inner.y_f.clone()
    }

    #[getter]
    fn y0(&self) -> Option<Vec<f64>> {
        self.inner.oracle.as_ref().map(|o| o.y0.clone())
    }

    #[getter]
    fn y1(&self) -> Option<Vec<f64>> {
        self.inner.oracle.as_ref().map(|o| o.y1.clone())
    }

    #[getter]
    fn ite(&self) -> Option<Vec<f64>> {
        self.inner.oracle.as_ref().map(|o| o.ite.clone())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(n={}, d={})", self.inner.len(), self.inner.dim())
    }
}

fn feature_model(name: &str) -> PyResult<FeatureModel> {
    match name.to_ascii_lowercase().as_str() {
        "a" | "modela" => Ok(FeatureModel::ModelA),
        "b" | "modelb" => Ok(FeatureModel::ModelB),
        _ => Err(PyValueError::new_err(format!(
            "unknown feature model {name:?}"
        ))),
    }
}

fn outcome_model(name: &str) -> PyResult<OutcomeModel> {
    match name.to_ascii_lowercase().as_str() {
        "linear" => Ok(OutcomeModel::Linear),
        "quadratic" => Ok(OutcomeModel::Quadratic),
        _ => Err(PyValueError::new_err(format!(
            "unknown outcome model {name:?}"
        ))),
    }
}

/// Draws a train and a test set with means `-separation` and `+separation`.
#[pyfunction]
#[pyo3(signature = (seed, d, feature_model="A", outcome_model="quadratic", separation=0.1, n_tr=200, n_te=100, sigma_noise=1.0))]
#[allow(clippy::too_many_arguments)]
fn generate(
    py: Python<'_>,
    seed: u64,
    d: usize,
    feature_model: &str,
    outcome_model: &str,
    separation: f64,
    n_tr: usize,
    n_te: usize,
    sigma_noise: f64,
) -> PyResult<(PyDataset, PyDataset)> {
    let mut spec = GenSpec::symmetric(
        d,
        self::feature_model(feature_model)?,
        self::outcome_model(outcome_model)?,
        separation,
    );
    spec.sigma_noise = sigma_noise;
    let g = py
        .detach(|| datagen::generate(seed, &spec, n_tr, n_te))
        .map_err(py_err)?;
    Ok((PyDataset { inner: g.train }, PyDataset { inner: g.test }))
}

/// A fitted T- or S-learner.
#[pyclass(name = "IteEstimator", module = "irm_ite", skip_from_py_object)]
struct PyEstimator {
    inner: IteEstimator,
}

#[pymethods]
impl PyEstimator {
    /// `meta` is "T" or "S", `base` is "IRM" or "OLS". IRM splits the rows
    /// into `n_domains` random domains seeded by `seed`.
    #[staticmethod]
    #[pyo3(signature = (train, meta="T", base="IRM", n_domains=3, seed=0, lam=100.0, steps=5000, lr=0.01, anneal_step=500, ridge=1e-8))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        py: Python<'_>,
        train: &PyDataset,
        meta: &str,
        base: &str,
        n_domains: usize,
        seed: u64,
        lam: f64,
        steps: usize,
        lr: f64,
        anneal_step: usize,
        ridge: f64,
    ) -> PyResult<Self> {
        let meta = match meta.to_ascii_uppercase().as_str() {
            "T" => MetaKind::TLearner,
            "S" => MetaKind::SLearner,
            _ => {
                return Err(PyValueError::new_err(format!(
                    "unknown meta-learner {meta:?}"
                )))
            }
        };
        let base = match base.to_ascii_uppercase().as_str() {
            "IRM" => BaseLearner::Irm(IrmConfig {
                lambda: lam,
                steps,
                lr,
                anneal_step,
                seed,
            }),
            "OLS" => BaseLearner::Ols { ridge },
            _ => {
                return Err(PyValueError::new_err(format!(
                    "unknown base learner {base:?}"
                )))
            }
        };
        let train = &train.inner;
        let inner = py
            .detach(|| {
                let assign = match base {
                    BaseLearner::Irm(_) => split_populated(
                        &UniformSplitter,
                        &Rng::new(seed).split("domains"),
                        train,
                        n_domains,
                    )?,
                    BaseLearner::Ols { .. } => DomainAssignment::single(train.len()),
                };
                match meta {
                    MetaKind::TLearner => fit_t_learner(train, &assign, &base),
                    MetaKind::SLearner => fit_s_learner(train, &assign, &base),
                }
            })
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: IteEstimator::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn predict_ite(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        predict_ite(&self.inner, &matrix(x)?).map_err(py_err)
    }

    /// Root PEHE on a dataset that carries potential outcomes.
    fn evaluate(&self, test: &PyDataset) -> PyResult<f64> {
        Ok(evaluate_estimator(&self.inner, &test.inner)
            .map_err(py_err)?
            .sqrt_pehe)
    }

    #[getter]
    fn n_features(&self) -> usize {
        self.inner.n_features
    }

    #[getter]
    fn n_domains(&self) -> usize {
        self.inner.n_domains
    }

    fn __repr__(&self) -> String {
        format!(
            "IteEstimator({:?}, {:?}, n_domains={}, n_features={})",
            self.inner.kind, self.inner.base, self.inner.n_domains, self.inner.n_features
        )
    }
}

/// Mean squared difference between true and estimated effects.
#[pyfunction]
fn pehe(ite_true: Vec<f64>, ite_hat: Vec<f64>) -> PyResult<f64> {
    Ok(evaluation::pehe(&ite_true, &ite_hat).map_err(py_err)?.pehe)
}

#[pyclass(
    name = "ResultRecord",
    module = "irm_ite",
    get_all,
    skip_from_py_object
)]
struct PyRecord {
    sweep: String,
    x_value: f64,
    measured_accuracy: Option<f64>,
    estimator: String,
    rep: usize,
    sqrt_pehe: Option<f64>,
    wall_time_s: Option<f64>,
    error: Option<String>,
}

#[pymethods]
impl PyRecord {
    fn __repr__(&self) -> String {
        format!(
            "ResultRecord({} rep={} sqrt_pehe={:?} error={:?})",
            self.estimator, self.rep, self.sqrt_pehe, self.error
        )
    }
}

impl From<ResultRecord> for PyRecord {
    fn from(r: ResultRecord) -> Self {
        PyRecord {
            sweep: r.sweep.name().to_string(),
            x_value: r.x_value,
            measured_accuracy: r.measured_accuracy,
            estimator: r.estimator.name().to_string(),
            rep: r.rep,
            sqrt_pehe: r.sqrt_pehe,
            wall_time_s: r.wall_time_s,
            error: r.error,
        }
    }
}

fn config(json: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_json(json).map_err(py_err)
}

/// One repetition of the configured experiment; `config` is JSON text.
#[pyfunction]
fn run_once(py: Python<'_>, config: &str, rep: usize) -> PyResult<Vec<PyRecord>> {
    let cfg = self::config(config)?;
    let recs = py.detach(|| harness::run_once(&cfg, rep)).map_err(py_err)?;
    Ok(recs.into_iter().map(PyRecord::from).collect())
}

/// Accuracy sweep as results CSV text.
#[pyfunction]
#[pyo3(signature = (config, separations=None))]
fn sweep_accuracy(py: Python<'_>, config: &str, separations: Option<Vec<f64>>) -> PyResult<String> {
    let cfg = self::config(config)?;
    let grid = separations.unwrap_or_else(|| cfg.default_separations());
    let recs = py
        .detach(|| harness::sweep_accuracy(&cfg, &grid))
        .map_err(py_err)?;
    Ok(harness::results_to_csv_string(&recs))
}

/// Dimension sweep as results CSV text.
#[pyfunction]
#[pyo3(signature = (config, dims=None))]
fn sweep_dimension(py: Python<'_>, config: &str, dims: Option<Vec<usize>>) -> PyResult<String> {
    let cfg = self::config(config)?;
    let grid = dims.unwrap_or_else(|| cfg.default_dims());
    let recs = py
        .detach(|| harness::sweep_dimension(&cfg, &grid))
        .map_err(py_err)?;
    Ok(harness::results_to_csv_string(&recs))
}

/// SVG chart of results CSV text; `kind` is "accuracy" or "dimension".
#[pyfunction]
fn plot_svg(csv: &str, kind: &str) -> PyResult<String> {
    let kind: PlotKind = kind.parse().map_err(py_err)?;
    let recs = harness::read_results_csv(csv.as_bytes()).map_err(py_err)?;
    render_svg(&recs, kind).map_err(py_err)
}

#[pymodule]
fn irm_ite(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyEstimator>()?;
    m.add_class::<PyRecord>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(pehe, m)?)?;
    m.add_function(wrap_pyfunction!(run_once, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_dimension, m)?)?;
    m.add_function(wrap_pyfunction!(plot_svg, m)?)?;
    Ok(())
}
