//! Linear base-learners: closed-form least squares and IRMv1 trained by
//! full-batch gradient descent.
//!
//! Both learners fit in standardized feature space. The fitted
//! [`LinearModel`] keeps the per-feature mean and standard deviation so that
//! predictions take raw features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, solve_spd, Matrix};

const MAX_STEP_HALVINGS: usize = 60;

/// Ridge applied by default to the least-squares normal equations.
pub const DEFAULT_OLS_RIDGE: f64 = 1e-8;

/// Per-feature affine map `z = (x - mean) / std`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn identity(p: usize) -> Self {
        Self {
            means: vec![0.0; p],
            stds: vec![1.0; p],
        }
    }

    pub fn fit(x: &Matrix) -> Self {
        Self::fit_pooled(&[x], &[])
    }

    /// Statistics over the rows of every matrix together. Columns listed in
    /// `raw` are passed through unchanged; constant columns get std 1.
    pub fn fit_pooled(parts: &[&Matrix], raw: &[usize]) -> Self {
        let p = parts.first().map_or(0, |m| m.cols());
        let n: usize = parts.iter().map(|m| m.rows()).sum();
        let mut means = vec![0.0; p];
        let mut stds = vec![1.0; p];
        if n == 0 {
            return Self { means, stds };
        }
        for m in parts {
            for row in m.row_iter() {
                for (acc, v) in means.iter_mut().zip(row) {
                    *acc += v;
                }
            }
        }
        means.iter_mut().for_each(|v| *v /= n as f64);
        let mut var = vec![0.0; p];
        for m in parts {
            for row in m.row_iter() {
                for j in 0..p {
                    let c = row[j] - means[j];
                    var[j] += c * c;
                }
            }
        }
        for j in 0..p {
            let s = (var[j] / n as f64).sqrt();
            if s > 1e-12 * (1.0 + means[j].abs()) {
                stds[j] = s;
            }
        }
        for &j in raw {
            means[j] = 0.0;
            stds[j] = 1.0;
        }
        Self { means, stds }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| {
            (x[(i, j)] - self.means[j]) / self.stds[j]
        })
    }
}

/// Scalar-output linear predictor over standardized features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, intercept: f64, standardizer: Standardizer) -> Result<Self> {
        if weights.len() != standardizer.dim() {
            return Err(Error::DimensionMismatch {
                expected: standardizer.dim(),
                actual: weights.len(),
            });
        }
        if standardizer.stds.iter().any(|s| s.is_nan() || *s <= 0.0) {
            return Err(Error::InvalidArgument(
                "standard deviations must be positive".into(),
            ));
        }
        Ok(Self {
            weights,
            intercept,
            means: standardizer.means,
            stds: standardizer.stds,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.weights)
            .zip(self.means.iter().zip(&self.stds))
            .map(|((xj, w), (m, s))| w * (xj - m) / s)
            .sum::<f64>()
            + self.intercept
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(x.row_iter().map(|r| self.predict_row(r)).collect())
    }

    /// Weights and intercept expressed on the raw feature scale.
    pub fn raw_coefficients(&self) -> (Vec<f64>, f64) {
        let w: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.stds)
            .map(|(w, s)| w / s)
            .collect();
        let b = self.intercept - dot(&w, &self.means);
        (w, b)
    }

    fn check_dim(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.cols(),
            });
        }
        Ok(())
    }
}

fn check_xy(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.rows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.rows(),
            right: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Least squares with an unpenalized intercept, standardizing with the
/// statistics of `x` itself.
pub fn ols_fit(x: &Matrix, y: &[f64], ridge: f64) -> Result<LinearModel> {
    ols_fit_with(x, y, ridge, Standardizer::fit(x))
}

/// Minimizes `Σ (zᵢᵀw + b - yᵢ)² + ridge‖w‖²` where `z` is `x` mapped through
/// `standardizer`.
pub fn ols_fit_with(
    x: &Matrix,
    y: &[f64],
    ridge: f64,
    standardizer: Standardizer,
) -> Result<LinearModel> {
    check_xy(x, y)?;
    if standardizer.dim() != x.cols() {
        return Err(Error::DimensionMismatch {
            expected: x.cols(),
            actual: standardizer.dim(),
        });
    }
    if ridge.is_nan() || ridge < 0.0 {
        return Err(Error::InvalidArgument("ridge must be non-negative".into()));
    }
    let z = standardizer.transform(x);
    let (n, p) = (z.rows(), z.cols());
    let z_mean: Vec<f64> = (0..p)
        .map(|j| z.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;

    let mut gram = Matrix::zeros(p, p);
    let mut rhs = vec![0.0; p];
    let mut centered = vec![0.0; p];
    for (row, yi) in z.row_iter().zip(y) {
        for j in 0..p {
            centered[j] = row[j] - z_mean[j];
        }
        let yc = yi - y_mean;
        for j in 0..p {
            rhs[j] += centered[j] * yc;
            for k in 0..=j {
                gram[(j, k)] += centered[j] * centered[k];
            }
        }
    }
    for j in 0..p {
        gram[(j, j)] += ridge;
        for k in 0..j {
            gram[(k, j)] = gram[(j, k)];
        }
    }
    let w = if p == 0 {
        Vec::new()
    } else {
        solve_spd(&gram, &rhs)?
    };
    let b = y_mean - dot(&z_mean, &w);
    LinearModel::new(w, b, standardizer)
}

/// Mean squared error of `model` on `(x, y)`.
pub fn risk(model: &LinearModel, x: &Matrix, y: &[f64]) -> Result<f64> {
    check_xy(x, y)?;
    let pred = model.predict(x)?;
    Ok(pred
        .iter()
        .zip(y)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / y.len() as f64)
}

/// Derivative of the squared-error risk of `s·Φ` with respect to the scalar
/// multiplier `s`, taken at `s = 1`: `(2/m) Σ (Φᵢ - yᵢ) Φᵢ`.
pub fn dummy_gradient(model: &LinearModel, x: &Matrix, y: &[f64]) -> Result<f64> {
    check_xy(x, y)?;
    let pred = model.predict(x)?;
    Ok(2.0 / y.len() as f64 * pred.iter().zip(y).map(|(p, y)| (p - y) * p).sum::<f64>())
}

/// IRMv1 invariance penalty for one domain: the squared dummy gradient.
pub fn irm_penalty(model: &LinearModel, x: &Matrix, y: &[f64]) -> Result<f64> {
    Ok(dummy_gradient(model, x, y)?.powi(2))
}

/// Gradient-descent settings for [`irm_fit`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrmConfig {
    /// Penalty weight once annealing is over.
    pub lambda: f64,
    pub steps: usize,
    pub lr: f64,
    /// Steps before this index use penalty weight 1.0.
    pub anneal_step: usize,
    /// Full-batch descent from a zero start draws no randomness; the seed is
    /// carried so that every fit in a run has a recorded stream.
    pub seed: u64,
}

impl Default for IrmConfig {
    fn default() -> Self {
        Self {
            lambda: 100.0,
            steps: 5000,
            lr: 1e-2,
            anneal_step: 500,
            seed: 0,
        }
    }
}

impl IrmConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(
                "irm.lambda must be a finite non-negative number".into(),
            ));
        }
        if self.steps == 0 {
            return Err(Error::Config("irm.steps must be at least 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::Config("irm.lr must be positive".into()));
        }
        if self.anneal_step > self.steps {
            return Err(Error::Config(
                "irm.anneal_step must not exceed irm.steps".into(),
            ));
        }
        Ok(())
    }

    /// Penalty weight and loss scale in effect at `step`.
    pub fn schedule(&self, step: usize) -> (f64, f64) {
        if step < self.anneal_step {
            (1.0, 1.0)
        } else {
            (self.lambda, 1.0 / self.lambda.max(1.0))
        }
    }
}

/// Value of the IRMv1 objective split into its two sums.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub risk_sum: f64,
    pub penalty_sum: f64,
}

impl ObjectiveValue {
    pub fn total(&self, lambda: f64) -> f64 {
        self.risk_sum + lambda * self.penalty_sum
    }
}

/// `Σ_e R_e(Φ) + λ Σ_e (∂/∂s R_e(s·Φ) at s = 1)²` for a linear `Φ` over
/// already standardized features. Parameters are packed as `[w..., b]`.
#[derive(Clone, Debug)]
pub struct IrmObjective {
    domains: Vec<(Matrix, Vec<f64>)>,
    dim: usize,
}

impl IrmObjective {
    pub fn new(domains: Vec<(Matrix, Vec<f64>)>) -> Result<Self> {
        let dim = domains.first().ok_or(Error::EmptyInput)?.0.cols();
        for (x, y) in &domains {
            check_xy(x, y)?;
            if x.cols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: x.cols(),
                });
            }
        }
        Ok(Self { domains, dim })
    }

    /// Number of packed parameters (`dim + 1`).
    pub fn n_params(&self) -> usize {
        self.dim + 1
    }

    pub fn value(&self, params: &[f64]) -> ObjectiveValue {
        self.evaluate(params, None)
    }

    /// Objective value and its gradient at penalty weight `lambda`.
    pub fn value_and_grad(&self, params: &[f64], lambda: f64) -> (ObjectiveValue, Vec<f64>) {
        let mut grad = vec![0.0; self.n_params()];
        let v = self.evaluate(params, Some((lambda, &mut grad)));
        (v, grad)
    }

    fn evaluate(&self, params: &[f64], mut grad: Option<(f64, &mut Vec<f64>)>) -> ObjectiveValue {
        let (w, b) = params.split_at(self.dim);
        let b = b[0];
        let mut out = ObjectiveValue {
            risk_sum: 0.0,
            penalty_sum: 0.0,
        };
        let mut g_risk = vec![0.0; self.n_params()];
        let mut g_dummy = vec![0.0; self.n_params()];
        for (x, y) in &self.domains {
            let m = y.len() as f64;
            let (mut r_acc, mut d_acc) = (0.0, 0.0);
            g_risk.iter_mut().for_each(|g| *g = 0.0);
            g_dummy.iter_mut().for_each(|g| *g = 0.0);
            for (row, &yi) in x.row_iter().zip(y) {
                let phi = dot(row, w) + b;
                let r = phi - yi;
                r_acc += r * r;
                d_acc += r * phi;
                if grad.is_some() {
                    // d(r²)/dθ = 2 r z̃, d(r·Φ)/dθ = (2Φ - y) z̃
                    let u = 2.0 * phi - yi;
                    for (j, &zj) in row.iter().enumerate() {
                        g_risk[j] += r * zj;
                        g_dummy[j] += u * zj;
                    }
                    g_risk[self.dim] += r;
                    g_dummy[self.dim] += u;
                }
            }
            let dummy = 2.0 * d_acc / m;
            out.risk_sum += r_acc / m;
            out.penalty_sum += dummy * dummy;
            if let Some((lambda, g)) = grad.as_mut() {
                for j in 0..g.len() {
                    g[j] += 2.0 * g_risk[j] / m + *lambda * 2.0 * dummy * (2.0 * g_dummy[j] / m);
                }
            }
        }
        out
    }
}

/// Pooled target mean and standard deviation. The optimizer works on
/// `(y - mean) / std`; a constant target gets std 1.
#[derive(Clone, Copy, Debug)]
struct TargetScale {
    mean: f64,
    std: f64,
}

impl TargetScale {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 * (1.0 + mean.abs()) {
            var.sqrt()
        } else {
            1.0
        };
        Self { mean, std }
    }

    fn forward(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    fn backward(&self, y: f64) -> f64 {
        y * self.std + self.mean
    }
}

/// Model plus the objective value recorded before every step.
#[derive(Clone, Debug)]
pub struct IrmTrace {
    pub model: LinearModel,
    /// `(penalty weight, scaled objective)` before each update.
    pub history: Vec<(f64, f64)>,
}

/// IRMv1 over the given per-domain `(x, y)` data, standardizing with the
/// pooled statistics of all domains.
pub fn irm_fit(domains: &[(&Matrix, &[f64])], cfg: &IrmConfig) -> Result<LinearModel> {
    let parts: Vec<&Matrix> = domains.iter().map(|(x, _)| *x).collect();
    irm_fit_with(domains, cfg, Standardizer::fit_pooled(&parts, &[]))
}

pub fn irm_fit_with(
    domains: &[(&Matrix, &[f64])],
    cfg: &IrmConfig,
    standardizer: Standardizer,
) -> Result<LinearModel> {
    Ok(irm_fit_trace(domains, cfg, standardizer)?.model)
}

/// Full-batch gradient descent on the IRMv1 objective from a zero start.
///
/// Before `anneal_step` the penalty weight is 1.0; afterwards it is
/// `cfg.lambda` and the whole objective is divided by `max(1, lambda)`.
/// Targets are standardized by their pooled mean and std before fitting and
/// the model is mapped back afterwards. A step of size `lr` that would raise
/// the objective is halved until it does not, so the objective never
/// increases within a phase.
pub fn irm_fit_trace(
    domains: &[(&Matrix, &[f64])],
    cfg: &IrmConfig,
    standardizer: Standardizer,
) -> Result<IrmTrace> {
    cfg.validate()?;
    if domains.is_empty() {
        return Err(Error::EmptyInput);
    }
    let target = TargetScale::fit(domains.iter().flat_map(|(_, y)| y.iter().copied()));
    let standardized = domains
        .iter()
        .map(|(x, y)| {
            if x.cols() != standardizer.dim() {
                return Err(Error::DimensionMismatch {
                    expected: standardizer.dim(),
                    actual: x.cols(),
                });
            }
            Ok((
                standardizer.transform(x),
                y.iter().map(|v| target.forward(*v)).collect(),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let objective = IrmObjective::new(standardized)?;

    let mut params = vec![0.0; objective.n_params()];
    let mut history = Vec::with_capacity(cfg.steps);
    let mut cached: Option<(f64, ObjectiveValue, Vec<f64>)> = None;
    for step in 0..cfg.steps {
        let (lambda, scale) = cfg.schedule(step);
        let (value, grad) = match cached.take() {
            Some((l, v, g)) if l == lambda => (v, g),
            _ => objective.value_and_grad(&params, lambda),
        };
        let total = value.total(lambda) * scale;
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        history.push((lambda, total));

        let mut lr = cfg.lr * scale;
        for _ in 0..MAX_STEP_HALVINGS {
            let candidate: Vec<f64> = params.iter().zip(&grad).map(|(p, g)| p - lr * g).collect();
            let (v, g) = objective.value_and_grad(&candidate, lambda);
            let t = v.total(lambda) * scale;
            if t.is_finite() && t <= total && g.iter().all(|x| x.is_finite()) {
                params = candidate;
                cached = Some((lambda, v, g));
                break;
            }
            lr *= 0.5;
        }
        if cached.is_none() {
            // no descent step exists at working precision
            break;
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite { step: cfg.steps });
    }
    let b = target.backward(params.pop().expect("intercept is the last parameter"));
    params.iter_mut().for_each(|w| *w *= target.std);
    Ok(IrmTrace {
        model: LinearModel::new(params, b, standardizer)?,
        history,
    })
}
