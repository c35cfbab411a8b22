//! Synthetic observational data: treatment first, then features conditional on
//! treatment, then both potential outcomes conditional on features.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    cholesky, dot, random_orthonormal, sample_bernoulli, sample_normal, sample_uniform, Matrix, Rng,
};

/// Attempts at drawing a training treatment vector with populated groups.
pub const MAX_TREATMENT_REDRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureModel {
    /// `x | t ~ N(mu_t, Sigma)`.
    ModelA,
    /// `x | t ~ 0.5 N(mu_t, Sigma_0) + 0.5 N(mu_t, Sigma_1)`.
    ModelB,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeModel {
    Linear,
    Quadratic,
}

/// One synthetic generation scheme.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGenSpec")]
pub struct GenSpec {
    pub d: usize,
    pub feature_model: FeatureModel,
    pub outcome_model: OutcomeModel,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub sigma_noise: f64,
    pub coeff_lo: f64,
    pub coeff_hi: f64,
    pub treatment_p: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum MeanValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl MeanValue {
    fn resolve(self, d: usize) -> Vec<f64> {
        match self {
            MeanValue::Scalar(v) => vec![v; d],
            MeanValue::Vector(v) => v,
        }
    }
}

fn default_sigma() -> f64 {
    1.0
}
fn default_coeff_hi() -> f64 {
    1.0
}
fn default_treatment_p() -> f64 {
    0.5
}

// Config files may give a mean as one number, broadcast over all coordinates.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenSpec {
    d: usize,
    feature_model: FeatureModel,
    outcome_model: OutcomeModel,
    mu0: MeanValue,
    mu1: MeanValue,
    #[serde(default = "default_sigma")]
    sigma_noise: f64,
    #[serde(default)]
    coeff_lo: f64,
    #[serde(default = "default_coeff_hi")]
    coeff_hi: f64,
    #[serde(default = "default_treatment_p")]
    treatment_p: f64,
}

impl TryFrom<RawGenSpec> for GenSpec {
    type Error = Error;

    fn try_from(raw: RawGenSpec) -> Result<Self> {
        let spec = GenSpec {
            d: raw.d,
            feature_model: raw.feature_model,
            outcome_model: raw.outcome_model,
            mu0: raw.mu0.resolve(raw.d),
            mu1: raw.mu1.resolve(raw.d),
            sigma_noise: raw.sigma_noise,
            coeff_lo: raw.coeff_lo,
            coeff_hi: raw.coeff_hi,
            treatment_p: raw.treatment_p,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl GenSpec {
    /// Symmetric scheme with `mu0 = -separation * 1`, `mu1 = +separation * 1`,
    /// unit noise and the default coefficient interval `[0, 1)`.
    pub fn symmetric(
        d: usize,
        feature_model: FeatureModel,
        outcome_model: OutcomeModel,
        separation: f64,
    ) -> Self {
        GenSpec {
            d,
            feature_model,
            outcome_model,
            mu0: vec![-separation; d],
            mu1: vec![separation; d],
            sigma_noise: 1.0,
            coeff_lo: 0.0,
            coeff_hi: 1.0,
            treatment_p: 0.5,
        }
    }

    /// Same scheme at a new dimension and symmetric separation.
    pub fn resized(&self, d: usize, separation: f64) -> Self {
        GenSpec {
            d,
            mu0: vec![-separation; d],
            mu1: vec![separation; d],
            ..self.clone()
        }
    }

    pub fn mean(&self, t: u8) -> &[f64] {
        if t == 1 {
            &self.mu1
        } else {
            &self.mu0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.mu0.len() != self.d || self.mu1.len() != self.d {
            return bad(format!(
                "mu0/mu1 must have length d={} (got {} and {})",
                self.d,
                self.mu0.len(),
                self.mu1.len()
            ));
        }
        if self.sigma_noise.is_nan() || self.sigma_noise < 0.0 {
            return bad("sigma_noise must be non-negative".into());
        }
        if self.coeff_lo.partial_cmp(&self.coeff_hi) != Some(std::cmp::Ordering::Less) {
            return bad("coeff_lo must be below coeff_hi".into());
        }
        if !(self.treatment_p > 0.0 && self.treatment_p < 1.0) {
            return bad("treatment_p must lie strictly between 0 and 1".into());
        }
        Ok(())
    }
}

/// Covariances for both feature models together with the eigen-factors they
/// were assembled from.
#[derive(Clone, Debug)]
pub struct CovarianceSet {
    pub sigma_a: Matrix,
    pub sigma_0: Matrix,
    pub sigma_1: Matrix,
    pub q_a: Matrix,
    pub q_b: Matrix,
    pub lambda_a: Vec<f64>,
    pub lambda_0: Vec<f64>,
    pub lambda_1: Vec<f64>,
}

impl CovarianceSet {
    pub fn dim(&self) -> usize {
        self.sigma_a.rows()
    }

    /// Covariance set with the same matrix for every component. Useful for
    /// hand-built scenarios.
    pub fn uniform(sigma: Matrix) -> Self {
        let d = sigma.rows();
        CovarianceSet {
            sigma_a: sigma.clone(),
            sigma_0: sigma.clone(),
            sigma_1: sigma,
            q_a: Matrix::identity(d),
            q_b: Matrix::identity(d),
            lambda_a: Vec::new(),
            lambda_0: Vec::new(),
            lambda_1: Vec::new(),
        }
    }
}

fn unit_sum_eigenvalues(rng: &mut Rng, d: usize, descending: bool) -> Vec<f64> {
    let mut lambda = sample_uniform(rng, 0.0, 1.0, d);
    let total: f64 = lambda.iter().sum();
    for v in &mut lambda {
        *v /= total;
    }
    lambda.sort_by(f64::total_cmp);
    if descending {
        lambda.reverse();
    }
    lambda
}

fn assemble(q: &Matrix, lambda: &[f64]) -> Result<Matrix> {
    let ql = q.matmul(&Matrix::from_diag(lambda))?;
    Ok(ql.matmul(&q.transpose())?.symmetrized())
}

/// Draws `Sigma = Q_A Λ Q_Aᵀ`, `Sigma_0 = Q_B Λ_0 Q_Bᵀ` and
/// `Sigma_1 = Q_B Λ_1 Q_Bᵀ` with unit-trace eigenvalues; `Λ` and `Λ_0`
/// ascending, `Λ_1` descending.
pub fn build_covariances(rng: &mut Rng, d: usize) -> Result<CovarianceSet> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    let lambda_a = unit_sum_eigenvalues(&mut rng.split("lambda_a"), d, false);
    let lambda_0 = unit_sum_eigenvalues(&mut rng.split("lambda_0"), d, false);
    let lambda_1 = unit_sum_eigenvalues(&mut rng.split("lambda_1"), d, true);
    let q_a = random_orthonormal(&mut rng.split("q_a"), d)?;
    let q_b = random_orthonormal(&mut rng.split("q_b"), d)?;
    Ok(CovarianceSet {
        sigma_a: assemble(&q_a, &lambda_a)?,
        sigma_0: assemble(&q_b, &lambda_0)?,
        sigma_1: assemble(&q_b, &lambda_1)?,
        q_a,
        q_b,
        lambda_a,
        lambda_0,
        lambda_1,
    })
}

pub fn gen_treatment(rng: &mut Rng, n: usize, p: f64) -> Vec<u8> {
    sample_bernoulli(rng, p, n)
}

/// One feature row per treatment entry, drawn from the scheme's feature model.
pub fn gen_features(
    rng: &mut Rng,
    spec: &GenSpec,
    cov: &CovarianceSet,
    t: &[u8],
) -> Result<Matrix> {
    let d = spec.d;
    for m in [&cov.sigma_a, &cov.sigma_0, &cov.sigma_1] {
        if m.rows() != d || m.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: m.rows(),
            });
        }
    }
    let factors = match spec.feature_model {
        FeatureModel::ModelA => vec![cholesky(&cov.sigma_a)?],
        FeatureModel::ModelB => vec![cholesky(&cov.sigma_0)?, cholesky(&cov.sigma_1)?],
    };
    let mut x = Matrix::zeros(t.len(), d);
    for (i, &ti) in t.iter().enumerate() {
        let l = match spec.feature_model {
            FeatureModel::ModelA => &factors[0],
            FeatureModel::ModelB => &factors[usize::from(rng.next_f64() < 0.5)],
        };
        let z = sample_normal(rng, d);
        let mu = spec.mean(ti);
        let row = x.row_mut(i);
        for r in 0..d {
            row[r] = mu[r] + dot(&l.row(r)[..=r], &z[..=r]);
        }
    }
    Ok(x)
}

/// Coefficients of the two potential-outcome mean functions.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeParams {
    /// Quadratic terms; `None` for linear outcomes.
    pub a0: Option<Matrix>,
    pub a1: Option<Matrix>,
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    pub c0: f64,
    pub c1: f64,
}

impl OutcomeParams {
    /// Noise-free mean of the potential outcome under arm `t`.
    pub fn mean_outcome(&self, t: u8, x: &[f64]) -> f64 {
        let (a, b, c) = if t == 1 {
            (&self.a1, &self.b1, self.c1)
        } else {
            (&self.a0, &self.b0, self.c0)
        };
        let quad = a.as_ref().map_or(0.0, |a| {
            x.iter()
                .enumerate()
                .map(|(i, xi)| xi * dot(a.row(i), x))
                .sum::<f64>()
        });
        quad + dot(x, b) + c
    }

    pub fn dim(&self) -> usize {
        self.b0.len()
    }
}

pub fn gen_outcome_params(rng: &mut Rng, spec: &GenSpec) -> OutcomeParams {
    let (lo, hi, d) = (spec.coeff_lo, spec.coeff_hi, spec.d);
    let c = sample_uniform(rng, lo, hi, 2);
    let b0 = sample_uniform(rng, lo, hi, d);
    let b1 = sample_uniform(rng, lo, hi, d);
    let (a0, a1) = match spec.outcome_model {
        OutcomeModel::Linear => (None, None),
        OutcomeModel::Quadratic => {
            let a0 =
                Matrix::from_vec(d, d, sample_uniform(rng, lo, hi, d * d)).expect("length is d*d");
            let a1 =
                Matrix::from_vec(d, d, sample_uniform(rng, lo, hi, d * d)).expect("length is d*d");
            (Some(a0), Some(a1))
        }
    };
    OutcomeParams {
        a0,
        a1,
        b0,
        b1,
        c0: c[0],
        c1: c[1],
    }
}

/// Both potential outcomes and the effect they imply. Only generated data
/// carries these.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialOutcomes {
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub ite: Vec<f64>,
}

/// Factual outcomes plus the oracle potential outcomes.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcomes {
    pub y_f: Vec<f64>,
    pub potential: PotentialOutcomes,
}

/// Draws `y0` and `y1` for every row with independent `N(0, sigma²)` noise
/// and selects the factual outcome by `t`.
pub fn gen_outcomes(
    rng: &mut Rng,
    spec: &GenSpec,
    params: &OutcomeParams,
    x: &Matrix,
    t: &[u8],
) -> Result<Outcomes> {
    if x.rows() != t.len() {
        return Err(Error::LengthMismatch {
            left: x.rows(),
            right: t.len(),
        });
    }
    if x.cols() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            actual: x.cols(),
        });
    }
    let n = t.len();
    let sigma = spec.sigma_noise;
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for row in x.row_iter() {
        y0.push(params.mean_outcome(0, row) + sigma * rng.next_normal());
        y1.push(params.mean_outcome(1, row) + sigma * rng.next_normal());
    }
    let y_f = t
        .iter()
        .enumerate()
        .map(|(i, &ti)| if ti == 1 { y1[i] } else { y0[i] })
        .collect();
    let ite = y1.iter().zip(&y0).map(|(a, b)| a - b).collect();
    Ok(Outcomes {
        y_f,
        potential: PotentialOutcomes { y0, y1, ite },
    })
}

/// Observational dataset: features, binary treatment and factual outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub t: Vec<u8>,
    pub y_f: Vec<f64>,
    pub oracle: Option<PotentialOutcomes>,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        t: Vec<u8>,
        y_f: Vec<f64>,
        oracle: Option<PotentialOutcomes>,
    ) -> Result<Self> {
        let n = x.rows();
        for len in [t.len(), y_f.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    left: n,
                    right: len,
                });
            }
        }
        if let Some(o) = &oracle {
            for len in [o.y0.len(), o.y1.len(), o.ite.len()] {
                if len != n {
                    return Err(Error::LengthMismatch {
                        left: n,
                        right: len,
                    });
                }
            }
        }
        if t.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("treatment must be 0 or 1".into()));
        }
        Ok(Dataset { x, t, y_f, oracle })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn group_size(&self, arm: u8) -> usize {
        self.t.iter().filter(|&&v| v == arm).count()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let pick_f = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset {
            x: self.x.select_rows(indices),
            t: indices.iter().map(|&i| self.t[i]).collect(),
            y_f: pick_f(&self.y_f),
            oracle: self.oracle.as_ref().map(|o| PotentialOutcomes {
                y0: pick_f(&o.y0),
                y1: pick_f(&o.y1),
                ite: pick_f(&o.ite),
            }),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=self.dim()).map(|j| format!("x{j}")).collect();
        header.extend(["t", "y_f"].map(String::from));
        if self.oracle.is_some() {
            header.extend(["y0", "y1", "ite"].map(String::from));
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| fmt_f64(*v)).collect();
            rec.push(self.t[i].to_string());
            rec.push(fmt_f64(self.y_f[i]));
            if let Some(o) = &self.oracle {
                rec.extend([o.y0[i], o.y1[i], o.ite[i]].map(fmt_f64));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Reads `x1,…,xd,t,y_f[,y0,y1,ite]`. The oracle columns are optional.
    pub fn read_csv<R: Read>(input: R) -> Result<Dataset> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let names: Vec<&str> = header.iter().collect();
        let d = names
            .iter()
            .enumerate()
            .take_while(|(j, name)| **name == format!("x{}", j + 1))
            .count();
        let rest = &names[d..];
        let has_oracle = match rest {
            ["t", "y_f"] => false,
            ["t", "y_f", "y0", "y1", "ite"] => true,
            _ => {
                return Err(Error::Schema(format!(
                    "expected header x1..xd,t,y_f[,y0,y1,ite], got {}",
                    names.join(",")
                )))
            }
        };
        let mut xs = Vec::new();
        let (mut t, mut y_f) = (Vec::new(), Vec::new());
        let (mut y0, mut y1, mut ite) = (Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |j: usize| -> Result<f64> {
                rec.get(j)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::Schema(format!("row {}: bad value in column {}", line + 1, j + 1))
                    })
            };
            for j in 0..d {
                xs.push(num(j)?);
            }
            t.push(match rec.get(d).map(str::trim) {
                Some("0") => 0,
                Some("1") => 1,
                _ => {
                    return Err(Error::Schema(format!(
                        "row {}: treatment must be 0 or 1",
                        line + 1
                    )))
                }
            });
            y_f.push(num(d + 1)?);
            if has_oracle {
                y0.push(num(d + 2)?);
                y1.push(num(d + 3)?);
                ite.push(num(d + 4)?);
            }
        }
        let n = t.len();
        let oracle = has_oracle.then_some(PotentialOutcomes { y0, y1, ite });
        Dataset::new(Matrix::from_vec(n, d, xs)?, t, y_f, oracle)
    }
}

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Everything one call to [`generate`] draws.
#[derive(Clone, Debug)]
pub struct Generated {
    pub train: Dataset,
    pub test: Dataset,
    pub params: OutcomeParams,
    pub cov: CovarianceSet,
}

/// Smallest treatment group a training set may have at dimension `d`.
pub fn min_group_size(d: usize) -> usize {
    d / 2 + 2
}

fn sample_dataset(
    rng: &Rng,
    spec: &GenSpec,
    cov: &CovarianceSet,
    params: &OutcomeParams,
    n: usize,
    min_group: Option<usize>,
) -> Result<Dataset> {
    let mut t = gen_treatment(&mut rng.split("treatment"), n, spec.treatment_p);
    if let Some(min) = min_group {
        let ok = |t: &[u8]| {
            let ones = t.iter().filter(|&&v| v == 1).count();
            ones >= min && n - ones >= min
        };
        let mut retry = 0;
        while !ok(&t) {
            retry += 1;
            if retry > MAX_TREATMENT_REDRAWS {
                return Err(Error::DegenerateGroups {
                    retries: MAX_TREATMENT_REDRAWS,
                    required: min,
                });
            }
            t = gen_treatment(
                &mut rng.split_indexed("treatment/retry", retry),
                n,
                spec.treatment_p,
            );
        }
    }
    let x = gen_features(&mut rng.split("features"), spec, cov, &t)?;
    let out = gen_outcomes(&mut rng.split("outcomes"), spec, params, &x, &t)?;
    Dataset::new(x, t, out.y_f, Some(out.potential))
}

/// Draws one covariance set and one outcome parameter set, then an i.i.d.
/// train and test sample from the scheme. The training treatment vector is
/// redrawn until both groups have at least [`min_group_size`] rows.
pub fn generate(root_seed: u64, spec: &GenSpec, n_tr: usize, n_te: usize) -> Result<Generated> {
    spec.validate()?;
    if n_tr == 0 || n_te == 0 {
        return Err(Error::InvalidArgument(
            "n_tr and n_te must be at least 1".into(),
        ));
    }
    let root = Rng::new(root_seed);
    let cov = build_covariances(&mut root.split("covariance"), spec.d)?;
    let params = gen_outcome_params(&mut root.split("params"), spec);
    let train = sample_dataset(
        &root.split("train"),
        spec,
        &cov,
        &params,
        n_tr,
        Some(min_group_size(spec.d)),
    )?;
    let test = sample_dataset(&root.split("test"), spec, &cov, &params, n_te, None)?;
    Ok(Generated {
        train,
        test,
        params,
        cov,
    })
}
