//! Acceptance suite. Runs every check in sequence, prints one PASS/FAIL line
//! each, and exits non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use irm_ite_core::datagen::{
    build_covariances, gen_features, generate, FeatureModel, GenSpec, OutcomeModel,
};
use irm_ite_core::domains::DomainAssignment;
use irm_ite_core::evaluation::{evaluate_estimator, group_classification_accuracy};
use irm_ite_core::harness::{
    run_all, sweep_accuracy, EstimatorKind, ExperimentConfig, ResultRecord,
};
use irm_ite_core::learners::{
    irm_fit, irm_penalty, risk, IrmConfig, IrmObjective, LinearModel, Standardizer,
    DEFAULT_OLS_RIDGE,
};
use irm_ite_core::metalearners::{fit_s_learner, fit_t_learner, BaseLearner};
use irm_ite_core::numerics::{sample_normal, sample_uniform, Matrix, Rng};

type Check = (&'static str, fn() -> Outcome, Duration);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn nalgebra_ols(x: &Matrix, y: &[f64]) -> (Vec<f64>, f64) {
    let (n, d) = (x.rows(), x.cols());
    let a = DMatrix::from_fn(n, d + 1, |i, j| if j < d { x[(i, j)] } else { 1.0 });
    let beta = a
        .svd(true, true)
        .solve(&DVector::from_column_slice(y), 1e-14)
        .unwrap();
    (beta.as_slice()[..d].to_vec(), beta[d])
}

/// λ = 0 with one domain must land on the least-squares solution.
fn optimizer_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    for inst in 0..20u64 {
        let d = [1, 2, 5, 10, 20][inst as usize % 5];
        let mut rng = Rng::new(1000 + inst);
        let x = Matrix::from_vec(200, d, sample_normal(&mut rng, 200 * d)).unwrap();
        let w = sample_uniform(&mut rng, -2.0, 2.0, d);
        let y: Vec<f64> = x
            .row_iter()
            .map(|r| irm_ite_core::numerics::dot(r, &w) + 0.5 + rng.next_normal())
            .collect();
        let (w_ols, b_ols) = nalgebra_ols(&x, &y);
        let cfg = IrmConfig {
            lambda: 0.0,
            ..IrmConfig::default()
        };
        let (w_irm, b_irm) = irm_fit(&[(&x, y.as_slice())], &cfg)
            .unwrap()
            .raw_coefficients();
        let diff = w_ols
            .iter()
            .zip(&w_irm)
            .map(|(a, b)| (a - b).abs())
            .fold((b_ols - b_irm).abs(), f64::max);
        worst = worst.max(diff);
    }
    check(
        worst <= 1e-3,
        format!("max |coef IRM(λ=0) - OLS| = {worst:.3e} over 20 instances (tol 1e-3)"),
    )
}

fn random_domains(rng: &mut Rng) -> Vec<(Matrix, Vec<f64>)> {
    let n_e = 1 + rng.next_below(4);
    let p = 1 + rng.next_below(6);
    (0..n_e)
        .map(|_| {
            let m = 3 + rng.next_below(18);
            let x = Matrix::from_vec(m, p, sample_normal(rng, m * p)).unwrap();
            let y = sample_normal(rng, m);
            (x, y)
        })
        .collect()
}

/// Analytic penalty and objective gradient against central differences.
fn penalty_gradient() -> Outcome {
    let mut worst_pen: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    for inst in 0..50u64 {
        let mut rng = Rng::new(2000 + inst);
        let domains = random_domains(&mut rng);
        let p = domains[0].0.cols();
        let params = sample_uniform(&mut rng, -1.0, 1.0, p + 1);
        let lambda = sample_uniform(&mut rng, 0.0, 100.0, 1)[0];

        let model = |s: f64| {
            let w = params[..p].iter().map(|v| v * s).collect();
            LinearModel::new(w, params[p] * s, Standardizer::identity(p)).unwrap()
        };
        for (x, y) in &domains {
            let h = 1e-5;
            let fd = (risk(&model(1.0 + h), x, y).unwrap() - risk(&model(1.0 - h), x, y).unwrap())
                / (2.0 * h);
            let pen = irm_penalty(&model(1.0), x, y).unwrap();
            worst_pen = worst_pen.max((pen - fd * fd).abs() / pen.max(1e-8));
        }

        let obj = IrmObjective::new(domains).unwrap();
        let (_, grad) = obj.value_and_grad(&params, lambda);
        let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs())).max(1e-8);
        for j in 0..params.len() {
            let h = 1e-6 * params[j].abs().max(1.0);
            let mut up = params.clone();
            let mut dn = params.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (obj.value(&up).total(lambda) - obj.value(&dn).total(lambda)) / (2.0 * h);
            worst_grad = worst_grad.max((grad[j] - fd).abs() / gmax);
        }
    }
    check(
        worst_pen <= 1e-5 && worst_grad <= 1e-5,
        format!("penalty rel err {worst_pen:.2e}, gradient rel err {worst_grad:.2e} over 50 instances (tol 1e-5)"),
    )
}

/// Trace, symmetry, group means and the factual/effect identities.
fn generator_statistics() -> Outcome {
    let mut trace_err: f64 = 0.0;
    let mut asym: f64 = 0.0;
    let mut mean_err: f64 = 0.0;
    let mut identities = true;
    for (k, d) in [5usize, 10, 20, 35, 50].into_iter().enumerate() {
        let cov = build_covariances(&mut Rng::new(3000 + k as u64), d).unwrap();
        for s in [&cov.sigma_a, &cov.sigma_0, &cov.sigma_1] {
            trace_err = trace_err.max((s.trace() - 1.0).abs());
            asym = asym.max(s.max_asymmetry());
        }
        for fm in [FeatureModel::ModelA, FeatureModel::ModelB] {
            let spec = GenSpec::symmetric(d, fm, OutcomeModel::Linear, 1.0);
            let n = 10_000;
            let t: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
            let x = gen_features(&mut Rng::new(3100 + k as u64), &spec, &cov, &t).unwrap();
            for arm in [0u8, 1] {
                let rows: Vec<usize> = (0..n).filter(|&i| t[i] == arm).collect();
                for j in 0..d {
                    let m = rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / rows.len() as f64;
                    mean_err = mean_err.max((m - spec.mean(arm)[j]).abs());
                }
            }
            for om in [OutcomeModel::Linear, OutcomeModel::Quadratic] {
                let spec = GenSpec::symmetric(d, fm, om, 0.1);
                let g = generate(3200 + k as u64, &spec, 400, 100).unwrap();
                for ds in [&g.train, &g.test] {
                    let o = ds.oracle.as_ref().unwrap();
                    for i in 0..ds.len() {
                        let factual = if ds.t[i] == 1 { o.y1[i] } else { o.y0[i] };
                        identities &= ds.y_f[i] == factual && o.ite[i] == o.y1[i] - o.y0[i];
                    }
                }
            }
        }
    }
    check(
        trace_err <= 1e-9 && asym <= 1e-10 && mean_err <= 0.1 && identities,
        format!(
            "trace err {trace_err:.1e}, asymmetry {asym:.1e}, max group-mean err {mean_err:.3} at n=1e4, identities hold: {identities}"
        ),
    )
}

/// Noiseless linear truth is recovered exactly by both least-squares learners.
fn realizable_recovery() -> Outcome {
    let mut worst: f64 = 0.0;
    let ols = BaseLearner::Ols {
        ridge: DEFAULT_OLS_RIDGE,
    };
    for seed in 0..10u64 {
        let fm = if seed % 2 == 0 {
            FeatureModel::ModelA
        } else {
            FeatureModel::ModelB
        };
        let mut spec = GenSpec::symmetric(10, fm, OutcomeModel::Linear, 1.0);
        spec.sigma_noise = 0.0;
        let g = generate(4000 + seed, &spec, 200, 100).unwrap();
        let single = DomainAssignment::single(g.train.len());
        for est in [
            fit_t_learner(&g.train, &single, &ols).unwrap(),
            fit_s_learner(&g.train, &single, &ols).unwrap(),
        ] {
            worst = worst.max(evaluate_estimator(&est, &g.test).unwrap().sqrt_pehe);
        }
    }
    check(
        worst <= 1e-5,
        format!("max sqrt(PEHE) {worst:.2e} over 10 seeds (tol 1e-5)"),
    )
}

fn mean_pehe(records: &[ResultRecord], est: EstimatorKind) -> f64 {
    let v: Vec<f64> = records
        .iter()
        .filter(|r| r.estimator == est)
        .map(|r| r.sqrt_pehe.expect("no failed rows"))
        .collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn default_sized_config(
    fm: FeatureModel,
    om: OutcomeModel,
    d: usize,
    separation: f64,
) -> ExperimentConfig {
    ExperimentConfig::new(GenSpec::symmetric(d, fm, om, separation))
}

/// Quadratic outcomes, d = 35, means ±0.1: the IRM T-learner beats both
/// least-squares baselines for both feature models.
fn quadratic_low_mismatch() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for fm in [FeatureModel::ModelA, FeatureModel::ModelB] {
        let recs = run_all(&default_sized_config(fm, OutcomeModel::Quadratic, 35, 0.1)).unwrap();
        let irm = mean_pehe(&recs, EstimatorKind::Irm2);
        let lr2 = mean_pehe(&recs, EstimatorKind::OlsLr2);
        let lr1 = mean_pehe(&recs, EstimatorKind::OlsLr1);
        pass &= irm < lr2 && irm < lr1;
        parts.push(format!(
            "{fm:?}: IRM2 {irm:.4} vs OLS_LR2 {lr2:.4}, OLS_LR1 {lr1:.4}"
        ));
    }
    check(pass, parts.join("; "))
}

/// Linear outcomes, d = 50, means ±1, model A.
fn linear_high_dimension() -> Outcome {
    let recs = run_all(&default_sized_config(
        FeatureModel::ModelA,
        OutcomeModel::Linear,
        50,
        1.0,
    ))
    .unwrap();
    let irm = mean_pehe(&recs, EstimatorKind::Irm2);
    let lr2 = mean_pehe(&recs, EstimatorKind::OlsLr2);
    let lr1 = mean_pehe(&recs, EstimatorKind::OlsLr1);
    check(
        irm < lr2 && irm < lr1,
        format!("IRM2 {irm:.4} vs OLS_LR2 {lr2:.4}, OLS_LR1 {lr1:.4}"),
    )
}

/// The OLS-minus-IRM gap grows from the least to the most separable groups.
fn accuracy_trend() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for fm in [FeatureModel::ModelA, FeatureModel::ModelB] {
        let mut cfg = default_sized_config(fm, OutcomeModel::Quadratic, 35, 0.1);
        cfg.estimators = vec![EstimatorKind::Irm2, EstimatorKind::OlsLr2];
        let grid = cfg.default_separations();
        let recs = sweep_accuracy(&cfg, &grid).unwrap();
        // (accuracy, OLS_LR2 - IRM2) per sweep point, in grid order.
        let points: Vec<(f64, f64)> = grid
            .iter()
            .map(|&s| {
                let at: Vec<ResultRecord> =
                    recs.iter().filter(|r| r.x_value == s).cloned().collect();
                let acc =
                    at.iter().filter_map(|r| r.measured_accuracy).sum::<f64>() / at.len() as f64;
                (
                    acc,
                    mean_pehe(&at, EstimatorKind::OlsLr2) - mean_pehe(&at, EstimatorKind::Irm2),
                )
            })
            .collect();
        let hi = points
            .iter()
            .copied()
            .reduce(|a, b| if b.0 >= a.0 { b } else { a })
            .unwrap();
        let lo = points
            .iter()
            .copied()
            .reduce(|a, b| if b.0 < a.0 { b } else { a })
            .unwrap();
        pass &= hi.0 >= 0.95 && lo.0 <= 0.6 && hi.1 > lo.1;
        parts.push(format!(
            "{fm:?}: gap {:.4} at accuracy {:.3} vs {:.4} at accuracy {:.3}",
            hi.1, hi.0, lo.1, lo.0
        ));
    }
    check(pass, parts.join("; "))
}

/// One-dimensional equal-variance groups: the probe approaches the Bayes rate.
fn probe_bayes_rate() -> Outcome {
    let phi = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (k, half_gap) in [0.1, 0.25, 0.5, 1.0].into_iter().enumerate() {
        let spec = GenSpec::symmetric(1, FeatureModel::ModelA, OutcomeModel::Linear, half_gap);
        let cov = build_covariances(&mut Rng::new(5000 + k as u64), 1).unwrap();
        let sd = cov.sigma_a[(0, 0)].sqrt();
        let bayes = phi.cdf(2.0 * half_gap / 2.0 / sd);
        let acc =
            group_classification_accuracy(&mut Rng::new(5100 + k as u64), &spec, &cov, 10_000)
                .unwrap();
        worst = worst.max((acc - bayes).abs());
        parts.push(format!("{acc:.3}/{bayes:.3}"));
    }
    check(
        worst <= 0.03,
        format!(
            "measured/Bayes {} (max gap {worst:.4}, tol 0.03)",
            parts.join(", ")
        ),
    )
}

/// The dimension sweep and its chart are byte-identical across reruns.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("config.json");
    std::fs::write(
        &cfg_path,
        r#"{"spec":{"d":35,"feature_model":"ModelA","outcome_model":"Quadratic","mu0":-0.1,"mu1":0.1},"root_seed":7}"#,
    )
    .unwrap();
    let bin = env!("CARGO_BIN_EXE_irm-ite");
    let mut csvs = Vec::new();
    let mut svgs = Vec::new();
    for run in 0..2 {
        let csv = dir.path().join(format!("dim{run}.csv"));
        let svg = dir.path().join(format!("dim{run}.svg"));
        let status = Command::new(bin)
            .args(["sweep-dimension", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&csv)
            .status()
            .unwrap();
        if !status.success() {
            return check(false, format!("sweep-dimension exited with {status}"));
        }
        let status = Command::new(bin)
            .arg("plot")
            .arg(&csv)
            .args(["--kind", "dimension", "--out"])
            .arg(&svg)
            .status()
            .unwrap();
        if !status.success() {
            return check(false, format!("plot exited with {status}"));
        }
        csvs.push(std::fs::read(&csv).unwrap());
        svgs.push(std::fs::read(&svg).unwrap());
    }
    let rows = csvs[0].iter().filter(|&&b| b == b'\n').count() - 1;
    check(
        csvs[0] == csvs[1] && svgs[0] == svgs[1],
        format!(
            "{rows} CSV rows; CSV identical: {}, SVG identical: {}",
            csvs[0] == csvs[1],
            svgs[0] == svgs[1]
        ),
    )
}

fn main() -> ExitCode {
    let checks: [Check; 9] = [
        (
            "optimizer_equivalence",
            optimizer_equivalence,
            Duration::from_secs(30),
        ),
        (
            "penalty_gradient",
            penalty_gradient,
            Duration::from_secs(10),
        ),
        (
            "generator_statistics",
            generator_statistics,
            Duration::from_secs(30),
        ),
        (
            "realizable_recovery",
            realizable_recovery,
            Duration::from_secs(10),
        ),
        (
            "quadratic_low_mismatch",
            quadratic_low_mismatch,
            Duration::from_secs(300),
        ),
        (
            "linear_high_dimension",
            linear_high_dimension,
            Duration::from_secs(300),
        ),
        ("accuracy_trend", accuracy_trend, Duration::from_secs(900)),
        (
            "probe_bayes_rate",
            probe_bayes_rate,
            Duration::from_secs(10),
        ),
        ("determinism", determinism, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (name, run, budget) in checks {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let pass = out.pass && elapsed <= budget;
        failed += usize::from(!pass);
        println!(
            "{} {name}: {} [{:.1}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 9 passed", 9 - failed);
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
