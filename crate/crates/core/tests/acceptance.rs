//! End-to-end acceptance checks for the assimilation toolkit. Each test
//! prints a single PASS/FAIL line so the suite doubles as a release gate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use assim::config::{parse_config, ExperimentConfig};
use assim::ensemble_ops::gaspari_cohn;
use assim::error_models::{ErrorSpace, GaussianErrorModel};
use assim::filters::{
    denkf_analysis, enkf_analysis, etkf_analysis, kf_analysis, pf_analysis, Algorithm,
    FilterConfig,
};
use assim::harness::{emit_run, emit_sweep, run_experiment, run_sweep, SweepSpec};
use assim::la::{Covariance, Ensemble};
use assim::metrics::{
    fit_beta, kl_beta_to_uniform, rank_of_truth, BetaFit, RankHistogram,
};
use assim::models::{integrate, Lorenz96, SelectionOperator};
use assim::variational::{fourdvar_cost_grad, gradient_check, VarProblem, WindowObservation};

fn check(name: &str, ok: bool, detail: &str) {
    println!("acceptance {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn benchmark_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/lorenz96_denkf_benchmark.cfg");
    let text = std::fs::read_to_string(path).expect("benchmark config");
    parse_config(&text).expect("benchmark config parses")
}

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("assim-acceptance-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn benchmark_denkf_accuracy_and_runtime() {
    let cfg = benchmark_config();
    assert_eq!(cfg.model.name, "lorenz96");
    assert_eq!(cfg.model.n_state, 40);
    assert_eq!(cfg.model.forcing, 8.0);
    assert_eq!(cfg.model.step_size, 0.005);
    assert_eq!(cfg.truth.obs_stride, 2);
    assert_eq!(cfg.truth.obs_interval_steps, 20);
    assert_eq!(cfg.truth.cycles, 300);
    assert_eq!(cfg.filter.algorithm, Algorithm::Denkf);
    assert_eq!(cfg.filter.n_ens, 25);
    assert_eq!(cfg.filter.inflation, 1.04);
    assert_eq!(cfg.filter.localization_radius, 4.0);
    assert_eq!(cfg.run.testing_window_start, 100);

    let start = Instant::now();
    let summary = run_experiment(&cfg).unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    check(
        "1a benchmark analysis error",
        summary.avg_analysis_rmse < 0.65,
        &format!("avg analysis rmse {:.4} < 0.65", summary.avg_analysis_rmse),
    );
    check(
        "1b benchmark beats free run",
        summary.avg_analysis_rmse < summary.avg_free_run_rmse / 3.0,
        &format!(
            "analysis {:.4} vs free run / 3 = {:.4}",
            summary.avg_analysis_rmse,
            summary.avg_free_run_rmse / 3.0
        ),
    );
    check(
        "1c benchmark runtime",
        elapsed < 60.0,
        &format!("{elapsed:.2}s single-threaded < 60s"),
    );
}

fn inflation_grid() -> Vec<f64> {
    (0..=12).map(|k| 1.0 + 0.01 * k as f64).collect()
}

#[test]
fn sweep_argmin_inflation_in_expected_band() {
    let start = Instant::now();
    let spec = SweepSpec {
        base: benchmark_config(),
        inflation_grid: inflation_grid(),
        ensemble_grid: vec![20],
        divergence_threshold: 0.65,
    };
    let table = run_sweep(&spec, 8);
    let elapsed = start.elapsed().as_secs_f64();
    let (n, best, _) = table.argmin[0];
    assert_eq!(n, 20);
    let best_infl = table.rows[best.expect("non-diverged cell")].inflation;
    check(
        "2a sweep argmin inflation",
        (1.0 - 1e-9..=1.09 + 1e-9).contains(&best_infl),
        &format!("n_ens=20 argmin inflation {best_infl} in [1.00, 1.09]"),
    );
    check(
        "2b sweep runtime",
        elapsed < 900.0,
        &format!("{elapsed:.1}s at 8-way parallelism < 900s"),
    );
}

#[test]
fn larger_ensemble_does_not_hurt_best_error() {
    let spec = SweepSpec {
        base: benchmark_config(),
        inflation_grid: inflation_grid(),
        ensemble_grid: vec![5, 40],
        divergence_threshold: 0.65,
    };
    let table = run_sweep(&spec, 8);
    let best_rmse = |slot: usize| {
        let (_, best, _) = table.argmin[slot];
        table.rows[best.expect("non-diverged cell")].avg_rmse
    };
    let (small, large) = (best_rmse(0), best_rmse(1));
    check(
        "3 ensemble size benefit",
        large <= small,
        &format!("best rmse n_ens=40 {large:.4} <= n_ens=5 {small:.4}"),
    );
}

/// Posterior mean and variance for a 2-variable Gaussian prior with one
/// observed component, computed by brute-force grid quadrature.
fn bayes_grid_oracle(
    xb: &DVector<f64>,
    b: &DMatrix<f64>,
    y: f64,
    r: f64,
) -> (DVector<f64>, DVector<f64>) {
    let binv = b.clone().try_inverse().unwrap();
    let n = 401;
    let span = 6.0;
    let (s0, s1) = (b[(0, 0)].sqrt(), b[(1, 1)].sqrt());
    let mut w_sum = 0.0;
    let mut m = [0.0f64; 2];
    let mut m2 = [0.0f64; 2];
    for i in 0..n {
        let x0 = xb[0] - span * s0 + 2.0 * span * s0 * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let x1 = xb[1] - span * s1 + 2.0 * span * s1 * j as f64 / (n - 1) as f64;
            let d = DVector::from_column_slice(&[x0 - xb[0], x1 - xb[1]]);
            let prior = (-0.5 * (binv.clone() * &d).dot(&d)).exp();
            let like = (-0.5 * (y - x0).powi(2) / r).exp();
            let w = prior * like;
            w_sum += w;
            m[0] += w * x0;
            m[1] += w * x1;
            m2[0] += w * x0 * x0;
            m2[1] += w * x1 * x1;
        }
    }
    let mean = DVector::from_column_slice(&[m[0] / w_sum, m[1] / w_sum]);
    let var = DVector::from_column_slice(&[
        m2[0] / w_sum - mean[0] * mean[0],
        m2[1] / w_sum - mean[1] * mean[1],
    ]);
    (mean, var)
}

#[test]
fn linear_gaussian_filter_consistency() {
    let xb = DVector::from_column_slice(&[1.0, 2.0]);
    let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
    let h = SelectionOperator::new(vec![0], 2).unwrap();
    let r_var = 0.4;
    let r = DMatrix::from_element(1, 1, r_var);
    let y = DVector::from_element(1, 1.5);

    // exact Kalman step against brute-force Bayes quadrature
    let (xa, a) = kf_analysis(&xb, &b, &y, &r, &h).unwrap();
    let (oracle_mean, oracle_var) = bayes_grid_oracle(&xb, &b, y[0], r_var);
    let mean_err = (&xa - &oracle_mean).amax();
    let var_err = (DVector::from_column_slice(&[a[(0, 0)], a[(1, 1)]]) - &oracle_var).amax();
    check(
        "4a kalman vs bayes quadrature",
        mean_err < 1e-3 && var_err < 1e-3,
        &format!("mean err {mean_err:.2e}, var err {var_err:.2e} < 1e-3"),
    );

    // deterministic ensemble filters reproduce the dense Kalman mean exactly
    // when the Kalman step uses the same sample covariance
    let mut rng = ChaCha12Rng::seed_from_u64(401);
    let prior = GaussianErrorModel {
        mean: xb.clone(),
        covariance: Covariance::Dense(b.clone()),
        space: ErrorSpace::State,
    };
    let ens = Ensemble::new(
        (0..12)
            .map(|_| prior.sample(&mut rng).unwrap())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let b_ens = Covariance::from_ensemble(&ens).unwrap().to_dense();
    let (xa_ens, _) = kf_analysis(&ens.mean(), &b_ens, &y, &r, &h).unwrap();
    let obs = GaussianErrorModel::iid(1, r_var.sqrt(), ErrorSpace::Observation).unwrap();
    let cfg = FilterConfig::new(Algorithm::Denkf, 1.0).unwrap();
    let denkf = denkf_analysis(&ens, &y, &obs, &h, &cfg).unwrap();
    let etkf = etkf_analysis(&ens, &y, &obs, &h, &cfg).unwrap();
    let denkf_err = (denkf.analysis.mean() - &xa_ens).amax();
    let etkf_err = (etkf.analysis.mean() - &xa_ens).amax();
    check(
        "4b denkf/etkf mean vs dense kalman",
        denkf_err < 1e-10 && etkf_err < 1e-10,
        &format!("denkf err {denkf_err:.2e}, etkf err {etkf_err:.2e} < 1e-10"),
    );

    // stochastic methods converge to the exact posterior mean
    let n_big = 100_000;
    let mut rng = ChaCha12Rng::seed_from_u64(402);
    let big = Ensemble::new(
        (0..n_big)
            .map(|_| prior.sample(&mut rng).unwrap())
            .collect::<Vec<_>>(),
    )
    .unwrap();
    let enkf = enkf_analysis(&big, &y, &obs, &h, &cfg, &mut rng).unwrap();
    let pf = pf_analysis(&big, &y, &obs, &h, &cfg, &mut rng).unwrap();
    let enkf_rel = (enkf.analysis.mean() - &xa)
        .zip_map(&xa, |d, t| d.abs() / t.abs())
        .amax();
    let pf_rel = (pf.analysis.mean() - &xa)
        .zip_map(&xa, |d, t| d.abs() / t.abs())
        .amax();
    check(
        "4c enkf/pf large-ensemble mean",
        enkf_rel < 0.02 && pf_rel < 0.02,
        &format!("enkf rel err {enkf_rel:.4}, pf rel err {pf_rel:.4} < 0.02"),
    );
}

#[test]
fn fourdvar_adjoint_gradient() {
    let model = Lorenz96::standard();
    let obs_op = SelectionOperator::strided(40, 2).unwrap();
    let mut x = DVector::from_element(40, 8.0);
    x[0] += 0.001;
    let x0 = integrate(&model, &x, 0.0, 2.0).unwrap().pop().unwrap();
    let h = 0.005;
    let window_steps = 10;
    let traj = integrate(&model, &x0, 0.0, window_steps as f64 * h).unwrap();
    let observations = [window_steps / 2, window_steps]
        .iter()
        .map(|&k| WindowObservation {
            time: k as f64 * h,
            value: obs_op.apply(&traj[k]).unwrap(),
            noise: Covariance::scaled_identity(20, 1.0).unwrap(),
        })
        .collect();
    let problem = VarProblem {
        background: x0.clone(),
        background_cov: Covariance::scaled_identity(40, 4.0).unwrap(),
        observations,
        obs_op,
        model: &model,
        t0: 0.0,
        t_end: window_steps as f64 * h,
    };
    // check away from the cost minimum so the gradient is well scaled
    let xc = DVector::from_fn(40, |i, _| x0[i] + 0.3 * (i as f64 * 0.7).sin());
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let err = gradient_check(|x| fourdvar_cost_grad(&problem, x), &xc, 10, 1e-5, &mut rng).unwrap();
    check(
        "5 fourdvar gradient",
        err < 1e-6,
        &format!("max relative error {err:.2e} < 1e-6"),
    );
}

/// Tanh-sinh quadrature of `int p ln(p)` for the Beta density, independent
/// of the closed form under test.
fn kl_quadrature(a: f64, b: f64) -> f64 {
    let ln_norm = statrs::function::beta::ln_beta(a, b);
    let pi2 = std::f64::consts::FRAC_PI_2;
    let mul = |c: f64, l: f64| if c == 0.0 { 0.0 } else { c * l };
    let term = |t: f64| {
        let u = pi2 * t.sinh();
        let ln_x = -f64::ln_1p((-2.0 * u).exp());
        let ln_1mx = -f64::ln_1p((2.0 * u).exp());
        if !ln_x.is_finite() || !ln_1mx.is_finite() {
            return 0.0;
        }
        let ln_p = mul(a - 1.0, ln_x) + mul(b - 1.0, ln_1mx) - ln_norm;
        let ln_weight = ln_x + ln_1mx + (2.0 * pi2 * t.cosh()).ln();
        let s = ln_p + ln_weight;
        if s < -700.0 {
            0.0
        } else {
            s.exp() * ln_p
        }
    };
    let tmax = 5.0;
    let mut prev = f64::INFINITY;
    let mut result = 0.0;
    for level in 3..=13u32 {
        let n = 1i64 << level;
        let h = tmax / n as f64;
        result = (-n..=n).map(|i| term(i as f64 * h)).sum::<f64>() * h;
        if (result - prev).abs() < 1e-13 {
            break;
        }
        prev = result;
    }
    result
}

#[test]
fn kl_closed_form_matches_quadrature() {
    let uniform = kl_beta_to_uniform(BetaFit { alpha: 1.0, beta: 1.0 }).unwrap();
    let mut worst: f64 = 0.0;
    for &a in &[0.5, 1.0, 2.0, 5.0, 10.0] {
        for &b in &[0.5, 1.0, 2.0, 5.0, 10.0] {
            let closed = kl_beta_to_uniform(BetaFit { alpha: a, beta: b }).unwrap();
            worst = worst.max((closed - kl_quadrature(a, b)).abs());
        }
    }
    check(
        "6 beta kl closed form",
        worst < 1e-8 && uniform.abs() < 1e-12,
        &format!("max quadrature gap {worst:.2e} < 1e-8, kl(1,1) = {uniform:.2e}"),
    );
}

#[test]
fn rank_histogram_calibration() {
    let n_ens = 20;
    let trials = 100_000;
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut hist = RankHistogram::new(n_ens);
    let mut members = vec![0.0f64; n_ens];
    for _ in 0..trials {
        let truth: f64 = StandardNormal.sample(&mut rng);
        for m in members.iter_mut() {
            *m = StandardNormal.sample(&mut rng);
        }
        hist.record(rank_of_truth(truth, &members, &mut rng));
    }
    let kl = kl_beta_to_uniform(fit_beta(&hist).unwrap()).unwrap();

    let expected = trials as f64 / (n_ens + 1) as f64;
    let stat: f64 = hist
        .counts()
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let p = 1.0 - ChiSquared::new(n_ens as f64).unwrap().cdf(stat);
    check(
        "7 rank calibration",
        kl < 0.01 && p > 0.01,
        &format!("kl {kl:.5} < 0.01, chi-square p {p:.3} > 0.01"),
    );
}

#[test]
fn outputs_are_deterministic() {
    let read = |dir: &Path, name: &str| std::fs::read(dir.join(name)).unwrap();

    // same config, two independent executions
    let cfg = {
        let mut c = benchmark_config();
        c.truth.cycles = 40;
        c.run.testing_window_start = 10;
        c
    };
    let (da, db) = (scratch_dir("run-a"), scratch_dir("run-b"));
    emit_run(&run_experiment(&cfg).unwrap(), &da).unwrap();
    emit_run(&run_experiment(&cfg).unwrap(), &db).unwrap();
    let runs_equal = read(&da, "rmse_per_cycle.csv") == read(&db, "rmse_per_cycle.csv")
        && read(&da, "ranks.csv") == read(&db, "ranks.csv");

    // sweep outputs must not depend on the worker count
    let spec = SweepSpec {
        base: cfg.clone(),
        inflation_grid: vec![1.0, 1.02, 1.04],
        ensemble_grid: vec![5, 10],
        divergence_threshold: 0.65,
    };
    let (sa, sb) = (scratch_dir("sweep-1"), scratch_dir("sweep-4"));
    emit_sweep(&run_sweep(&spec, 1), &cfg, &sa).unwrap();
    emit_sweep(&run_sweep(&spec, 4), &cfg, &sb).unwrap();
    let sweeps_equal = read(&sa, "sweep.csv") == read(&sb, "sweep.csv")
        && read(&sa, "sweep_argmin.csv") == read(&sb, "sweep_argmin.csv");

    for d in [&da, &db, &sa, &sb] {
        let _ = std::fs::remove_dir_all(d);
    }
    check(
        "8 deterministic outputs",
        runs_equal && sweeps_equal,
        &format!("runs byte-identical: {runs_equal}, sweeps across 1 vs 4 workers: {sweeps_equal}"),
    );
}

/// Direct term-by-term evaluation of the compactly supported fifth-order
/// taper, written independently of the production Horner form.
fn taper_oracle(r: f64, c: f64) -> f64 {
    let z = r / c;
    if z < 1.0 {
        -(1.0 / 4.0) * z.powi(5) + (1.0 / 2.0) * z.powi(4) + (5.0 / 8.0) * z.powi(3)
            - (5.0 / 3.0) * z.powi(2)
            + 1.0
    } else if z < 2.0 {
        (1.0 / 12.0) * z.powi(5) - (1.0 / 2.0) * z.powi(4) + (5.0 / 8.0) * z.powi(3)
            + (5.0 / 3.0) * z.powi(2)
            - 5.0 * z
            + 4.0
            - 2.0 / (3.0 * z)
    } else {
        0.0
    }
}

#[test]
fn taper_function_properties() {
    let c = 4.0;
    let unit = gaspari_cohn(0.0, c) == 1.0;
    let support = gaspari_cohn(2.0 * c, c) == 0.0 && gaspari_cohn(3.0 * c, c) == 0.0;
    let joint_inner = (taper_oracle(c - 1e-13, c) - gaspari_cohn(c, c)).abs() < 1e-12;
    let joint_outer = (gaspari_cohn(2.0 * c - 1e-13, c)).abs() < 1e-11;
    let branch_gap = {
        // both branch polynomials evaluated exactly at z = 1 must agree
        let inner: f64 = -0.25 + 0.5 + 0.625 - 5.0 / 3.0 + 1.0;
        let outer: f64 = 1.0 / 12.0 - 0.5 + 0.625 + 5.0 / 3.0 - 5.0 + 4.0 - 2.0 / 3.0;
        (inner - outer).abs() < 1e-12
    };
    let mut worst: f64 = 0.0;
    for k in 0..=10 {
        let r = 0.2 * k as f64 * c;
        worst = worst.max((gaspari_cohn(r, c) - taper_oracle(r, c)).abs());
    }
    check(
        "9 taper function",
        unit && support && joint_inner && joint_outer && branch_gap && worst < 1e-12,
        &format!(
            "unit at 0: {unit}, support: {support}, branch agreement: {branch_gap}, max oracle gap {worst:.2e}"
        ),
    );
}
