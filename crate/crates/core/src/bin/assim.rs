//! Command-line harness: single runs, inflation/ensemble sweeps, gradient
//! checks, and a quick self test.
//!
//! Exit codes: 0 success, 1 usage/parse error, 2 runtime failure,
//! 3 self-test failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use assim::config::{parse_config, ExperimentConfig};
use assim::ensemble_ops::gaspari_cohn;
use assim::harness::{
    emit_run, emit_sweep, run_experiment, run_sweep, SweepSpec, DEFAULT_DIVERGENCE_THRESHOLD,
};
use assim::la::Covariance;
use assim::metrics::{kl_beta_to_uniform, BetaFit};
use assim::models::{integrate, Lorenz96, Model, SelectionOperator};
use assim::rng::component_stream;
use assim::variational::{fourdvar_cost_grad, gradient_check, VarProblem, WindowObservation};

#[derive(Parser)]
#[command(name = "assim", about = "Data assimilation twin-experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment from a config file.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep inflation and ensemble size around a base config.
    Sweep {
        config: PathBuf,
        /// Inflation grid as start:end:step, e.g. 1.00:1.12:0.01.
        #[arg(long, default_value = "1.00:1.12:0.01")]
        inflation: String,
        /// Comma-separated ensemble sizes, e.g. 5,10,15.
        #[arg(long, default_value = "5,10,15,20,25,30,35,40")]
        nens: String,
        /// Divergence threshold on testing-window average analysis RMSE.
        #[arg(long, default_value_t = DEFAULT_DIVERGENCE_THRESHOLD)]
        threshold: f64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the 4D-Var adjoint gradient for the configured model.
    Gradcheck { config: PathBuf },
    /// Fast internal consistency checks.
    Selftest,
}

fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected start:end:step, got \"{text}\""));
    }
    let parse = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number \"{s}\""));
    let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
    if step <= 0.0 || end < start {
        return Err("grid requires step > 0 and end >= start".into());
    }
    let n = ((end - start) / step).round() as usize;
    Ok((0..=n).map(|k| start + k as f64 * step).collect())
}

fn parse_list(text: &str) -> Result<Vec<usize>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad ensemble size \"{s}\"")))
        .collect()
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, ExitCode> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(1)
    })?;
    parse_config(&text).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}

fn cmd_run(config: PathBuf, out: Option<PathBuf>) -> ExitCode {
    let cfg = match load_config(&config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.run.output_dir));
    match run_experiment(&cfg) {
        Ok(summary) => {
            if let Err(e) = emit_run(&summary, &dir) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            println!(
                "cycles={} avg_forecast_rmse={:.6} avg_analysis_rmse={:.6} avg_free_run_rmse={:.6} kl_uniform={:.6} diverged={}",
                summary.records.len(),
                summary.avg_forecast_rmse,
                summary.avg_analysis_rmse,
                summary.avg_free_run_rmse,
                summary.kl_uniform,
                summary.diverged
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_sweep(
    config: PathBuf,
    inflation: String,
    nens: String,
    threshold: f64,
    jobs: usize,
    out: Option<PathBuf>,
) -> ExitCode {
    let base = match load_config(&config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let inflation_grid = match parse_grid(&inflation) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let ensemble_grid = match parse_list(&nens) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let dir = out.unwrap_or_else(|| PathBuf::from(&base.run.output_dir));
    let spec = SweepSpec {
        base: base.clone(),
        inflation_grid,
        ensemble_grid,
        divergence_threshold: threshold,
    };
    let table = run_sweep(&spec, jobs.max(1));
    if let Err(e) = emit_sweep(&table, &base, &dir) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    for &(n, best_rmse, best_kl) in &table.argmin {
        match best_rmse {
            Some(i) => println!(
                "n_ens={n} best_inflation={} best_rmse={:.6} best_kl_inflation={}",
                table.rows[i].inflation,
                table.rows[i].avg_rmse,
                best_kl.map(|j| table.rows[j].inflation.to_string()).unwrap_or_default(),
            ),
            None => println!("n_ens={n} all runs diverged"),
        }
    }
    ExitCode::SUCCESS
}

fn cmd_gradcheck(config: PathBuf) -> ExitCode {
    let cfg = match load_config(&config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let model = match Lorenz96::new(cfg.model.n_state, cfg.model.forcing, cfg.model.step_size) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let result = (|| -> assim::Result<f64> {
        let n = model.n_state;
        let obs_op = SelectionOperator::strided(n, cfg.truth.obs_stride)?;
        let mut x = DVector::from_element(n, model.forcing);
        x[0] += 0.001;
        let x0 = integrate(&model, &x, 0.0, 2.0)?.pop().unwrap();
        let h = model.h;
        let window_steps = 10usize;
        let traj = integrate(&model, &x0, 0.0, window_steps as f64 * h)?;
        let observations = [window_steps / 2, window_steps]
            .iter()
            .map(|&k| {
                Ok(WindowObservation {
                    time: k as f64 * h,
                    value: obs_op.apply(&traj[k])?,
                    noise: Covariance::scaled_identity(
                        obs_op.n_obs(),
                        cfg.truth.obs_error_std.powi(2),
                    )?,
                })
            })
            .collect::<assim::Result<Vec<_>>>()?;
        let problem = VarProblem {
            background: x0.clone(),
            background_cov: Covariance::scaled_identity(n, 4.0)?,
            observations,
            obs_op,
            model: &model,
            t0: 0.0,
            t_end: window_steps as f64 * h,
        };
        // check away from the cost minimum so the gradient is well scaled
        let xc = DVector::from_fn(n, |i, _| x0[i] + 0.3 * (i as f64 * 0.7).sin());
        let mut rng = component_stream(cfg.run.seed, &[0x6772_6164]);
        gradient_check(|x| fourdvar_cost_grad(&problem, x), &xc, 10, 1e-5, &mut rng)
    })();
    match result {
        Ok(err) => {
            println!("4dvar gradient max relative error = {err:.3e}");
            if err < 1e-6 {
                ExitCode::SUCCESS
            } else {
                eprintln!("error: gradient check failed tolerance 1e-6");
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn cmd_selftest() -> ExitCode {
    let mut failures = 0usize;
    let mut check = |name: &str, pass: bool| {
        println!("{} {name}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failures += 1;
        }
    };

    check("gaspari_cohn unit at zero", gaspari_cohn(0.0, 4.0) == 1.0);
    check("gaspari_cohn compact support", gaspari_cohn(8.0, 4.0) == 0.0);
    check(
        "kl(beta(1,1) || uniform) = 0",
        kl_beta_to_uniform(BetaFit { alpha: 1.0, beta: 1.0 })
            .map(|v| v.abs() < 1e-12)
            .unwrap_or(false),
    );
    check(
        "lorenz96 fixed point",
        Lorenz96::standard()
            .rhs(0.0, &DVector::from_element(40, 8.0))
            .amax()
            == 0.0,
    );

    // mini 4D-Var gradient check
    let grad_ok = (|| -> assim::Result<bool> {
        let model = Lorenz96::standard();
        let obs_op = SelectionOperator::strided(40, 2)?;
        let mut x = DVector::from_element(40, 8.0);
        x[0] += 0.001;
        let x0 = integrate(&model, &x, 0.0, 1.0)?.pop().unwrap();
        let traj = integrate(&model, &x0, 0.0, 0.05)?;
        let problem = VarProblem {
            background: x0.clone(),
            background_cov: Covariance::scaled_identity(40, 4.0)?,
            observations: vec![WindowObservation {
                time: 0.05,
                value: obs_op.apply(&traj[10])?,
                noise: Covariance::scaled_identity(20, 1.0)?,
            }],
            obs_op,
            model: &model,
            t0: 0.0,
            t_end: 0.05,
        };
        let xc = DVector::from_fn(40, |i, _| x0[i] + 0.3 * (i as f64 * 0.7).sin());
        let mut rng = component_stream(1, &[0x7374]);
        let err = gradient_check(|x| fourdvar_cost_grad(&problem, x), &xc, 4, 1e-5, &mut rng)?;
        Ok(err < 1e-6)
    })()
    .unwrap_or(false);
    check("4dvar gradient vs finite differences", grad_ok);

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out } => cmd_run(config, out),
        Command::Sweep {
            config,
            inflation,
            nens,
            threshold,
            jobs,
            out,
        } => cmd_sweep(config, inflation, nens, threshold, jobs, out),
        Command::Gradcheck { config } => cmd_gradcheck(config),
        Command::Selftest => cmd_selftest(),
    }
}
