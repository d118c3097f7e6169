//! Single-run and sweep execution, divergence filtering, and CSV/manifest
//! emission: the benchmark harness over the assimilation process.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{serialize, ExperimentConfig};
use crate::ensemble_ops::LocalizationSpec;
use crate::error::{Error, Result};
use crate::error_models::{ErrorSpace, GaussianErrorModel};
use crate::filters::{FilterConfig, HmcParams};
use crate::la::StateVector;
use crate::metrics::{avg_bin_distance, fit_beta, kl_beta_to_uniform, RankHistogram};
use crate::models::{Lorenz63, Lorenz96, Model, SelectionOperator};
use crate::process::{initial_ensemble, run_cycles, spinup_state, CycleRecord, ProcessSpec};
use crate::rng::{component_stream, derive_seed, stream};

/// Divergence threshold on testing-window average analysis RMSE.
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 0.65;

/// Aggregates of one experiment over its testing window.
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub config: ExperimentConfig,
    pub avg_forecast_rmse: f64,
    pub avg_analysis_rmse: f64,
    pub avg_free_run_rmse: f64,
    /// KL divergence of the Beta fitted to the analysis rank histogram from
    /// uniform; NaN when the histogram is degenerate.
    pub kl_uniform: f64,
    pub avg_bin_dist: f64,
    pub diverged: bool,
    pub rank_histogram: RankHistogram,
    pub records: Vec<CycleRecord>,
}

/// Sweep over an inflation x ensemble-size grid.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub base: ExperimentConfig,
    pub inflation_grid: Vec<f64>,
    pub ensemble_grid: Vec<usize>,
    pub divergence_threshold: f64,
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n_ens: usize,
    pub inflation: f64,
    pub avg_rmse: f64,
    pub kl_uniform: f64,
    pub avg_bin_dist: f64,
    pub diverged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// Per-ensemble-size argmin rows over non-diverged entries:
    /// `(n_ens, best-RMSE row index, best-KL row index)`.
    pub argmin: Vec<(usize, Option<usize>, Option<usize>)>,
}

fn build_model(cfg: &ExperimentConfig) -> Result<Box<dyn Model>> {
    match cfg.model.name.as_str() {
        "lorenz96" => Ok(Box::new(Lorenz96::new(
            cfg.model.n_state,
            cfg.model.forcing,
            cfg.model.step_size,
        )?)),
        "lorenz63" => Ok(Box::new(Lorenz63::standard(cfg.model.step_size))),
        other => Err(Error::Config {
            line: 0,
            message: format!("unknown model \"{other}\""),
        }),
    }
}

fn build_filter(cfg: &ExperimentConfig) -> Result<FilterConfig> {
    let mut fc = FilterConfig::new(cfg.filter.algorithm, cfg.filter.inflation)?;
    if cfg.filter.localization_radius > 0.0 {
        fc.localization = Some(LocalizationSpec::periodic_obs_space(
            cfg.filter.localization_radius,
            cfg.model.n_state,
        )?);
    }
    fc.hmc = HmcParams {
        step_size: cfg.filter.hmc_step_size,
        path_length: cfg.filter.hmc_path_length,
        burn_in: cfg.filter.hmc_burn_in,
    };
    Ok(fc)
}

/// Run one experiment end to end and average over the testing window.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    run_experiment_with_threshold(cfg, DEFAULT_DIVERGENCE_THRESHOLD)
}

pub fn run_experiment_with_threshold(
    cfg: &ExperimentConfig,
    divergence_threshold: f64,
) -> Result<ExperimentSummary> {
    let model = build_model(cfg)?;
    let n_state = model.n_state();
    let obs_op = SelectionOperator::strided(n_state, cfg.truth.obs_stride)?;
    let obs_error =
        GaussianErrorModel::iid(obs_op.n_obs(), cfg.truth.obs_error_std, ErrorSpace::Observation)?;
    let seed = cfg.run.seed;

    // truth spin-up from a perturbed rest state onto the attractor
    let mut x0: StateVector = DVector::from_element(n_state, cfg.model.forcing);
    if n_state > 0 {
        x0[0] += 0.001;
    }
    let truth0 = spinup_state(model.as_ref(), &x0, cfg.truth.spinup_steps)?;

    let mut init_rng = component_stream(seed, &[stream::INIT_ENSEMBLE]);
    let ensemble0 = initial_ensemble(
        &truth0,
        cfg.filter.n_ens,
        cfg.truth.init_perturb_std,
        &mut init_rng,
    )?;

    let cycle_dt = cfg.truth.obs_interval_steps as f64 * cfg.model.step_size;
    let da_checkpoints: Vec<f64> = (1..=cfg.truth.cycles).map(|k| k as f64 * cycle_dt).collect();

    let spec = ProcessSpec {
        model: model.as_ref(),
        obs_op,
        filter: build_filter(cfg)?,
        da_checkpoints,
        t0: 0.0,
        truth0,
        ensemble0,
        obs_error,
        rank_stride: cfg.run.rank_stride,
        store_ensembles_every: 0,
        master_seed: seed,
    };
    let records = run_cycles(&spec)?;
    Ok(summarize(cfg.clone(), records, divergence_threshold))
}

fn summarize(
    config: ExperimentConfig,
    records: Vec<CycleRecord>,
    divergence_threshold: f64,
) -> ExperimentSummary {
    let window: Vec<&CycleRecord> = records
        .iter()
        .filter(|r| r.cycle >= config.run.testing_window_start)
        .collect();
    let n = window.len() as f64;
    let mut hist = RankHistogram::new(config.filter.n_ens);
    let (mut f_sum, mut a_sum, mut free_sum) = (0.0, 0.0, 0.0);
    for r in &window {
        f_sum += r.forecast_rmse;
        a_sum += r.analysis_rmse;
        free_sum += r.free_run_rmse;
        for &(_, rank) in &r.ranks {
            hist.record(rank);
        }
    }
    let avg_analysis_rmse = if n > 0.0 { a_sum / n } else { 0.0 };
    let (kl_uniform, avg_bin_dist) = match fit_beta(&hist) {
        Ok(fit) => (
            kl_beta_to_uniform(fit).unwrap_or(f64::NAN),
            avg_bin_distance(&hist),
        ),
        Err(_) => (f64::NAN, avg_bin_distance(&hist)),
    };
    ExperimentSummary {
        avg_forecast_rmse: if n > 0.0 { f_sum / n } else { 0.0 },
        avg_analysis_rmse,
        avg_free_run_rmse: if n > 0.0 { free_sum / n } else { 0.0 },
        kl_uniform,
        avg_bin_dist,
        diverged: n > 0.0 && avg_analysis_rmse > divergence_threshold,
        rank_histogram: hist,
        records,
        config,
    }
}

/// Grid-stable child seed for one sweep cell.
pub fn sweep_cell_seed(master: u64, n_ens: usize, inflation: f64) -> u64 {
    derive_seed(master, &[n_ens as u64, (inflation * 1e4).round() as u64])
}

/// Run the full grid; failures are recorded as diverged-with-error rows and
/// the sweep continues. Deterministic regardless of worker count.
pub fn run_sweep(spec: &SweepSpec, parallelism: usize) -> SweepTable {
    let cells: Vec<(usize, f64)> = spec
        .ensemble_grid
        .iter()
        .flat_map(|&n| spec.inflation_grid.iter().map(move |&l| (n, l)))
        .collect();

    let run_cell = |&(n_ens, inflation): &(usize, f64)| -> SweepRow {
        let mut cfg = spec.base.clone();
        cfg.filter.n_ens = n_ens;
        cfg.filter.inflation = inflation;
        cfg.run.seed = sweep_cell_seed(spec.base.run.seed, n_ens, inflation);
        match run_experiment_with_threshold(&cfg, spec.divergence_threshold) {
            Ok(s) => SweepRow {
                n_ens,
                inflation,
                avg_rmse: s.avg_analysis_rmse,
                kl_uniform: s.kl_uniform,
                avg_bin_dist: s.avg_bin_dist,
                diverged: s.diverged,
                error: None,
            },
            Err(e) => SweepRow {
                n_ens,
                inflation,
                avg_rmse: f64::NAN,
                kl_uniform: f64::NAN,
                avg_bin_dist: f64::NAN,
                diverged: true,
                error: Some(e.to_string()),
            },
        }
    };

    let rows: Vec<SweepRow> = if parallelism > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallelism)
            .build()
            .expect("thread pool");
        pool.install(|| cells.par_iter().map(run_cell).collect())
    } else {
        cells.iter().map(run_cell).collect()
    };

    let argmin = spec
        .ensemble_grid
        .iter()
        .map(|&n| {
            let mut best_rmse: Option<usize> = None;
            let mut best_kl: Option<usize> = None;
            for (i, row) in rows.iter().enumerate() {
                if row.n_ens != n || row.diverged {
                    continue;
                }
                if best_rmse.is_none_or(|b| row.avg_rmse < rows[b].avg_rmse) {
                    best_rmse = Some(i);
                }
                if row.kl_uniform.is_finite()
                    && best_kl.is_none_or(|b| row.kl_uniform < rows[b].kl_uniform)
                {
                    best_kl = Some(i);
                }
            }
            (n, best_rmse, best_kl)
        })
        .collect();

    SweepTable { rows, argmin }
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact_version: &'static str,
    master_seed: u64,
    unix_timestamp: u64,
    config: &'a ExperimentConfig,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut f = fs::File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Write per-cycle CSVs and the manifest for one run.
pub fn emit_run(summary: &ExperimentSummary, dir: &Path) -> Result<()> {
    let cadence = summary.config.run.record_cadence.max(1);
    let mut rmse_csv = String::from("cycle,time,forecast_rmse,analysis_rmse,free_run_rmse\n");
    let mut ranks_csv = String::from("cycle,var_index,rank\n");
    for r in &summary.records {
        if r.cycle % cadence != 0 {
            continue;
        }
        rmse_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.cycle, r.time, r.forecast_rmse, r.analysis_rmse, r.free_run_rmse
        ));
        for &(idx, rank) in &r.ranks {
            ranks_csv.push_str(&format!("{},{},{}\n", r.cycle, idx, rank));
        }
    }
    write_file(&dir.join("rmse_per_cycle.csv"), &rmse_csv)?;
    write_file(&dir.join("ranks.csv"), &ranks_csv)?;
    emit_manifest(&summary.config, dir)
}

/// Write the sweep table CSV and the manifest.
pub fn emit_sweep(table: &SweepTable, base: &ExperimentConfig, dir: &Path) -> Result<()> {
    let mut csv = String::from("n_ens,inflation,avg_rmse,kl_uniform,avg_bin_dist,diverged\n");
    for row in &table.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.n_ens, row.inflation, row.avg_rmse, row.kl_uniform, row.avg_bin_dist, row.diverged
        ));
    }
    write_file(&dir.join("sweep.csv"), &csv)?;

    let mut argmin_csv = String::from("n_ens,best_rmse_inflation,best_rmse,best_kl_inflation,best_kl\n");
    for &(n, rm, kl) in &table.argmin {
        let (ri, rv) = rm
            .map(|i| (table.rows[i].inflation.to_string(), table.rows[i].avg_rmse.to_string()))
            .unwrap_or_else(|| ("".into(), "".into()));
        let (ki, kv) = kl
            .map(|i| (table.rows[i].inflation.to_string(), table.rows[i].kl_uniform.to_string()))
            .unwrap_or_else(|| ("".into(), "".into()));
        argmin_csv.push_str(&format!("{n},{ri},{rv},{ki},{kv}\n"));
    }
    write_file(&dir.join("sweep_argmin.csv"), &argmin_csv)?;
    emit_manifest(base, dir)
}

fn emit_manifest(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let manifest = Manifest {
        artifact_version: env!("CARGO_PKG_VERSION"),
        master_seed: cfg.run.seed,
        unix_timestamp: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization");
    write_file(&dir.join("manifest.json"), &json)?;
    write_file(&dir.join("config_echo.cfg"), &serialize(cfg))
}
