//! One-cycle analysis algorithms: exact Kalman filter, stochastic EnKF,
//! deterministic EnKF (half-gain anomaly update), ETKF, vanilla particle
//! filter with systematic resampling, and an HMC sampling filter.
//!
//! All ensemble analyses are pure functions of their inputs and the supplied
//! RNG stream; reruns with the same seed are bit-identical.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ensemble_ops::{inflate, localize_obs_space, InflationSpec, LocalizationSpec};
use crate::error::{Error, Result};
use crate::error_models::GaussianErrorModel;
use crate::la::{Ensemble, ObsVector, StateVector};
use crate::models::{integrate_to, Model, SelectionOperator};

/// Analysis algorithm selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Enkf,
    Denkf,
    Etkf,
    Pf,
    HmcFilter,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Enkf => "enkf",
            Algorithm::Denkf => "denkf",
            Algorithm::Etkf => "etkf",
            Algorithm::Pf => "pf",
            Algorithm::HmcFilter => "hmc",
        }
    }

    pub fn parse(s: &str) -> Option<Algorithm> {
        match s {
            "enkf" => Some(Algorithm::Enkf),
            "denkf" => Some(Algorithm::Denkf),
            "etkf" => Some(Algorithm::Etkf),
            "pf" => Some(Algorithm::Pf),
            "hmc" => Some(Algorithm::HmcFilter),
            _ => None,
        }
    }
}

/// HMC sampling-filter parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HmcParams {
    pub step_size: f64,
    pub path_length: usize,
    pub burn_in: usize,
}

impl Default for HmcParams {
    fn default() -> Self {
        HmcParams {
            step_size: 0.05,
            path_length: 10,
            burn_in: 50,
        }
    }
}

/// Per-cycle filter configuration.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    pub algorithm: Algorithm,
    pub inflation: InflationSpec,
    pub localization: Option<LocalizationSpec>,
    pub hmc: HmcParams,
}

impl FilterConfig {
    pub fn new(algorithm: Algorithm, inflation: f64) -> Result<Self> {
        Ok(FilterConfig {
            algorithm,
            inflation: InflationSpec::new(inflation)?,
            localization: None,
            hmc: HmcParams::default(),
        })
    }
}

/// Analysis output: the updated ensemble plus scalar diagnostics.
#[derive(Debug, Clone)]
pub struct AnalysisResult {
    pub analysis: Ensemble,
    /// `|y - H xbar_f|`.
    pub innovation_norm: f64,
    /// HMC only.
    pub acceptance_rate: Option<f64>,
    /// Particle filter only: `1 / sum w_i^2`.
    pub effective_sample_size: Option<f64>,
}

/// Propagate every member with the deterministic forward model.
pub fn forecast_ensemble(model: &dyn Model, ens: &Ensemble, t0: f64, t1: f64) -> Result<Ensemble> {
    Ensemble::new(
        ens.iter()
            .map(|m| integrate_to(model, m, t0, t1))
            .collect::<Result<Vec<_>>>()?,
    )
}

fn obs_covariance_dense(obs_error: &GaussianErrorModel) -> DMatrix<f64> {
    obs_error.covariance.to_dense()
}

/// Exact Kalman analysis with dense background covariance.
///
/// `K = B H^T (H B H^T + R)^{-1}`, `xa = xb + K d`, `A = (I - K H) B`.
pub fn kf_analysis(
    xb: &StateVector,
    b: &DMatrix<f64>,
    y: &ObsVector,
    r: &DMatrix<f64>,
    h: &SelectionOperator,
) -> Result<(StateVector, DMatrix<f64>)> {
    let h_dense = h.to_dense();
    let bht = b * h_dense.transpose();
    let s = &h_dense * &bht + r;
    let chol = s.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let innovation = y - h.apply(xb)?;
    let k = (chol.solve(&bht.transpose())).transpose();
    let xa = xb + &k * innovation;
    let a = (DMatrix::identity(b.nrows(), b.nrows()) - &k * h_dense) * b;
    Ok((xa, a))
}

/// Gain matrix from ensemble `HB`, `HBH^T` with optional Schur localization.
fn ensemble_gain(
    anomalies: &DMatrix<f64>,
    y_anom: &DMatrix<f64>,
    r: &DMatrix<f64>,
    h: &SelectionOperator,
    localization: Option<&LocalizationSpec>,
) -> Result<DMatrix<f64>> {
    let n_ens = anomalies.ncols();
    let scale = 1.0 / (n_ens - 1) as f64;
    let mut hb = (y_anom * anomalies.transpose()) * scale;
    let mut hbht = (y_anom * y_anom.transpose()) * scale;
    if let Some(spec) = localization {
        let (hb_l, hbht_l) = localize_obs_space(&hb, &hbht, spec, h.indices(), h.n_state())?;
        hb = hb_l;
        hbht = hbht_l;
    }
    let s = hbht + r;
    let chol = s.cholesky().ok_or(Error::SingularCovariance)?;
    Ok(chol.solve(&hb).transpose())
}

/// Stochastic (perturbed-observation) EnKF analysis.
pub fn enkf_analysis<R: Rng>(
    fc: &Ensemble,
    y: &ObsVector,
    obs_error: &GaussianErrorModel,
    h: &SelectionOperator,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<AnalysisResult> {
    if fc.len() < 2 {
        return Err(Error::DegenerateEnsemble);
    }
    let anomalies = fc.anomaly_matrix()?;
    let y_anom = h.select_rows(&anomalies);
    let r = obs_covariance_dense(obs_error);
    let k = ensemble_gain(&anomalies, &y_anom, &r, h, cfg.localization.as_ref())?;

    let mut members = Vec::with_capacity(fc.len());
    for m in fc.iter() {
        let perturbed = y + obs_error.sample(rng)?;
        let innovation = perturbed - h.apply(m)?;
        members.push(m + &k * innovation);
    }
    let analysis = inflate(&Ensemble::new(members)?, cfg.inflation)?;
    let innovation_norm = (y - h.apply(&fc.mean())?).norm();
    Ok(AnalysisResult {
        analysis,
        innovation_norm,
        acceptance_rate: None,
        effective_sample_size: None,
    })
}

/// Deterministic EnKF: full-gain mean update, half-gain anomaly update,
/// inflation applied to the analysis anomalies afterward.
pub fn denkf_analysis(
    fc: &Ensemble,
    y: &ObsVector,
    obs_error: &GaussianErrorModel,
    h: &SelectionOperator,
    cfg: &FilterConfig,
) -> Result<AnalysisResult> {
    if fc.len() < 2 {
        return Err(Error::DegenerateEnsemble);
    }
    let mean = fc.mean();
    let anomalies = fc.anomaly_matrix()?;
    let y_anom = h.select_rows(&anomalies);
    let r = obs_covariance_dense(obs_error);
    let k = ensemble_gain(&anomalies, &y_anom, &r, h, cfg.localization.as_ref())?;

    let innovation = y - h.apply(&mean)?;
    let mean_a = &mean + &k * &innovation;
    let anomalies_a = &anomalies - &k * &y_anom * 0.5;

    let members: Vec<StateVector> = (0..fc.len())
        .map(|i| &mean_a + anomalies_a.column(i))
        .collect();
    let analysis = inflate(&Ensemble::new(members)?, cfg.inflation)?;
    Ok(AnalysisResult {
        analysis,
        innovation_norm: innovation.norm(),
        acceptance_rate: None,
        effective_sample_size: None,
    })
}

/// Ensemble transform Kalman filter: weight-space mean update and symmetric
/// square-root anomaly transform.
pub fn etkf_analysis(
    fc: &Ensemble,
    y: &ObsVector,
    obs_error: &GaussianErrorModel,
    h: &SelectionOperator,
    cfg: &FilterConfig,
) -> Result<AnalysisResult> {
    if fc.len() < 2 {
        return Err(Error::DegenerateEnsemble);
    }
    if cfg.localization.is_some() {
        return Err(Error::LocalizationUnsupported("etkf"));
    }
    let n_ens = fc.len();
    let scale = 1.0 / (n_ens - 1) as f64;
    let mean = fc.mean();
    let anomalies = fc.anomaly_matrix()?;
    let y_anom = h.select_rows(&anomalies);

    // R^{-1} Y through the covariance operator, column by column
    let mut rinv_y = DMatrix::zeros(y_anom.nrows(), n_ens);
    for j in 0..n_ens {
        let col = obs_error
            .covariance
            .inverse_apply(&y_anom.column(j).into_owned())?;
        rinv_y.set_column(j, &col);
    }

    let c = DMatrix::identity(n_ens, n_ens) + y_anom.transpose() * &rinv_y * scale;
    let eig = c.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 1e-12) {
        return Err(Error::NotPositiveDefinite);
    }
    // S = C^{-1}, T = S^{1/2} via the shared eigenbasis
    let q = &eig.eigenvectors;
    let inv = DVector::from_fn(n_ens, |i, _| 1.0 / eig.eigenvalues[i]);
    let inv_sqrt = inv.map(f64::sqrt);
    let s = q * DMatrix::from_diagonal(&inv) * q.transpose();
    let t = q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose();

    let innovation = y - h.apply(&mean)?;
    let rinv_d = obs_error.covariance.inverse_apply(&innovation)?;
    let w = &s * (y_anom.transpose() * rinv_d) * scale;

    let mean_a = &mean + &anomalies * &w;
    let anomalies_a = &anomalies * &t;
    let members: Vec<StateVector> = (0..n_ens)
        .map(|i| &mean_a + anomalies_a.column(i))
        .collect();
    let analysis = inflate(&Ensemble::new(members)?, cfg.inflation)?;
    Ok(AnalysisResult {
        analysis,
        innovation_norm: innovation.norm(),
        acceptance_rate: None,
        effective_sample_size: None,
    })
}

/// Systematic resampling: one uniform offset, equally spaced pointers.
fn systematic_resample<R: Rng>(weights: &[f64], rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let start: f64 = rng.random_range(0.0..1.0) / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..n {
        let u = start + k as f64 / n as f64;
        while u > cumulative && i + 1 < n {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

/// Vanilla particle filter: Gaussian observation weights, systematic
/// resampling to equal weights.
pub fn pf_analysis<R: Rng>(
    fc: &Ensemble,
    y: &ObsVector,
    obs_error: &GaussianErrorModel,
    h: &SelectionOperator,
    _cfg: &FilterConfig,
    rng: &mut R,
) -> Result<AnalysisResult> {
    let mut log_w = Vec::with_capacity(fc.len());
    for m in fc.iter() {
        let d = y - h.apply(m)?;
        log_w.push(-obs_error.log_density_quadratic(&d)?);
    }
    // normalize in log space before exponentiating
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::FilterDegenerate);
    }
    let mut weights: Vec<f64> = log_w.iter().map(|&lw| (lw - max).exp()).collect();
    let sum: f64 = weights.iter().sum();
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::FilterDegenerate);
    }
    for w in &mut weights {
        *w /= sum;
    }
    let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let picks = systematic_resample(&weights, rng);
    let members: Vec<StateVector> = picks.iter().map(|&i| fc.members()[i].clone()).collect();
    let innovation_norm = (y - h.apply(&fc.mean())?).norm();
    Ok(AnalysisResult {
        analysis: Ensemble::new(members)?,
        innovation_norm,
        acceptance_rate: None,
        effective_sample_size: Some(ess),
    })
}

/// Gaussian posterior for the HMC filter: diagonal background precision from
/// the (inflated) forecast ensemble variance plus the observation misfit.
struct HmcTarget<'a> {
    mean_f: &'a StateVector,
    b_diag: &'a DVector<f64>,
    y: &'a ObsVector,
    obs_error: &'a GaussianErrorModel,
    h: &'a SelectionOperator,
}

impl HmcTarget<'_> {
    fn potential(&self, x: &StateVector) -> Result<f64> {
        let d = x - self.mean_f;
        let bg = 0.5 * d.dot(&d.component_div(self.b_diag));
        let misfit = self.y - self.h.apply(x)?;
        Ok(bg + self.obs_error.log_density_quadratic(&misfit)?)
    }

    fn gradient(&self, x: &StateVector) -> Result<StateVector> {
        let d = x - self.mean_f;
        let bg = d.component_div(self.b_diag);
        let misfit = self.y - self.h.apply(x)?;
        let obs = self
            .h
            .adjoint_apply(&self.obs_error.covariance.inverse_apply(&misfit)?)?;
        Ok(bg - obs)
    }
}

/// HMC sampling filter: leapfrog trajectories on the one-cycle posterior,
/// keeping the last `n_ens` chain states as the analysis ensemble.
pub fn hmc_filter_analysis<R: Rng>(
    fc: &Ensemble,
    y: &ObsVector,
    obs_error: &GaussianErrorModel,
    h: &SelectionOperator,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<AnalysisResult> {
    if fc.len() < 2 {
        return Err(Error::DegenerateEnsemble);
    }
    let mean_f = fc.mean();
    let mut b_diag = fc.variance()?;
    let lam2 = cfg.inflation.factor * cfg.inflation.factor;
    b_diag *= lam2;
    if let Some(i) = b_diag.iter().position(|&v| v <= 0.0) {
        return Err(Error::ZeroVariance(i));
    }
    let target = HmcTarget {
        mean_f: &mean_f,
        b_diag: &b_diag,
        y,
        obs_error,
        h,
    };
    // mass matrix = elementwise inverse ensemble variance
    let mass = b_diag.map(|v| 1.0 / v);
    let mass_inv = b_diag.clone();

    let n_keep = fc.len();
    let total = cfg.hmc.burn_in + n_keep;
    let mut x = mean_f.clone();
    let mut u = target.potential(&x)?;
    let mut kept = Vec::with_capacity(n_keep);
    let mut accepted = 0usize;
    let eps = cfg.hmc.step_size;

    for it in 0..total {
        let p0 = DVector::from_fn(x.len(), |i, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * mass[i].sqrt()
        });
        let mut xp = x.clone();
        let mut p = p0.clone();
        // leapfrog
        let mut g = target.gradient(&xp)?;
        p -= &g * (0.5 * eps);
        for step in 0..cfg.hmc.path_length {
            xp += p.component_mul(&mass_inv) * eps;
            g = target.gradient(&xp)?;
            let half = if step + 1 == cfg.hmc.path_length { 0.5 } else { 1.0 };
            p -= &g * (half * eps);
        }
        let u_prop = target.potential(&xp)?;
        let kinetic = |p: &DVector<f64>| 0.5 * p.dot(&p.component_mul(&mass_inv));
        let log_alpha = (u + kinetic(&p0)) - (u_prop + kinetic(&p));
        let accept = log_alpha >= 0.0 || rng.random_range(0.0..1.0f64).ln() < log_alpha;
        if accept {
            x = xp;
            u = u_prop;
            accepted += 1;
        }
        if it >= cfg.hmc.burn_in {
            kept.push(x.clone());
        }
    }
    let innovation_norm = (y - h.apply(&mean_f)?).norm();
    Ok(AnalysisResult {
        analysis: Ensemble::new(kept)?,
        innovation_norm,
        acceptance_rate: Some(accepted as f64 / total as f64),
        effective_sample_size: None,
    })
}

/// Dispatch one analysis cycle by configured algorithm.
pub fn analyze<R: Rng>(
    cfg: &FilterConfig,
    fc: &Ensemble,
    y: &ObsVector,
    obs_error: &GaussianErrorModel,
    h: &SelectionOperator,
    rng: &mut R,
) -> Result<AnalysisResult> {
    match cfg.algorithm {
        Algorithm::Enkf => enkf_analysis(fc, y, obs_error, h, cfg, rng),
        Algorithm::Denkf => denkf_analysis(fc, y, obs_error, h, cfg),
        Algorithm::Etkf => etkf_analysis(fc, y, obs_error, h, cfg),
        Algorithm::Pf => pf_analysis(fc, y, obs_error, h, cfg, rng),
        Algorithm::HmcFilter => hmc_filter_analysis(fc, y, obs_error, h, cfg, rng),
    }
}
