//! The assimilation-process driver: truth trajectory generation, synthetic
//! observation creation, repeated forecast/analysis cycles, and per-cycle
//! recording. A parallel free run from the initial forecast mean provides the
//! no-assimilation error baseline.

use rand::Rng;

use crate::error::{Error, Result};
use crate::error_models::GaussianErrorModel;
use crate::filters::{analyze, forecast_ensemble, FilterConfig};
use crate::la::{Ensemble, ObsVector, StateVector};
use crate::metrics::{rank_of_truth, rmse};
use crate::models::{integrate_to, Model, SelectionOperator};
use crate::rng::{component_stream, stream};

/// Declarative description of one twin experiment.
pub struct ProcessSpec<'a> {
    pub model: &'a dyn Model,
    pub obs_op: SelectionOperator,
    pub filter: FilterConfig,
    /// Assimilation times, strictly increasing, grid-aligned, excluding `t0`.
    pub da_checkpoints: Vec<f64>,
    pub t0: f64,
    pub truth0: StateVector,
    pub ensemble0: Ensemble,
    pub obs_error: GaussianErrorModel,
    /// Sample truth ranks at every `rank_stride`-th state variable.
    pub rank_stride: usize,
    /// Keep every `record_cadence`-th ensemble in the records (0 = never).
    pub store_ensembles_every: usize,
    pub master_seed: u64,
}

/// Results of one assimilation cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleRecord {
    pub cycle: usize,
    pub time: f64,
    pub forecast_rmse: f64,
    pub analysis_rmse: f64,
    pub free_run_rmse: f64,
    /// `(state index, rank of truth)` at the sampled variables.
    pub ranks: Vec<(usize, u32)>,
    pub stored_analysis: Option<Ensemble>,
}

/// Truth states at every checkpoint, deterministic.
pub fn generate_truth(
    model: &dyn Model,
    truth0: &StateVector,
    t0: f64,
    checkpoints: &[f64],
) -> Result<Vec<StateVector>> {
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut x = truth0.clone();
    let mut t = t0;
    for &tc in checkpoints {
        x = integrate_to(model, &x, t, tc)?;
        t = tc;
        out.push(x.clone());
    }
    Ok(out)
}

/// `y_k = H(truth_k) + eta_k` with noise from the provided stream.
pub fn synthesize_observations<R: Rng>(
    truths: &[StateVector],
    obs_error: &GaussianErrorModel,
    obs_op: &SelectionOperator,
    rng: &mut R,
) -> Result<Vec<ObsVector>> {
    truths
        .iter()
        .map(|x| Ok(obs_op.apply(x)? + obs_error.sample(rng)?))
        .collect()
}

/// Run every assimilation cycle and return one record per `da_checkpoint`.
pub fn run_cycles(spec: &ProcessSpec<'_>) -> Result<Vec<CycleRecord>> {
    let truths = generate_truth(spec.model, &spec.truth0, spec.t0, &spec.da_checkpoints)?;
    let mut obs_rng = component_stream(spec.master_seed, &[stream::OBS_NOISE]);
    let observations =
        synthesize_observations(&truths, &spec.obs_error, &spec.obs_op, &mut obs_rng)?;

    let mut filter_rng = component_stream(spec.master_seed, &[stream::FILTER]);
    let mut rank_rng = component_stream(spec.master_seed, &[stream::RANKS]);

    let mut ensemble = spec.ensemble0.clone();
    let mut free_run = spec.ensemble0.mean();
    let mut t = spec.t0;
    let mut records = Vec::with_capacity(spec.da_checkpoints.len());

    for (cycle, &tc) in spec.da_checkpoints.iter().enumerate() {
        let mut step = || -> Result<CycleRecord> {
            let truth = &truths[cycle];
            let forecast = forecast_ensemble(spec.model, &ensemble, t, tc)?;
            free_run = integrate_to(spec.model, &free_run, t, tc)?;

            let forecast_rmse = rmse(&forecast.mean(), truth)?;
            let free_run_rmse = rmse(&free_run, truth)?;

            let result = analyze(
                &spec.filter,
                &forecast,
                &observations[cycle],
                &spec.obs_error,
                &spec.obs_op,
                &mut filter_rng,
            )?;
            let analysis = result.analysis;
            let analysis_rmse = rmse(&analysis.mean(), truth)?;

            let stride = spec.rank_stride.max(1);
            let ranks = (0..spec.model.n_state())
                .step_by(stride)
                .map(|i| {
                    let member_vals: Vec<f64> = analysis.iter().map(|m| m[i]).collect();
                    (i, rank_of_truth(truth[i], &member_vals, &mut rank_rng))
                })
                .collect();

            let stored_analysis = if spec.store_ensembles_every > 0
                && cycle % spec.store_ensembles_every == 0
            {
                Some(analysis.clone())
            } else {
                None
            };

            ensemble = analysis;
            Ok(CycleRecord {
                cycle,
                time: tc,
                forecast_rmse,
                analysis_rmse,
                free_run_rmse,
                ranks,
                stored_analysis,
            })
        };
        records.push(step().map_err(|e| e.at_cycle(cycle))?);
        t = tc;
    }
    Ok(records)
}

/// Spin a state onto the model attractor: integrate for `steps` model steps
/// from a perturbed constant state.
pub fn spinup_state(model: &dyn Model, x0: &StateVector, steps: usize) -> Result<StateVector> {
    let h = model.step_size();
    integrate_to(model, x0, 0.0, steps as f64 * h)
}

/// Initial ensemble: truth state plus i.i.d. Gaussian perturbations.
pub fn initial_ensemble<R: Rng>(
    truth: &StateVector,
    n_ens: usize,
    perturb_std: f64,
    rng: &mut R,
) -> Result<Ensemble> {
    use rand_distr::StandardNormal;
    if n_ens == 0 {
        return Err(Error::EmptyEnsemble);
    }
    Ensemble::new(
        (0..n_ens)
            .map(|_| {
                truth.map(|v| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + perturb_std * z
                })
            })
            .collect(),
    )
}
