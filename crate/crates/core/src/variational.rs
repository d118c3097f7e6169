//! 3D-Var and strong-constraint 4D-Var cost/gradient evaluation, a
//! limited-memory quasi-Newton minimizer, and finite-difference gradient
//! verification.
//!
//! The 4D-Var gradient runs one forward trajectory with every step state
//! checkpointed in memory, then a single reverse sweep through the discrete
//! RK4 adjoint, accumulating the observation-misfit terms at their times.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::la::{Covariance, ObsVector, StateVector};
use crate::models::{rk4_step, rk4_step_adjoint, steps_between, Model, SelectionOperator};

/// One observation inside an assimilation window.
#[derive(Debug, Clone)]
pub struct WindowObservation {
    pub time: f64,
    pub value: ObsVector,
    pub noise: Covariance,
}

/// A variational assimilation problem over `[t0, t_end]`.
pub struct VarProblem<'a> {
    pub background: StateVector,
    pub background_cov: Covariance,
    pub observations: Vec<WindowObservation>,
    pub obs_op: SelectionOperator,
    pub model: &'a dyn Model,
    pub t0: f64,
    pub t_end: f64,
}

impl VarProblem<'_> {
    fn obs_step_index(&self, time: f64) -> Result<usize> {
        steps_between(self.t0, time, self.model.step_size())
    }
}

/// Minimization outcome.
#[derive(Debug, Clone)]
pub struct OptimResult {
    pub minimizer: StateVector,
    pub cost: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// 3D-Var cost and gradient at a single observation time:
/// `J = 1/2 |x - xb|^2_{B^-1} + 1/2 |y - Hx|^2_{R^-1}`,
/// `grad J = B^-1 (x - xb) - H^T R^-1 (y - Hx)`.
pub fn threedvar_cost_grad(
    background: &StateVector,
    background_cov: &Covariance,
    y: &ObsVector,
    obs_cov: &Covariance,
    obs_op: &SelectionOperator,
    x: &StateVector,
) -> Result<(f64, StateVector)> {
    let db = x - background;
    let binv_db = background_cov.inverse_apply(&db)?;
    let misfit = y - obs_op.apply(x)?;
    let rinv_misfit = obs_cov.inverse_apply(&misfit)?;
    let cost = 0.5 * db.dot(&binv_db) + 0.5 * misfit.dot(&rinv_misfit);
    let grad = binv_db - obs_op.adjoint_apply(&rinv_misfit)?;
    Ok((cost, grad))
}

/// 4D-Var cost and gradient: background term plus per-time observation
/// misfits along the trajectory from `x0`; gradient by checkpointed forward
/// run and one reverse adjoint sweep.
pub fn fourdvar_cost_grad(p: &VarProblem<'_>, x0: &StateVector) -> Result<(f64, StateVector)> {
    p.model.check_state(x0)?;
    let h = p.model.step_size();
    let n_steps = steps_between(p.t0, p.t_end, h)?;

    // map each observation onto its step index (errors if off-grid)
    let mut obs_at: Vec<Vec<&WindowObservation>> = vec![Vec::new(); n_steps + 1];
    for obs in &p.observations {
        let idx = p.obs_step_index(obs.time)?;
        if idx > n_steps {
            return Err(Error::TimeGridMisalignment {
                t0: p.t0,
                t1: obs.time,
                h,
            });
        }
        obs_at[idx].push(obs);
    }

    // forward sweep with full checkpointing
    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(x0.clone());
    let mut x = x0.clone();
    for k in 0..n_steps {
        x = rk4_step(|t, y| p.model.rhs(t, y), p.t0 + k as f64 * h, &x, h)?;
        states.push(x.clone());
    }

    let db = x0 - &p.background;
    let binv_db = p.background_cov.inverse_apply(&db)?;
    let mut cost = 0.5 * db.dot(&binv_db);

    // misfit gradient at step k in state space: H^T R^-1 (H x_k - y_k)
    let misfit_grad = |xk: &StateVector, obs: &WindowObservation| -> Result<(f64, StateVector)> {
        let d = p.obs_op.apply(xk)? - &obs.value;
        let rinv_d = obs.noise.inverse_apply(&d)?;
        Ok((0.5 * d.dot(&rinv_d), p.obs_op.adjoint_apply(&rinv_d)?))
    };

    for (k, bucket) in obs_at.iter().enumerate() {
        for obs in bucket {
            let (c, _) = misfit_grad(&states[k], obs)?;
            cost += c;
        }
    }

    // reverse adjoint sweep
    let mut lambda = DVector::zeros(x0.len());
    for k in (0..n_steps).rev() {
        for obs in &obs_at[k + 1] {
            let (_, g) = misfit_grad(&states[k + 1], obs)?;
            lambda += g;
        }
        lambda = rk4_step_adjoint(p.model, p.t0 + k as f64 * h, &states[k], &lambda)?;
    }
    let mut grad = binv_db + lambda;
    for obs in &obs_at[0] {
        let (_, g) = misfit_grad(&states[0], obs)?;
        grad += g;
    }
    Ok((cost, grad))
}

/// Limited-memory BFGS with Armijo backtracking.
///
/// Terminates when the gradient norm falls below `tol * max(1, |g0|)` or after
/// `max_iter` iterations; a failed line search clears the convergence flag
/// instead of raising.
pub fn minimize<F>(cost_grad: F, x_init: &StateVector, tol: f64, max_iter: usize) -> Result<OptimResult>
where
    F: Fn(&StateVector) -> Result<(f64, StateVector)>,
{
    const MEMORY: usize = 10;
    const C1: f64 = 1e-4;
    const MAX_BACKTRACKS: usize = 50;

    let mut x = x_init.clone();
    let (mut cost, mut grad) = cost_grad(&x)?;
    let g0_norm = grad.norm();
    let threshold = tol * g0_norm.max(1.0);

    let mut s_hist: Vec<StateVector> = Vec::new();
    let mut y_hist: Vec<StateVector> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    for iter in 0..max_iter {
        if grad.norm() <= threshold {
            return Ok(OptimResult {
                minimizer: x,
                cost,
                gradient_norm: grad.norm(),
                iterations: iter,
                converged: true,
            });
        }

        // two-loop recursion
        let mut q = grad.clone();
        let mut alphas = Vec::with_capacity(s_hist.len());
        for i in (0..s_hist.len()).rev() {
            let a = rho_hist[i] * s_hist[i].dot(&q);
            q -= &y_hist[i] * a;
            alphas.push(a);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            q *= s.dot(y) / y.norm_squared();
        }
        for (j, i) in (0..s_hist.len()).enumerate() {
            let a = alphas[s_hist.len() - 1 - j];
            let b = rho_hist[i] * y_hist[i].dot(&q);
            q += &s_hist[i] * (a - b);
        }
        let mut direction = -q;
        let mut slope = grad.dot(&direction);
        if slope >= 0.0 {
            // fall back to steepest descent if curvature info is unusable
            direction = -grad.clone();
            slope = -grad.norm_squared();
        }

        // Armijo backtracking
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let cand = &x + &direction * step;
            let (c, g) = cost_grad(&cand)?;
            if c <= cost + C1 * step * slope {
                accepted = Some((cand, c, g));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, c_new, g_new)) = accepted else {
            return Ok(OptimResult {
                minimizer: x,
                cost,
                gradient_norm: grad.norm(),
                iterations: iter,
                converged: false,
            });
        };

        let s = &x_new - &x;
        let yv = &g_new - &grad;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            s_hist.push(s);
            y_hist.push(yv);
            rho_hist.push(1.0 / sy);
            if s_hist.len() > MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
        }
        x = x_new;
        cost = c_new;
        grad = g_new;
    }
    let converged = grad.norm() <= threshold;
    Ok(OptimResult {
        minimizer: x,
        cost,
        gradient_norm: grad.norm(),
        iterations: max_iter,
        converged,
    })
}

/// Compare `<grad, d>` against central differences over random unit
/// directions; returns the maximum relative error.
pub fn gradient_check<F, R>(
    cost_grad: F,
    x: &StateVector,
    directions: usize,
    eps: f64,
    rng: &mut R,
) -> Result<f64>
where
    F: Fn(&StateVector) -> Result<(f64, StateVector)>,
    R: Rng,
{
    let (_, grad) = cost_grad(x)?;
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut d = DVector::from_fn(x.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        d /= d.norm();
        let (c_plus, _) = cost_grad(&(x + &d * eps))?;
        let (c_minus, _) = cost_grad(&(x - &d * eps))?;
        let fd = (c_plus - c_minus) / (2.0 * eps);
        let analytic = grad.dot(&d);
        let rel = (fd - analytic).abs() / analytic.abs().max(1e-30);
        worst = worst.max(rel);
    }
    Ok(worst)
}
