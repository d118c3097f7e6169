//! Multiplicative inflation and Gaspari-Cohn covariance localization.
//!
//! Localization builds compactly supported taper fields from the GC99
//! fifth-order piecewise-rational correlation function and applies them as
//! entrywise (Schur/Hadamard) products, either on observation-space fields
//! (`HB`, `HBH^T`) or directly on a state-space covariance.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::la::Ensemble;

/// Distance metric between grid indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridMetric {
    /// 1-D periodic grid: `d(i,j) = min(|i-j|, period - |i-j|)`.
    Periodic { period: usize },
    /// Plain 1-D distance `|i - j|`.
    Plane,
}

impl GridMetric {
    pub fn distance(&self, i: usize, j: usize) -> Result<f64> {
        let d = i.abs_diff(j);
        match *self {
            GridMetric::Periodic { period } => {
                if period == 0 {
                    return Err(Error::InvalidPeriod(0));
                }
                let d = d % period;
                Ok(d.min(period - d) as f64)
            }
            GridMetric::Plane => Ok(d as f64),
        }
    }
}

/// Where the Schur product is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalizationSpace {
    /// Decorrelate `HB` and `HBH^T` (default for ensemble filters).
    ObservationSpace,
    /// Taper an explicit state-space `B` (exact-KF pathway).
    StateSpace,
}

/// Gaspari-Cohn localization with radius `c` (support dies at `2c`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizationSpec {
    pub radius: f64,
    pub metric: GridMetric,
    pub space: LocalizationSpace,
}

impl LocalizationSpec {
    pub fn periodic_obs_space(radius: f64, period: usize) -> Result<Self> {
        if radius <= 0.0 {
            return Err(Error::NonPositiveRadius(radius));
        }
        if period == 0 {
            return Err(Error::InvalidPeriod(0));
        }
        Ok(LocalizationSpec {
            radius,
            metric: GridMetric::Periodic { period },
            space: LocalizationSpace::ObservationSpace,
        })
    }
}

/// Multiplicative inflation factor about the ensemble mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InflationSpec {
    pub factor: f64,
}

impl InflationSpec {
    pub fn new(factor: f64) -> Result<Self> {
        if factor <= 0.0 {
            return Err(Error::NonPositiveInflation(factor));
        }
        Ok(InflationSpec { factor })
    }
}

/// Scale every anomaly about the ensemble mean by the inflation factor.
/// The mean is preserved exactly.
pub fn inflate(ens: &Ensemble, spec: InflationSpec) -> Result<Ensemble> {
    if ens.len() < 2 {
        return Err(Error::DegenerateEnsemble);
    }
    let mean = ens.mean();
    Ensemble::new(
        ens.iter()
            .map(|m| &mean + (m - &mean) * spec.factor)
            .collect(),
    )
}

/// The GC99 compactly supported fifth-order piecewise-rational correlation
/// function with radius `c`; zero for `r >= 2c`.
pub fn gaspari_cohn(r: f64, c: f64) -> f64 {
    debug_assert!(r >= 0.0 && c > 0.0);
    let z = r / c;
    if z < 1.0 {
        // -1/4 z^5 + 1/2 z^4 + 5/8 z^3 - 5/3 z^2 + 1
        ((((-0.25 * z + 0.5) * z + 0.625) * z - 5.0 / 3.0) * z * z) + 1.0
    } else if z < 2.0 {
        // 1/12 z^5 - 1/2 z^4 + 5/8 z^3 + 5/3 z^2 - 5 z + 4 - 2/(3z)
        (((((z / 12.0 - 0.5) * z + 0.625) * z + 5.0 / 3.0) * z - 5.0) * z + 4.0)
            - 2.0 / (3.0 * z)
    } else {
        0.0
    }
}

/// Taper field `t[i][j] = gc(d(grid_a[i], grid_b[j]), c)`.
pub fn localization_taper(
    spec: &LocalizationSpec,
    grid_a: &[usize],
    grid_b: &[usize],
) -> Result<DMatrix<f64>> {
    if spec.radius <= 0.0 {
        return Err(Error::NonPositiveRadius(spec.radius));
    }
    let mut t = DMatrix::zeros(grid_a.len(), grid_b.len());
    for (i, &a) in grid_a.iter().enumerate() {
        for (j, &b) in grid_b.iter().enumerate() {
            t[(i, j)] = gaspari_cohn(spec.metric.distance(a, b)?, spec.radius);
        }
    }
    Ok(t)
}

/// Schur-decorrelate the observation-space fields `HB` (n_obs x n_state) and
/// `HBH^T` (n_obs x n_obs); obs locations are the observed grid indices.
pub fn localize_obs_space(
    hb: &DMatrix<f64>,
    hbht: &DMatrix<f64>,
    spec: &LocalizationSpec,
    obs_indices: &[usize],
    n_state: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if hb.nrows() != obs_indices.len() || hbht.nrows() != obs_indices.len() {
        return Err(Error::DimensionMismatch {
            expected: obs_indices.len(),
            got: hb.nrows(),
        });
    }
    if hb.ncols() != n_state {
        return Err(Error::DimensionMismatch {
            expected: n_state,
            got: hb.ncols(),
        });
    }
    let grid: Vec<usize> = (0..n_state).collect();
    let t_os = localization_taper(spec, obs_indices, &grid)?;
    let t_oo = localization_taper(spec, obs_indices, obs_indices)?;
    Ok((hb.component_mul(&t_os), hbht.component_mul(&t_oo)))
}
