//! Numeric containers and ensemble statistics used by every other module.
//!
//! State and observation vectors are dense `f64` vectors. Covariances are an
//! enum of operators: diagonal, dense, matrix-free ensemble, and tapered
//! ensemble. The ensemble variants never materialize the full
//! `n_state x n_state` matrix.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense vector in model state space.
pub type StateVector = DVector<f64>;
/// Dense vector in observation space.
pub type ObsVector = DVector<f64>;

/// Ordered list of equally sized state vectors.
///
/// Member order is stable: member index is meaningful for pairing with
/// perturbed observations in stochastic filters.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<StateVector>,
}

impl Ensemble {
    pub fn new(members: Vec<StateVector>) -> Result<Self> {
        let first = members.first().ok_or(Error::EmptyEnsemble)?;
        let dim = first.len();
        for m in &members {
            if m.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.len(),
                });
            }
        }
        Ok(Ensemble { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// State dimension shared by all members.
    pub fn dim(&self) -> usize {
        self.members[0].len()
    }

    pub fn members(&self) -> &[StateVector] {
        &self.members
    }

    pub fn iter(&self) -> std::slice::Iter<'_, StateVector> {
        self.members.iter()
    }

    pub fn into_members(self) -> Vec<StateVector> {
        self.members
    }

    /// Entrywise arithmetic mean of the members.
    pub fn mean(&self) -> StateVector {
        let mut acc = DVector::zeros(self.dim());
        for m in &self.members {
            acc += m;
        }
        acc / self.members.len() as f64
    }

    /// Deviations of each member from the ensemble mean.
    ///
    /// Requires at least two members; the output mean is the zero vector.
    pub fn anomalies(&self) -> Result<Ensemble> {
        if self.members.len() < 2 {
            return Err(Error::DegenerateEnsemble);
        }
        let mean = self.mean();
        Ok(Ensemble {
            members: self.members.iter().map(|m| m - &mean).collect(),
        })
    }

    /// Anomalies packed into an `n_state x n_ens` matrix.
    pub fn anomaly_matrix(&self) -> Result<DMatrix<f64>> {
        let an = self.anomalies()?;
        Ok(DMatrix::from_columns(&an.members))
    }

    /// Per-coordinate unbiased sample variance.
    pub fn variance(&self) -> Result<StateVector> {
        let an = self.anomalies()?;
        let mut acc = DVector::zeros(self.dim());
        for m in &an.members {
            acc += m.component_mul(m);
        }
        Ok(acc / (self.members.len() - 1) as f64)
    }
}

/// Covariance abstraction: apply, inverse-apply, square-root sampling action,
/// and diagonal extraction.
///
/// The ensemble variants act through the anomalies with the unbiased
/// `1/(n_ens - 1)` normalization.
#[derive(Debug, Clone)]
pub enum Covariance {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
    /// Matrix-free `A A^T / (n - 1)` built from ensemble anomalies.
    Ensemble { anomalies: Vec<DVector<f64>> },
    /// Ensemble covariance with an entrywise (Schur) taper applied.
    TaperedEnsemble {
        anomalies: Vec<DVector<f64>>,
        taper: DMatrix<f64>,
    },
}

impl Covariance {
    pub fn diagonal(entries: DVector<f64>) -> Result<Self> {
        if entries.iter().any(|&d| d <= 0.0 || !d.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Covariance::Diagonal(entries))
    }

    pub fn scaled_identity(dim: usize, variance: f64) -> Result<Self> {
        Self::diagonal(DVector::from_element(dim, variance))
    }

    /// Matrix-free covariance of `ens` (anomalies kept, matrix never formed).
    pub fn from_ensemble(ens: &Ensemble) -> Result<Self> {
        Ok(Covariance::Ensemble {
            anomalies: ens.anomalies()?.into_members(),
        })
    }

    pub fn from_ensemble_tapered(ens: &Ensemble, taper: DMatrix<f64>) -> Result<Self> {
        let dim = ens.dim();
        if taper.nrows() != dim || taper.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: taper.nrows(),
            });
        }
        Ok(Covariance::TaperedEnsemble {
            anomalies: ens.anomalies()?.into_members(),
            taper,
        })
    }

    /// Dimension of the space the covariance acts on.
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(d) => d.len(),
            Covariance::Dense(m) => m.nrows(),
            Covariance::Ensemble { anomalies } => anomalies[0].len(),
            Covariance::TaperedEnsemble { anomalies, .. } => anomalies[0].len(),
        }
    }

    fn check_dim(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Compute `C v`.
    pub fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(v)?;
        match self {
            Covariance::Diagonal(d) => Ok(d.component_mul(v)),
            Covariance::Dense(m) => Ok(m * v),
            Covariance::Ensemble { anomalies } => {
                let scale = 1.0 / (anomalies.len() - 1) as f64;
                let mut acc = DVector::zeros(v.len());
                for a in anomalies {
                    acc += a * (a.dot(v) * scale);
                }
                Ok(acc)
            }
            Covariance::TaperedEnsemble { anomalies, taper } => {
                let n = v.len();
                let scale = 1.0 / (anomalies.len() - 1) as f64;
                let mut out = DVector::zeros(n);
                // (taper o B) v, row by row through the anomalies
                for i in 0..n {
                    let mut sum = 0.0;
                    for a in anomalies {
                        let mut inner = 0.0;
                        for j in 0..n {
                            inner += taper[(i, j)] * a[j] * v[j];
                        }
                        sum += a[i] * inner;
                    }
                    out[i] = sum * scale;
                }
                Ok(out)
            }
        }
    }

    /// Solve `C x = v` for invertible variants.
    pub fn inverse_apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dim(v)?;
        match self {
            Covariance::Diagonal(d) => Ok(v.component_div(d)),
            Covariance::Dense(m) => {
                let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
                Ok(chol.solve(v))
            }
            Covariance::Ensemble { .. } | Covariance::TaperedEnsemble { .. } => {
                Err(Error::SingularCovariance)
            }
        }
    }

    /// Square-root action `C^{1/2} z` on a standard-normal draw.
    pub fn sqrt_apply(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Covariance::Diagonal(d) => {
                self.check_dim(z)?;
                Ok(d.map(f64::sqrt).component_mul(z))
            }
            Covariance::Dense(m) => {
                self.check_dim(z)?;
                let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
                Ok(chol.l() * z)
            }
            // z lives in ensemble space here: (1/sqrt(n-1)) sum_i a_i z_i
            Covariance::Ensemble { anomalies } => {
                if z.len() != anomalies.len() {
                    return Err(Error::DimensionMismatch {
                        expected: anomalies.len(),
                        got: z.len(),
                    });
                }
                let scale = 1.0 / ((anomalies.len() - 1) as f64).sqrt();
                let mut acc = DVector::zeros(anomalies[0].len());
                for (a, &zi) in anomalies.iter().zip(z.iter()) {
                    acc += a * (zi * scale);
                }
                Ok(acc)
            }
            Covariance::TaperedEnsemble { .. } => Err(Error::SingularCovariance),
        }
    }

    /// Draw one sample with covariance `C` and zero mean.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let z_dim = match self {
            Covariance::Ensemble { anomalies } => anomalies.len(),
            _ => self.dim(),
        };
        let z = DVector::from_fn(z_dim, |_, _| rng.sample(StandardNormal));
        self.sqrt_apply(&z)
    }

    /// Diagonal of the covariance.
    pub fn diagonal_entries(&self) -> DVector<f64> {
        match self {
            Covariance::Diagonal(d) => d.clone(),
            Covariance::Dense(m) => m.diagonal(),
            Covariance::Ensemble { anomalies } => {
                let scale = 1.0 / (anomalies.len() - 1) as f64;
                let mut acc = DVector::zeros(anomalies[0].len());
                for a in anomalies {
                    acc += a.component_mul(a);
                }
                acc * scale
            }
            Covariance::TaperedEnsemble { anomalies, taper } => {
                let scale = 1.0 / (anomalies.len() - 1) as f64;
                let mut acc = DVector::zeros(anomalies[0].len());
                for a in anomalies {
                    acc += a.component_mul(a);
                }
                // taper diagonal is 1 at distance 0, kept explicit anyway
                DVector::from_fn(acc.len(), |i, _| acc[i] * scale * taper[(i, i)])
            }
        }
    }

    /// Materialize the covariance as a dense matrix (small problems only).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        match self {
            Covariance::Diagonal(d) => DMatrix::from_diagonal(d),
            Covariance::Dense(m) => m.clone(),
            Covariance::Ensemble { anomalies } => {
                let scale = 1.0 / (anomalies.len() - 1) as f64;
                let mut acc = DMatrix::zeros(n, n);
                for a in anomalies {
                    acc += a * a.transpose() * scale;
                }
                acc
            }
            Covariance::TaperedEnsemble { anomalies, taper } => {
                let scale = 1.0 / (anomalies.len() - 1) as f64;
                let mut acc = DMatrix::zeros(n, n);
                for a in anomalies {
                    acc += a * a.transpose() * scale;
                }
                acc.component_mul(taper)
            }
        }
    }
}
