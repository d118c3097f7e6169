//! Gaussian background/observation error models: sampling, covariance access,
//! and quadratic log-density evaluation.

use nalgebra::DVector;
use rand::Rng;

use crate::error::Result;
use crate::la::Covariance;

/// Space the error model lives in, kept for dimension bookkeeping only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorSpace {
    State,
    Observation,
}

/// A Gaussian error model with (conventionally zero) mean and a covariance
/// operator. Correlated errors are supported through the dense and tapered
/// covariance variants.
#[derive(Debug, Clone)]
pub struct GaussianErrorModel {
    pub mean: DVector<f64>,
    pub covariance: Covariance,
    pub space: ErrorSpace,
}

impl GaussianErrorModel {
    pub fn zero_mean(covariance: Covariance, space: ErrorSpace) -> Self {
        let mean = DVector::zeros(covariance.dim());
        GaussianErrorModel {
            mean,
            covariance,
            space,
        }
    }

    /// Uncorrelated model with a single standard deviation on every entry.
    pub fn iid(dim: usize, std: f64, space: ErrorSpace) -> Result<Self> {
        Ok(Self::zero_mean(
            Covariance::scaled_identity(dim, std * std)?,
            space,
        ))
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    /// Draw `mean + C^{1/2} z` from the caller-supplied stream.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<DVector<f64>> {
        Ok(&self.mean + self.covariance.sample(rng)?)
    }

    /// `1/2 (v - mean)^T C^{-1} (v - mean)`, the negative-log density up to
    /// its normalization constant.
    pub fn log_density_quadratic(&self, v: &DVector<f64>) -> Result<f64> {
        let d = v - &self.mean;
        let solved = self.covariance.inverse_apply(&d)?;
        Ok(0.5 * d.dot(&solved))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn vanishing_variance_sampling_collapses_to_mean() {
        let em = GaussianErrorModel::iid(4, 1e-15, ErrorSpace::State).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..10 {
            let s = em.sample(&mut rng).unwrap();
            assert!(s.amax() < 1e-14);
        }
    }

    #[test]
    fn sample_variance_concentrates() {
        let em = GaussianErrorModel::iid(1, 2.0, ErrorSpace::Observation).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let s = em.sample(&mut rng).unwrap()[0];
            sum += s;
            sumsq += s * s;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((var - 4.0).abs() < 0.2, "sample variance {var}");
    }

    #[test]
    fn fixed_seed_reproduces_sequence() {
        let em = GaussianErrorModel::iid(3, 1.5, ErrorSpace::State).unwrap();
        let mut a = ChaCha12Rng::seed_from_u64(5);
        let mut b = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..8 {
            assert_eq!(em.sample(&mut a).unwrap(), em.sample(&mut b).unwrap());
        }
    }

    #[test]
    fn log_density_zero_at_mean() {
        let em = GaussianErrorModel::iid(4, 2.0, ErrorSpace::State).unwrap();
        assert_eq!(em.log_density_quadratic(&DVector::zeros(4)).unwrap(), 0.0);
    }

    #[test]
    fn log_density_hand_case_diagonal() {
        let em = GaussianErrorModel::zero_mean(
            Covariance::diagonal(DVector::from_column_slice(&[2.0, 2.0])).unwrap(),
            ErrorSpace::State,
        );
        let v = DVector::from_column_slice(&[2.0, 0.0]);
        assert_relative_eq!(em.log_density_quadratic(&v).unwrap(), 1.0);
    }

    #[test]
    fn log_density_dense_case() {
        let em = GaussianErrorModel::zero_mean(
            Covariance::Dense(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])),
            ErrorSpace::State,
        );
        // C^{-1}(3,3) = (1,1), so 0.5 * (3,3).(1,1) = 3
        let v = DVector::from_column_slice(&[3.0, 3.0]);
        assert_relative_eq!(em.log_density_quadratic(&v).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn log_density_positive_away_from_mean() {
        let em = GaussianErrorModel::iid(3, 1.0, ErrorSpace::State).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..50 {
            let v = DVector::from_fn(3, |_, _| {
                rand::Rng::random_range(&mut rng, -5.0..5.0)
            });
            let q = em.log_density_quadratic(&v).unwrap();
            if v.amax() > 1e-12 {
                assert!(q > 0.0);
            }
        }
    }

    #[test]
    fn empirical_covariance_matches_dense_target() {
        // correlated 2-D target, 1e5 samples, 5% Frobenius tolerance
        let target = DMatrix::from_row_slice(2, 2, &[2.0, 0.8, 0.8, 1.0]);
        let em = GaussianErrorModel::zero_mean(
            Covariance::Dense(target.clone()),
            ErrorSpace::Observation,
        );
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let n = 100_000;
        let mut acc = DMatrix::zeros(2, 2);
        let mut mean = DVector::zeros(2);
        let samples: Vec<_> = (0..n).map(|_| em.sample(&mut rng).unwrap()).collect();
        for s in &samples {
            mean += s;
        }
        mean /= n as f64;
        for s in &samples {
            let d = s - &mean;
            acc += &d * d.transpose();
        }
        acc /= (n - 1) as f64;
        let err = (&acc - &target).norm() / target.norm();
        assert!(err < 0.05, "Frobenius relative error {err}");
    }
}
