//! Verification metrics: RMSE, rank histograms, Beta fits, KL-to-uniform,
//! and average bin distance.

use nalgebra::DVector;
use rand::Rng;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

/// Root-mean-squared difference between two equally sized vectors.
pub fn rmse(estimate: &DVector<f64>, truth: &DVector<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: estimate.len(),
        });
    }
    let n = estimate.len() as f64;
    Ok(((estimate - truth).norm_squared() / n).sqrt())
}

/// Rank of the truth among the sorted member values, in `[0, n_ens]`.
/// Ties are broken uniformly at random among the admissible positions.
pub fn rank_of_truth<R: Rng>(truth: f64, members: &[f64], rng: &mut R) -> u32 {
    let below = members.iter().filter(|&&m| m < truth).count() as u32;
    let equal = members.iter().filter(|&&m| m == truth).count() as u32;
    if equal == 0 {
        below
    } else {
        below + rng.random_range(0..=equal)
    }
}

/// Histogram of truth ranks across `n_ens + 1` bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankHistogram {
    counts: Vec<u64>,
}

impl RankHistogram {
    pub fn new(n_ens: usize) -> Self {
        RankHistogram {
            counts: vec![0; n_ens + 1],
        }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        RankHistogram { counts }
    }

    pub fn record(&mut self, rank: u32) {
        self.counts[rank as usize] += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Associative merge (counts add); bin layouts must match.
    pub fn merge(&mut self, other: &RankHistogram) {
        assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }
}

/// Parameters of a Beta distribution fitted to scaled ranks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaFit {
    pub alpha: f64,
    pub beta: f64,
}

/// Method-of-moments Beta fit on ranks mapped to bin midpoints
/// `(r + 0.5) / n_bins`.
pub fn fit_beta(hist: &RankHistogram) -> Result<BetaFit> {
    let total = hist.total();
    if total < 2 {
        return Err(Error::DegenerateHistogram);
    }
    let n_bins = hist.n_bins() as f64;
    let mut mean = 0.0;
    for (r, &c) in hist.counts().iter().enumerate() {
        mean += (r as f64 + 0.5) / n_bins * c as f64;
    }
    mean /= total as f64;
    let mut var = 0.0;
    for (r, &c) in hist.counts().iter().enumerate() {
        let x = (r as f64 + 0.5) / n_bins - mean;
        var += x * x * c as f64;
    }
    var /= (total - 1) as f64;
    if var <= 0.0 {
        return Err(Error::DegenerateHistogram);
    }
    let common = mean * (1.0 - mean) / var - 1.0;
    let fit = BetaFit {
        alpha: mean * common,
        beta: (1.0 - mean) * common,
    };
    if !(fit.alpha > 0.0 && fit.beta > 0.0 && fit.alpha.is_finite() && fit.beta.is_finite()) {
        return Err(Error::NonPositiveBetaParams {
            alpha: fit.alpha,
            beta: fit.beta,
        });
    }
    Ok(fit)
}

fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `D_KL(Beta(alpha, beta) || Beta(1, 1))`, the closed-form divergence of the
/// fitted rank distribution from uniform.
pub fn kl_beta_to_uniform(fit: BetaFit) -> Result<f64> {
    let (a, b) = (fit.alpha, fit.beta);
    if a <= 0.0 || b <= 0.0 {
        return Err(Error::NonPositiveBetaParams { alpha: a, beta: b });
    }
    // ln B(1,1) = 0
    Ok(-ln_beta_fn(a, b) + (a - 1.0) * digamma(a) + (b - 1.0) * digamma(b)
        - (a + b - 2.0) * digamma(a + b))
}

/// Mean absolute deviation of bin frequencies from the uniform height.
pub fn avg_bin_distance(hist: &RankHistogram) -> f64 {
    let n_bins = hist.n_bins() as f64;
    let total = hist.total() as f64;
    if total == 0.0 {
        return 0.0;
    }
    hist.counts()
        .iter()
        .map(|&c| (c as f64 / total - 1.0 / n_bins).abs())
        .sum::<f64>()
        / n_bins
}
