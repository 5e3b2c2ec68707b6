use rand::Rng;

use crate::codebook::rank_descending;
use crate::error::{Error, Result};

/// A distribution over the `M` messages.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub const SUM_TOL: f64 = 1e-12;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    /// Normalizes nonnegative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Encode(format!("weights sum to {total}")));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `max_m p_m / min_m p_m`.
    pub fn max_min_ratio(&self) -> f64 {
        let max = self.0.iter().copied().fold(f64::MIN, f64::max);
        let min = self.0.iter().copied().fold(f64::MAX, f64::min);
        max / min
    }

    /// `max_m p_m / q_m`: the privacy loss against another input.
    pub fn max_ratio_against(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(p, q)| p / q)
            .fold(0.0, f64::max)
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.0.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left u above the last partial sum.
        self.0.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// k-closest assignment: the `⌊k⌋` best-scoring messages get `e^ε q0`, the
/// next one gets `((k - ⌊k⌋)(e^ε - 1) + 1) q0`, the rest get `q0`, with
/// `q0 = 1 / (k e^ε + M - k)`. Equal scores rank the lower index first.
pub fn kclosest_probs(scores: &[f64], k: f64, eps: f64, m: usize) -> Result<ProbabilityVector> {
    if scores.len() != m {
        return Err(Error::InvalidInput(format!(
            "{} scores for a codebook of size {m}",
            scores.len()
        )));
    }
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::InvalidConfig(format!("epsilon must be positive, got {eps}")));
    }
    if !(k >= 1.0 && k <= (m as f64 - 1.0)) {
        return Err(Error::InvalidConfig(format!("k must lie in [1, M-1], got k={k}, M={m}")));
    }
    let e = eps.exp();
    let q0 = 1.0 / (k * e + m as f64 - k);
    let whole = k.floor() as usize;
    let mid = ((k - k.floor()) * eps.exp_m1() + 1.0) * q0;
    let mut probs = vec![q0; m];
    for (rank, &idx) in rank_descending(scores).iter().enumerate() {
        if rank < whole {
            probs[idx] = e * q0;
        } else if rank == whole {
            probs[idx] = mid;
            break;
        }
    }
    ProbabilityVector::new(probs)
}
