//! Gaussian cap mechanism.
//!
//! With probability `p` the output direction is a Gaussian `Z ~ N(0, I/d)`
//! conditioned on `<Z, v> >= γ`, otherwise conditioned on `<Z, v> < γ`; the
//! result is divided by `E<Z, v>` to make it unbiased. Relative to the
//! Gaussian base measure the output density takes only two values,
//! `p / P(X >= γ)` and `(1-p) / P(X < γ)`, whose ratio is the privacy loss.
//!
//! Everything below is expressed in units of the Gaussian's standard
//! deviation; the unbiased output does not depend on it.

use rand::Rng;
use rand_distr::{OpenClosed01, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};

use crate::error::{Error, Result};
use crate::rand_geom::{dot, RandomStream, UnitVector};

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

const SEARCH_LO: f64 = -2.0;
const SEARCH_HI: f64 = 12.0;
const GRID_STEP: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivUnitGParams {
    eps: f64,
    d: usize,
    /// Cap threshold in standard deviations.
    threshold: f64,
    /// Probability of the cap branch.
    p: f64,
    /// `P(X < threshold)` for standard normal `X`.
    below: f64,
    /// `P(X >= threshold)`.
    above: f64,
    /// `E<Z, v>` in standard deviations.
    mean_proj: f64,
}

impl PrivUnitGParams {
    /// Explicit `(threshold, p)`. Fails unless the two density levels are
    /// within a factor `e^ε` of each other and the estimator is well defined.
    pub fn new(eps: f64, d: usize, threshold: f64, p: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {eps}")));
        }
        if d == 0 {
            return Err(Error::InvalidDimension("PrivUnitG in dimension 0".into()));
        }
        if !threshold.is_finite() || !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "infeasible PrivUnitG parameters threshold={threshold}, p={p}"
            )));
        }
        let below = normal_cdf(threshold);
        let above = normal_cdf(-threshold);
        if !(below > 0.0 && above > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "PrivUnitG threshold {threshold} leaves an empty branch"
            )));
        }
        let pdf = normal_pdf(threshold);
        let params = Self {
            eps,
            d,
            threshold,
            p,
            below,
            above,
            mean_proj: pdf * (p / above - (1.0 - p) / below),
        };
        let loss = params.privacy_loss();
        if !(loss <= eps + 1e-12) || !(params.mean_proj > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "PrivUnitG parameters threshold={threshold}, p={p} give privacy loss {loss} > {eps}"
            )));
        }
        Ok(params)
    }

    /// Largest feasible `p` for the given threshold, so the loss is exactly ε.
    pub fn with_threshold(eps: f64, d: usize, threshold: f64) -> Result<Self> {
        let below = normal_cdf(threshold);
        let above = normal_cdf(-threshold);
        let odds = eps.exp() * above / below;
        let p = odds / (1.0 + odds);
        Self::new(eps, d, threshold, p)
    }

    /// Threshold minimizing the per-user MSE: a grid scan followed by
    /// golden-section refinement around the best grid point.
    pub fn optimized(eps: f64, d: usize) -> Result<Self> {
        let mse_at = |t: f64| Self::with_threshold(eps, d, t).map(|p| p.mse()).unwrap_or(f64::INFINITY);
        let steps = ((SEARCH_HI - SEARCH_LO) / GRID_STEP).round() as usize;
        let mut best_t = SEARCH_LO;
        let mut best = f64::INFINITY;
        for i in 0..=steps {
            let t = SEARCH_LO + i as f64 * GRID_STEP;
            let v = mse_at(t);
            if v < best {
                best = v;
                best_t = t;
            }
        }
        if !best.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "no feasible PrivUnitG threshold for eps={eps}, d={d}"
            )));
        }
        let t = golden_section(mse_at, best_t - GRID_STEP, best_t + GRID_STEP, 1e-10);
        let t = if mse_at(t) <= best { t } else { best_t };
        Self::with_threshold(eps, d, t)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Threshold in standard deviations.
    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Threshold on `<Z, v>` for `Z ~ N(0, I/d)`.
    pub fn gamma(&self) -> f64 {
        self.threshold / (self.d as f64).sqrt()
    }

    /// Density relative to the base measure inside and outside the cap.
    pub fn cap_weights(&self) -> (f64, f64) {
        (self.p / self.above, (1.0 - self.p) / self.below)
    }

    /// `ln` of the ratio between the two density levels.
    pub fn privacy_loss(&self) -> f64 {
        let (hi, lo) = self.cap_weights();
        (hi / lo).ln().abs()
    }

    /// Unbiasing divisor, in standard deviations.
    pub fn mean_projection(&self) -> f64 {
        self.mean_proj
    }

    /// Closed-form per-user MSE `E|Z|² / E<Z,v>² - 1`.
    pub fn mse(&self) -> f64 {
        let t = self.threshold;
        let pdf = normal_pdf(t);
        let along = self.p * (1.0 + t * pdf / self.above) + (1.0 - self.p) * (1.0 - t * pdf / self.below);
        (along + (self.d - 1) as f64) / (self.mean_proj * self.mean_proj) - 1.0
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Debug)]
pub struct PrivUnitG {
    params: PrivUnitGParams,
}

impl PrivUnitG {
    pub fn new(params: PrivUnitGParams) -> Self {
        Self { params }
    }

    pub fn optimized(eps: f64, d: usize) -> Result<Self> {
        PrivUnitGParams::optimized(eps, d).map(Self::new)
    }

    pub fn params(&self) -> &PrivUnitGParams {
        &self.params
    }

    /// Draws the standardized projection onto `v`, from the cap branch
    /// (`X >= t`) or its complement, by inverse CDF.
    pub(crate) fn sample_projection<R: Rng + ?Sized>(&self, rng: &mut R, in_cap: bool) -> f64 {
        let t = self.params.threshold;
        let u: f64 = rng.sample(OpenClosed01);
        if in_cap {
            // Reflect into the lower tail for accuracy when t is large.
            (-normal_quantile(u * self.params.above)).max(t)
        } else {
            normal_quantile(u * self.params.below).min(t)
        }
    }

    /// Unbiased private estimate of `v`. Uses only private randomness.
    pub fn encode(&self, v: &UnitVector, private: &RandomStream) -> Result<Vec<f64>> {
        if v.dim() != self.params.d {
            return Err(Error::InvalidInput(format!(
                "vector of dimension {} given to a PrivUnitG for dimension {}",
                v.dim(),
                self.params.d
            )));
        }
        let mut rng = private.rng();
        let in_cap = rng.random::<f64>() < self.params.p;
        let x = self.sample_projection(&mut rng, in_cap);
        let mut z: Vec<f64> = (0..v.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let along = dot(&z, v.as_slice());
        let inv = self.params.mean_proj.recip();
        for (zi, vi) in z.iter_mut().zip(v.as_slice()) {
            *zi = (*zi + (x - along) * vi) * inv;
        }
        Ok(z)
    }
}
