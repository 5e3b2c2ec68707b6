//! Normalization constants for k-closest encoding.
//!
//! With a rotated simplex, encoding `e_1` is the same as encoding a uniform
//! `a ∈ S^{d-1}` against the fixed simplex. The simplex scores are
//! `sqrt(M/(M-1)) a_m - const`, so the top-k messages are the top-k of
//! `a_1..a_M`, and unbiasedness pins
//!
//! ```text
//! r_k = (k e^ε + M - k)/(e^ε - 1) · sqrt((M-1)/M) / C_k
//! ```
//!
//! where `C_k` is the expected sum of the `k` largest among the first `M`
//! coordinates of `a`. For `M` i.i.d. uniform codewords the same argument
//! gives `r_k = (k e^ε + M - k)/(e^ε - 1) / E[Σ_top-k U_{m,1}]`.
//!
//! Expectations are Monte Carlo estimates. Trials are split into fixed-size
//! chunks, each with its own derived stream, and merged in chunk order, so
//! results do not depend on the thread count.

mod cache;

pub use cache::{CacheRecord, CacheStats, CalibrationCache};

use rand::Rng;
use rayon::prelude::*;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::codebook::CodebookKind;
use crate::error::{Error, Result};
use crate::rand_geom::{RandomStream, SpherePrefix, StreamRng};
use crate::stats::MeanAccumulator;

/// Default Monte Carlo trials per calibration.
pub const DEFAULT_TRIALS: usize = 1_000_000;
/// Smallest trial count accepted by the estimators.
pub const MIN_TRIALS: usize = 10_000;

const CHUNK: usize = 8192;

/// Monte Carlo estimate of a top-k expectation: `C_k` for the simplex, or
/// `E[Σ_top-k U_{m,1}]` for the uniform sphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CkEstimate {
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub trials: usize,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub variant: CodebookKind,
    pub m: usize,
    pub d: usize,
    pub eps: f64,
    pub k: usize,
    pub r_k: f64,
    pub ck: CkEstimate,
}

impl Calibration {
    /// Per-user MSE of the calibrated scheme, `r_k² - 1`.
    pub fn error(&self) -> f64 {
        self.r_k * self.r_k - 1.0
    }

    /// Delta-method standard error of [`Calibration::error`] from the
    /// Monte Carlo noise in `ck`.
    pub fn error_stderr(&self) -> f64 {
        2.0 * self.r_k * self.r_k * self.ck.stderr / self.ck.value
    }
}

/// `(k e^ε + M - k) / (e^ε - 1)`, written as `k + M/(e^ε - 1)`.
fn kclosest_gain(m: usize, eps: f64, k: usize) -> f64 {
    k as f64 + m as f64 / eps.exp_m1()
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("epsilon must be positive, got {eps}")))
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(Error::InvalidConfig(format!(
            "calibration needs at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    Ok(())
}

/// Runs `trials` iterations of `body` in parallel chunks and returns the
/// per-chunk states in chunk order.
pub(crate) fn chunked_trials<S, I, F>(trials: usize, stream: &RandomStream, init: I, body: F) -> Vec<S>
where
    S: Send,
    I: Fn() -> S + Sync,
    F: Fn(&mut S, &mut StreamRng) + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(trials - c * CHUNK);
            let mut rng = stream.derive("chunk", c as u64).rng();
            let mut state = init();
            for _ in 0..len {
                body(&mut state, &mut rng);
            }
            state
        })
        .collect()
}

fn merge_columns(parts: Vec<Vec<MeanAccumulator>>) -> Vec<MeanAccumulator> {
    let mut it = parts.into_iter();
    let mut total = it.next().unwrap_or_default();
    for part in it {
        for (t, p) in total.iter_mut().zip(&part) {
            t.merge(p);
        }
    }
    total
}

/// Top-k partial sums for every `k = 1..m-1` of `m` draws from `sample`.
fn topk_sums_all<F>(m: usize, trials: usize, stream: &RandomStream, sample: F) -> Vec<MeanAccumulator>
where
    F: Fn(&mut StreamRng, &mut [f64]) + Sync,
{
    let parts = chunked_trials(
        trials,
        stream,
        || (vec![MeanAccumulator::default(); m - 1], vec![0.0; m]),
        |(acc, buf), rng| {
            sample(rng, buf);
            buf.sort_unstable_by(|a, b| b.total_cmp(a));
            let mut run = 0.0;
            for (a, x) in acc.iter_mut().zip(buf.iter()) {
                run += x;
                a.push(run);
            }
        },
    );
    merge_columns(parts.into_iter().map(|(acc, _)| acc).collect())
}

fn topk_sum_single<F>(m: usize, k: usize, trials: usize, stream: &RandomStream, sample: F) -> MeanAccumulator
where
    F: Fn(&mut StreamRng, &mut [f64]) + Sync,
{
    let parts = chunked_trials(
        trials,
        stream,
        || (MeanAccumulator::default(), vec![0.0; m]),
        |(acc, buf), rng| {
            sample(rng, buf);
            buf.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            acc.push(buf[..k].iter().sum());
        },
    );
    let mut it = parts.into_iter().map(|(a, _)| a);
    let mut total = it.next().unwrap_or_default();
    it.for_each(|a| total.merge(&a));
    total
}

fn to_estimates(m: usize, d: usize, trials: usize, acc: &[MeanAccumulator]) -> Vec<CkEstimate> {
    acc.iter()
        .enumerate()
        .map(|(i, a)| CkEstimate {
            m,
            d,
            k: i + 1,
            trials,
            value: a.mean(),
            stderr: a.stderr(),
        })
        .collect()
}

fn check_simplex_dims(m: usize, d: usize) -> Result<()> {
    if m < 2 || m > d {
        return Err(Error::InvalidConfig(format!(
            "simplex calibration needs 2 <= M <= d, got M={m}, d={d}"
        )));
    }
    Ok(())
}

/// `C_k` for every `k = 1..M-1` from one shared set of draws.
pub fn estimate_ck_all(m: usize, d: usize, trials: usize, stream: &RandomStream) -> Result<Vec<CkEstimate>> {
    check_simplex_dims(m, d)?;
    check_trials(trials)?;
    let prefix = SpherePrefix::new(m, d)?;
    let acc = topk_sums_all(m, trials, stream, |rng, buf| prefix.sample_into(rng, buf));
    Ok(to_estimates(m, d, trials, &acc))
}

/// Expected sum of the `k` largest among the first `M` coordinates of a
/// uniform unit vector in `R^d`.
pub fn estimate_ck(m: usize, d: usize, k: usize, trials: usize, stream: &RandomStream) -> Result<CkEstimate> {
    check_simplex_dims(m, d)?;
    if k == 0 || k >= m {
        return Err(Error::InvalidConfig(format!(
            "C_k needs 1 <= k < M (C_M = 0), got k={k}, M={m}"
        )));
    }
    check_trials(trials)?;
    let prefix = SpherePrefix::new(m, d)?;
    let acc = topk_sum_single(m, k, trials, stream, |rng, buf| prefix.sample_into(rng, buf));
    Ok(CkEstimate {
        m,
        d,
        k,
        trials,
        value: acc.mean(),
        stderr: acc.stderr(),
    })
}

/// Simplex normalization constant for k-closest encoding.
pub fn compute_rk(m: usize, eps: f64, k: usize, ck: &CkEstimate) -> Result<f64> {
    check_eps(eps)?;
    if !(ck.value > 0.0) {
        return Err(Error::Calibration(format!(
            "C_k estimate {} is not positive (M={m}, k={k})",
            ck.value
        )));
    }
    let mf = m as f64;
    Ok(kclosest_gain(m, eps, k) * ((mf - 1.0) / mf).sqrt() / ck.value)
}

/// Uniform-sphere normalization constant for k-closest encoding.
pub fn compute_rk_uniform(m: usize, eps: f64, k: usize, est: &CkEstimate) -> Result<f64> {
    check_eps(eps)?;
    if !(est.value > 0.0) {
        return Err(Error::Calibration(format!(
            "top-k expectation {} is not positive (M={m}, k={k}); increase trials",
            est.value
        )));
    }
    Ok(kclosest_gain(m, eps, k) / est.value)
}

/// Picks the `k` with the smallest `r_k` from a full set of estimates.
/// The smallest minimizing `k` wins ties.
pub fn select_from_estimates(variant: CodebookKind, eps: f64, estimates: &[CkEstimate]) -> Result<Calibration> {
    let first = estimates
        .first()
        .ok_or_else(|| Error::Calibration("no C_k estimates to select from".into()))?;
    let (m, d) = (first.m, first.d);
    let mut best: Option<Calibration> = None;
    for est in estimates {
        let r_k = match variant {
            CodebookKind::RotatedSimplex => compute_rk(m, eps, est.k, est)?,
            CodebookKind::UniformSphere => compute_rk_uniform(m, eps, est.k, est)?,
        };
        if best.is_none_or(|b| r_k < b.r_k) {
            best = Some(Calibration {
                variant,
                m,
                d,
                eps,
                k: est.k,
                r_k,
                ck: *est,
            });
        }
    }
    let cal = best.expect("estimates is nonempty");
    if !(cal.r_k > 1.0) {
        return Err(Error::Calibration(format!(
            "r_k = {} <= 1 for M={m}, d={d}, eps={eps}",
            cal.r_k
        )));
    }
    Ok(cal)
}

/// Error-optimal integer `k` and its `r_k` for the rotated simplex.
pub fn select_k(m: usize, d: usize, eps: f64, trials: usize, stream: &RandomStream) -> Result<Calibration> {
    check_eps(eps)?;
    let est = estimate_ck_all(m, d, trials, stream)?;
    select_from_estimates(CodebookKind::RotatedSimplex, eps, &est)
}

fn uniform_first_coord(d: usize) -> Result<impl Fn(&mut StreamRng, &mut [f64]) + Sync> {
    if d == 0 {
        return Err(Error::InvalidDimension("sphere of dimension 0".into()));
    }
    let tail = if d > 1 {
        Some(ChiSquared::new((d - 1) as f64).map_err(|e| Error::InvalidDimension(e.to_string()))?)
    } else {
        None
    };
    Ok(move |rng: &mut StreamRng, buf: &mut [f64]| {
        for x in buf.iter_mut() {
            *x = sample_first_coordinate(rng, tail.as_ref());
        }
    })
}

/// First coordinate of a uniform unit vector: `g / sqrt(g² + χ²_{d-1})`.
pub(crate) fn sample_first_coordinate<R: Rng + ?Sized>(rng: &mut R, tail: Option<&ChiSquared<f64>>) -> f64 {
    loop {
        let g: f64 = rng.sample(StandardNormal);
        let rest = tail.map_or(0.0, |t| t.sample(rng));
        let sq = g * g + rest;
        if sq > 0.0 {
            return g / sq.sqrt();
        }
    }
}

/// Top-k expectations for `M` i.i.d. uniform codewords, every `k = 1..M-1`.
pub fn estimate_uniform_topk_all(m: usize, d: usize, trials: usize, stream: &RandomStream) -> Result<Vec<CkEstimate>> {
    if m < 2 {
        return Err(Error::InvalidConfig(format!("need M >= 2, got {m}")));
    }
    check_trials(trials)?;
    let sample = uniform_first_coord(d)?;
    let acc = topk_sums_all(m, trials, stream, sample);
    Ok(to_estimates(m, d, trials, &acc))
}

pub fn estimate_uniform_topk(m: usize, d: usize, k: usize, trials: usize, stream: &RandomStream) -> Result<CkEstimate> {
    if m < 2 || k == 0 || k >= m {
        return Err(Error::InvalidConfig(format!(
            "uniform-sphere calibration needs 1 <= k < M, got k={k}, M={m}"
        )));
    }
    check_trials(trials)?;
    let sample = uniform_first_coord(d)?;
    let acc = topk_sum_single(m, k, trials, stream, sample);
    Ok(CkEstimate {
        m,
        d,
        k,
        trials,
        value: acc.mean(),
        stderr: acc.stderr(),
    })
}

/// `r_k` for a codebook of `M` i.i.d. uniform codewords at a fixed `k`.
pub fn rk_uniform_sphere(m: usize, d: usize, eps: f64, k: usize, trials: usize, stream: &RandomStream) -> Result<f64> {
    let est = estimate_uniform_topk(m, d, k, trials, stream)?;
    compute_rk_uniform(m, eps, k, &est)
}

/// Like [`rk_uniform_sphere`] but keeps the estimate for error bars.
pub fn calibrate_uniform_sphere(m: usize, d: usize, eps: f64, k: usize, trials: usize, stream: &RandomStream) -> Result<Calibration> {
    let est = estimate_uniform_topk(m, d, k, trials, stream)?;
    let r_k = compute_rk_uniform(m, eps, k, &est)?;
    Ok(Calibration {
        variant: CodebookKind::UniformSphere,
        m,
        d,
        eps,
        k,
        r_k,
        ck: est,
    })
}

/// Error-optimal integer `k` for the uniform-sphere codebook.
pub fn select_k_uniform_sphere(m: usize, d: usize, eps: f64, trials: usize, stream: &RandomStream) -> Result<Calibration> {
    check_eps(eps)?;
    let est = estimate_uniform_topk_all(m, d, trials, stream)?;
    select_from_estimates(CodebookKind::UniformSphere, eps, &est)
}

/// Stream used for a calibration keyed by `(variant, M, d, seed)`.
pub fn calibration_stream(label: &str, m: usize, d: usize, seed: u64) -> RandomStream {
    RandomStream::new(seed)
        .derive("calibration", 0)
        .derive(label, m as u64)
        .derive("d", d as u64)
}
