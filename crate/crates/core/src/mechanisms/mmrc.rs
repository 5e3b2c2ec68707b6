//! Minimal random coding: importance-sampled compression of PrivUnitG.
//!
//! `M = 2^b` candidates are drawn uniformly from the sphere with shared
//! randomness; candidate `m` is chosen with probability proportional to the
//! PrivUnitG density level of `<u_m, v>` and the decoder returns `β u_m`.
//! `β` is a Monte Carlo calibration that makes the estimate unbiased.

use rand_distr::ChiSquared;

use crate::calibration::{chunked_trials, sample_first_coordinate};
use crate::error::{Error, Result};
use crate::rand_geom::{dot, uniform_sphere, RandomStream, UnitVector};
use crate::stats::MeanAccumulator;

use super::privunitg::PrivUnitGParams;
use super::{Message, ProbabilityVector};

/// `E[<u_m*, v>]` for the selected candidate, with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionEstimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug)]
pub struct Mmrc {
    bits: u32,
    params: PrivUnitGParams,
    beta: f64,
}

impl Mmrc {
    pub fn new(bits: u32, params: PrivUnitGParams, beta: f64) -> Result<Self> {
        if bits == 0 || bits > 24 {
            return Err(Error::InvalidConfig(format!("MMRC needs 1..=24 bits, got {bits}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::Calibration(format!("MMRC scale must be positive, got {beta}")));
        }
        Ok(Self { bits, params, beta })
    }

    /// Monte Carlo `E[<u_m*, v>]`; by rotational symmetry `v = e_1` suffices,
    /// and only the first coordinate of each candidate is needed.
    pub fn estimate_projection(bits: u32, params: &PrivUnitGParams, trials: usize, stream: &RandomStream) -> Result<ProjectionEstimate> {
        if trials == 0 {
            return Err(Error::InvalidConfig("MMRC calibration needs trials > 0".into()));
        }
        let m = 1usize << bits;
        let d = params.d();
        let tail = if d > 1 {
            Some(ChiSquared::new((d - 1) as f64).map_err(|e| Error::InvalidDimension(e.to_string()))?)
        } else {
            None
        };
        let gamma = params.gamma();
        let (hi, lo) = params.cap_weights();
        let parts = chunked_trials(trials, stream, MeanAccumulator::default, |acc, rng| {
            let (mut num, mut den) = (0.0, 0.0);
            for _ in 0..m {
                let x = sample_first_coordinate(rng, tail.as_ref());
                let w = if x >= gamma { hi } else { lo };
                num += w * x;
                den += w;
            }
            acc.push(num / den);
        });
        let mut total = MeanAccumulator::default();
        parts.iter().for_each(|p| total.merge(p));
        Ok(ProjectionEstimate {
            value: total.mean(),
            stderr: total.stderr(),
        })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn params(&self) -> &PrivUnitGParams {
        &self.params
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn d(&self) -> usize {
        self.params.d()
    }

    pub fn eps(&self) -> f64 {
        self.params.eps()
    }

    pub fn candidates(&self, shared: &RandomStream) -> Result<Vec<UnitVector>> {
        (0..1u64 << self.bits)
            .map(|m| uniform_sphere(self.d(), &shared.derive("candidate", m)))
            .collect()
    }

    /// Unnormalized selection weights: the PrivUnitG density level of each
    /// candidate. Any two inputs give weights within a factor `e^ε`.
    pub fn weights(&self, v: &UnitVector, candidates: &[UnitVector]) -> Result<Vec<f64>> {
        if v.dim() != self.d() {
            return Err(Error::InvalidInput(format!(
                "vector of dimension {} given to MMRC for dimension {}",
                v.dim(),
                self.d()
            )));
        }
        let gamma = self.params.gamma();
        let (hi, lo) = self.params.cap_weights();
        Ok(candidates
            .iter()
            .map(|u| if dot(u.as_slice(), v.as_slice()) >= gamma { hi } else { lo })
            .collect())
    }

    pub fn probabilities(&self, v: &UnitVector, candidates: &[UnitVector]) -> Result<ProbabilityVector> {
        ProbabilityVector::from_weights(&self.weights(v, candidates)?)
    }

    pub fn encode(&self, v: &UnitVector, shared: &RandomStream, private: &RandomStream) -> Result<Message> {
        let candidates = self.candidates(shared)?;
        let index = self.probabilities(v, &candidates)?.sample(&mut private.rng());
        Message::new(index as u64, self.bits)
    }

    pub fn decode(&self, msg: &Message, shared: &RandomStream) -> Result<Vec<f64>> {
        if msg.index() >= 1u64 << self.bits {
            return Err(Error::InvalidInput(format!("MMRC index {} out of range", msg.index())));
        }
        let u = uniform_sphere(self.d(), &shared.derive("candidate", msg.index()))?;
        Ok(u.as_slice().iter().map(|x| self.beta * x).collect())
    }
}
