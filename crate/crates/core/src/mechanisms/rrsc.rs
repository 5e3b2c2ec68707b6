//! Randomly rotated simplex coding with k-closest encoding.

use crate::calibration::Calibration;
use crate::codebook::{Codebook, CodebookKind, SimplexSpec};
use crate::error::{Error, Result};
use crate::rand_geom::{RandomStream, UnitVector};

use super::{kclosest_probs, Message, ProbabilityVector};

#[derive(Clone, Debug)]
pub struct Rrsc {
    bits: u32,
    calib: Calibration,
}

impl Rrsc {
    /// `calib.m` must be `2^bits`.
    pub fn new(bits: u32, calib: Calibration) -> Result<Self> {
        if bits == 0 || bits > 32 || calib.m != 1usize << bits {
            return Err(Error::InvalidConfig(format!(
                "calibration for M={} does not match {bits} bits",
                calib.m
            )));
        }
        if calib.k == 0 || calib.k >= calib.m || !(calib.r_k > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "invalid calibration k={}, r_k={}",
                calib.k, calib.r_k
            )));
        }
        if calib.variant == CodebookKind::RotatedSimplex {
            SimplexSpec::new(calib.m, calib.d)?;
        }
        Ok(Self { bits, calib })
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calib
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn d(&self) -> usize {
        self.calib.d
    }

    pub fn eps(&self) -> f64 {
        self.calib.eps
    }

    /// Codebook shared by encoder and decoder, generated from `shared`.
    pub fn codebook(&self, shared: &RandomStream) -> Result<Codebook> {
        let c = &self.calib;
        match c.variant {
            CodebookKind::RotatedSimplex => {
                Codebook::build_rotated_simplex(SimplexSpec::new(c.m, c.d)?, c.r_k, shared)
            }
            CodebookKind::UniformSphere => Codebook::build_uniform_sphere(c.m, c.d, c.r_k, shared),
        }
    }

    pub fn probabilities(&self, v: &UnitVector, codebook: &Codebook) -> Result<ProbabilityVector> {
        let scores = codebook.scores(v.as_slice())?;
        kclosest_probs(&scores, self.calib.k as f64, self.calib.eps, self.calib.m)
    }

    pub fn encode_with(&self, v: &UnitVector, codebook: &Codebook, private: &RandomStream) -> Result<Message> {
        let probs = self.probabilities(v, codebook)?;
        let index = probs.sample(&mut private.rng());
        Message::new(index as u64, self.bits)
    }

    pub fn decode_with(&self, msg: &Message, codebook: &Codebook) -> Result<Vec<f64>> {
        codebook.codeword(msg.index() as usize)
    }

    pub fn encode(&self, v: &UnitVector, shared: &RandomStream, private: &RandomStream) -> Result<Message> {
        self.encode_with(v, &self.codebook(shared)?, private)
    }

    pub fn decode(&self, msg: &Message, shared: &RandomStream) -> Result<Vec<f64>> {
        self.decode_with(msg, &self.codebook(shared)?)
    }
}
