//! Sample, quantize, Kashin, randomized response.
//!
//! The input is expanded in a tight frame of `N = 2d` vectors (the identity
//! basis stacked with a random rotation, each scaled by `1/√2`) with every
//! coefficient bounded by `c/√d`. Each coefficient rounds stochastically to
//! `±c/√d`; `κ = min(⌈ε⌉, b)` coefficient indices are drawn from shared
//! randomness and their signs go out through `2^κ`-ary randomized response.

use rand::Rng;
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::rand_geom::{haar_orthogonal, uniform_sphere, OrthogonalMatrix, RandomStream, UnitVector};

use super::Message;

/// `{e_j/√2} ∪ {Hᵀe_j/√2}` for an orthogonal `H`.
#[derive(Clone, Debug, PartialEq)]
pub struct TightFrame {
    rotation: OrthogonalMatrix,
}

impl TightFrame {
    pub fn new(rotation: OrthogonalMatrix) -> Self {
        Self { rotation }
    }

    pub fn random(d: usize, stream: &RandomStream) -> Result<Self> {
        haar_orthogonal(d, stream).map(Self::new)
    }

    pub fn d(&self) -> usize {
        self.rotation.dim()
    }

    /// Number of frame vectors.
    pub fn len(&self) -> usize {
        2 * self.d()
    }

    pub fn is_empty(&self) -> bool {
        self.d() == 0
    }

    /// Frame coefficients `<u_j, x>`.
    pub fn analysis(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().map(|v| v * FRAC_1_SQRT_2).collect();
        out.extend(self.rotation.apply(x).into_iter().map(|v| v * FRAC_1_SQRT_2));
        out
    }

    /// `Σ_j a_j u_j`.
    pub fn synthesis(&self, a: &[f64]) -> Vec<f64> {
        let d = self.d();
        let back = self.rotation.apply_transpose(&a[d..]);
        a[..d]
            .iter()
            .zip(back)
            .map(|(x, y)| (x + y) * FRAC_1_SQRT_2)
            .collect()
    }

    /// Adds `weight · u_j` to `out`.
    pub fn add_atom(&self, j: usize, weight: f64, out: &mut [f64]) {
        let d = self.d();
        let w = weight * FRAC_1_SQRT_2;
        if j < d {
            out[j] += w;
        } else {
            let row = self.rotation.matrix().row(j - d);
            for (o, h) in out.iter_mut().zip(row.iter()) {
                *o += w * h;
            }
        }
    }
}

/// Coefficients `a` with `Σ a_j u_j = v` and `max |a_j| <= level`.
///
/// Alternates clipping (to a slightly smaller box) with projection back onto
/// exact representations, and returns the first projected iterate that fits
/// in the box.
pub fn kashin_representation(frame: &TightFrame, v: &[f64], level: f64, max_iter: usize) -> Result<Vec<f64>> {
    const SHRINK: f64 = 0.9;
    let fits = |a: &[f64]| a.iter().all(|x| x.abs() <= level);
    let mut a = frame.analysis(v);
    for _ in 0..max_iter {
        if fits(&a) {
            return Ok(a);
        }
        let inner = SHRINK * level;
        a.iter_mut().for_each(|x| *x = x.clamp(-inner, inner));
        let approx = frame.synthesis(&a);
        let resid: Vec<f64> = v.iter().zip(&approx).map(|(x, y)| x - y).collect();
        for (x, r) in a.iter_mut().zip(frame.analysis(&resid)) {
            *x += r;
        }
    }
    if fits(&a) {
        Ok(a)
    } else {
        let worst = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Err(Error::FrameConstruction(format!(
            "no representation at level {level} after {max_iter} iterations (max coefficient {worst})"
        )))
    }
}

#[derive(Clone, Debug)]
pub struct Sqkr {
    eps: f64,
    bits: u32,
    kappa: u32,
    level: f64,
    frame: TightFrame,
}

impl Sqkr {
    /// Kashin level constant `c`; coefficients are bounded by `c/√d`.
    pub const LEVEL_CONSTANT: f64 = 3.0;
    pub const MAX_ITER: usize = 30;
    const FRAME_ATTEMPTS: u64 = 8;
    const PROBES: u64 = 4;

    /// Draws a frame from `frame_stream`, moving to the next sub-stream if the
    /// frame fails to represent a set of probe vectors.
    pub fn new(d: usize, eps: f64, bits: u32, frame_stream: &RandomStream) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {eps}")));
        }
        if bits == 0 || bits > 32 {
            return Err(Error::InvalidConfig(format!("SQKR needs 1..=32 bits, got {bits}")));
        }
        if d == 0 {
            return Err(Error::InvalidDimension("SQKR in dimension 0".into()));
        }
        let kappa = (eps.ceil() as u32).min(bits).max(1);
        let level = Self::LEVEL_CONSTANT / (d as f64).sqrt();
        let mut probes = vec![UnitVector::basis(d, 0)?, UnitVector::normalize(vec![1.0; d])?];
        for i in 0..Self::PROBES {
            probes.push(uniform_sphere(d, &frame_stream.derive("probe", i))?);
        }
        for attempt in 0..Self::FRAME_ATTEMPTS {
            let frame = TightFrame::random(d, &frame_stream.derive("frame", attempt))?;
            if probes
                .iter()
                .all(|p| kashin_representation(&frame, p.as_slice(), level, Self::MAX_ITER).is_ok())
            {
                return Ok(Self::with_frame(eps, bits, kappa, level, frame));
            }
        }
        Err(Error::FrameConstruction(format!(
            "no frame in {} attempts reached level {level}",
            Self::FRAME_ATTEMPTS
        )))
    }

    fn with_frame(eps: f64, bits: u32, kappa: u32, level: f64, frame: TightFrame) -> Self {
        Self {
            eps,
            bits,
            kappa,
            level,
            frame,
        }
    }

    pub fn d(&self) -> usize {
        self.frame.d()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of sampled coefficients, also the report width in bits.
    pub fn kappa(&self) -> u32 {
        self.kappa
    }

    pub fn frame(&self) -> &TightFrame {
        &self.frame
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    fn alphabet(&self) -> u64 {
        1u64 << self.kappa
    }

    /// Probability of reporting `y` when the true symbol is `x`.
    pub fn rr_transition(&self, x: u64, y: u64) -> f64 {
        let e = self.eps.exp();
        let denom = e + (self.alphabet() - 1) as f64;
        if x == y {
            e / denom
        } else {
            1.0 / denom
        }
    }

    /// Coefficient indices drawn from shared randomness.
    pub fn sample_indices(&self, shared: &RandomStream) -> Vec<usize> {
        let mut rng = shared.rng();
        let n = self.frame.len();
        (0..self.kappa).map(|_| rng.random_range(0..n)).collect()
    }

    pub fn encode(&self, v: &UnitVector, shared: &RandomStream, private: &RandomStream) -> Result<Message> {
        if v.dim() != self.d() {
            return Err(Error::InvalidInput(format!(
                "vector of dimension {} given to SQKR for dimension {}",
                v.dim(),
                self.d()
            )));
        }
        let coeffs = kashin_representation(&self.frame, v.as_slice(), self.level, Self::MAX_ITER)?;
        let mut rng = private.rng();
        let mut symbol = 0u64;
        for (i, j) in self.sample_indices(shared).into_iter().enumerate() {
            let up = (0.5 * (1.0 + coeffs[j] / self.level)).clamp(0.0, 1.0);
            if rng.random::<f64>() < up {
                symbol |= 1 << i;
            }
        }
        let k = self.alphabet();
        let keep = self.rr_transition(symbol, symbol);
        let report = if rng.random::<f64>() < keep {
            symbol
        } else {
            let other = rng.random_range(0..k - 1);
            if other >= symbol {
                other + 1
            } else {
                other
            }
        };
        Message::new(report, self.bits)
    }

    pub fn decode(&self, msg: &Message, shared: &RandomStream) -> Result<Vec<f64>> {
        if msg.index() >= self.alphabet() {
            return Err(Error::InvalidInput(format!(
                "SQKR report {} exceeds {} bits",
                msg.index(),
                self.kappa
            )));
        }
        let e = self.eps.exp();
        let gap = self.eps.exp_m1() / (e + (self.alphabet() - 1) as f64);
        let weight = self.frame.len() as f64 / self.kappa as f64 * self.level / gap;
        let mut out = vec![0.0; self.d()];
        for (i, j) in self.sample_indices(shared).into_iter().enumerate() {
            let sign = if msg.index() >> i & 1 == 1 { 1.0 } else { -1.0 };
            self.frame.add_atom(j, sign * weight, &mut out);
        }
        Ok(out)
    }
}
