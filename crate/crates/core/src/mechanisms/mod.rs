//! Local randomizers and their decoders.
//!
//! Every mechanism draws from two streams per user: `shared`, which the
//! server can regenerate, and `private`, which it cannot.

mod kclosest;
pub mod mmrc;
pub mod privunitg;
pub mod rrsc;
pub mod sqkr;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{calibration_stream, CalibrationCache};
use crate::error::{Error, Result};
use crate::rand_geom::{RandomStream, UnitVector};

pub use kclosest::{kclosest_probs, ProbabilityVector};
pub use mmrc::Mmrc;
pub use privunitg::{PrivUnitG, PrivUnitGParams};
pub use rrsc::Rrsc;
pub use sqkr::{kashin_representation, Sqkr, TightFrame};

/// A `bits`-bit report, serialized as `ceil(bits/8)` little-endian bytes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Message {
    index: u64,
    bits: u32,
}

impl Message {
    pub fn new(index: u64, bits: u32) -> Result<Self> {
        if bits == 0 || bits > 64 {
            return Err(Error::InvalidInput(format!("message width must be 1..=64 bits, got {bits}")));
        }
        if bits < 64 && index >> bits != 0 {
            return Err(Error::InvalidInput(format!("index {index} does not fit in {bits} bits")));
        }
        Ok(Self { index, bits })
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.index.to_le_bytes()[..self.bits.div_ceil(8) as usize].to_vec()
    }

    pub fn from_bytes(bytes: &[u8], bits: u32) -> Result<Self> {
        if bits == 0 || bits > 64 || bytes.len() != bits.div_ceil(8) as usize {
            return Err(Error::InvalidInput(format!(
                "{} bytes cannot hold a {bits}-bit message",
                bytes.len()
            )));
        }
        let mut buf = [0u8; 8];
        buf[..bytes.len()].copy_from_slice(bytes);
        Self::new(u64::from_le_bytes(buf), bits)
    }
}

/// What a user sends: a short message, or (PrivUnitG) a full vector.
#[derive(Clone, Debug, PartialEq)]
pub enum Report {
    Message(Message),
    Vector(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Rrsc,
    PrivUnitG,
    Sqkr,
    Mmrc,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 4] = [Self::Rrsc, Self::PrivUnitG, Self::Sqkr, Self::Mmrc];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rrsc => "rrsc",
            Self::PrivUnitG => "privunitg",
            Self::Sqkr => "sqkr",
            Self::Mmrc => "mmrc",
        }
    }

    /// PrivUnitG sends an uncompressed vector and takes no bit budget.
    pub fn uses_bits(self) -> bool {
        self != Self::PrivUnitG
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mechanism {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MechanismConfig {
    pub kind: MechanismKind,
    pub d: usize,
    pub eps: f64,
    /// Ignored by PrivUnitG.
    pub bits: Option<u32>,
}

/// Monte Carlo budget and seed for calibration; also seeds the SQKR frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CalibrationSettings {
    pub trials: usize,
    pub seed: u64,
}

pub trait LdpMechanism: Send + Sync {
    fn kind(&self) -> MechanismKind;
    fn dim(&self) -> usize;
    fn eps(&self) -> f64;
    fn encode(&self, v: &UnitVector, shared: &RandomStream, private: &RandomStream) -> Result<Report>;
    fn decode(&self, report: &Report, shared: &RandomStream) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug)]
pub enum Mechanism {
    Rrsc(Rrsc),
    PrivUnitG(PrivUnitG),
    Sqkr(Sqkr),
    Mmrc(Mmrc),
}

fn expect_message(report: &Report) -> Result<&Message> {
    match report {
        Report::Message(m) => Ok(m),
        Report::Vector(_) => Err(Error::InvalidInput("expected a message report".into())),
    }
}

impl Mechanism {
    /// Builds a mechanism, running (or reusing) any calibration it needs.
    pub fn build(cfg: &MechanismConfig, cache: &mut CalibrationCache, settings: CalibrationSettings) -> Result<Self> {
        if !(cfg.eps > 0.0) || !cfg.eps.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon must be positive, got {}", cfg.eps)));
        }
        if cfg.d == 0 {
            return Err(Error::InvalidDimension("dimension must be positive".into()));
        }
        let bits = || {
            cfg.bits
                .ok_or_else(|| Error::InvalidConfig(format!("{} needs a bit budget", cfg.kind)))
        };
        Ok(match cfg.kind {
            MechanismKind::Rrsc => {
                let b = bits()?;
                if b == 0 || b > 20 {
                    return Err(Error::InvalidConfig(format!("RRSC needs 1..=20 bits, got {b}")));
                }
                let cal = cache.kclosest(1 << b, cfg.d, cfg.eps, settings.trials, settings.seed)?;
                Self::Rrsc(Rrsc::new(b, cal)?)
            }
            MechanismKind::PrivUnitG => Self::PrivUnitG(PrivUnitG::optimized(cfg.eps, cfg.d)?),
            MechanismKind::Sqkr => {
                let stream = RandomStream::new(settings.seed).derive("sqkr_frame", cfg.d as u64);
                Self::Sqkr(Sqkr::new(cfg.d, cfg.eps, bits()?, &stream)?)
            }
            MechanismKind::Mmrc => {
                let b = bits()?;
                if b == 0 || b > 24 {
                    return Err(Error::InvalidConfig(format!("MMRC needs 1..=24 bits, got {b}")));
                }
                let params = PrivUnitGParams::optimized(cfg.eps, cfg.d)?;
                let m = 1usize << b;
                let rec = cache.scalar("mmrc", m, cfg.d, cfg.eps, settings.trials, settings.seed, || {
                    let stream = calibration_stream("mmrc", m, cfg.d, settings.seed).derive("eps", cfg.eps.to_bits());
                    let est = Mmrc::estimate_projection(b, &params, settings.trials, &stream)?;
                    if !(est.value > 0.0) {
                        return Err(Error::Calibration(format!(
                            "MMRC projection estimate {} is not positive",
                            est.value
                        )));
                    }
                    Ok((est.value, est.stderr, 1.0 / est.value))
                })?;
                Self::Mmrc(Mmrc::new(b, params, rec.r_k)?)
            }
        })
    }

    /// Selected `k` (RRSC only).
    pub fn k(&self) -> Option<usize> {
        match self {
            Self::Rrsc(m) => Some(m.calibration().k),
            _ => None,
        }
    }

    /// Output scale: `r_k` for RRSC, `β` for MMRC.
    pub fn scale(&self) -> Option<f64> {
        match self {
            Self::Rrsc(m) => Some(m.calibration().r_k),
            Self::Mmrc(m) => Some(m.beta()),
            _ => None,
        }
    }
}

impl LdpMechanism for Mechanism {
    fn kind(&self) -> MechanismKind {
        match self {
            Self::Rrsc(_) => MechanismKind::Rrsc,
            Self::PrivUnitG(_) => MechanismKind::PrivUnitG,
            Self::Sqkr(_) => MechanismKind::Sqkr,
            Self::Mmrc(_) => MechanismKind::Mmrc,
        }
    }

    fn dim(&self) -> usize {
        match self {
            Self::Rrsc(m) => m.d(),
            Self::PrivUnitG(m) => m.params().d(),
            Self::Sqkr(m) => m.d(),
            Self::Mmrc(m) => m.d(),
        }
    }

    fn eps(&self) -> f64 {
        match self {
            Self::Rrsc(m) => m.eps(),
            Self::PrivUnitG(m) => m.params().eps(),
            Self::Sqkr(m) => m.eps(),
            Self::Mmrc(m) => m.eps(),
        }
    }

    fn encode(&self, v: &UnitVector, shared: &RandomStream, private: &RandomStream) -> Result<Report> {
        Ok(match self {
            Self::Rrsc(m) => Report::Message(m.encode(v, shared, private)?),
            Self::PrivUnitG(m) => Report::Vector(m.encode(v, private)?),
            Self::Sqkr(m) => Report::Message(m.encode(v, shared, private)?),
            Self::Mmrc(m) => Report::Message(m.encode(v, shared, private)?),
        })
    }

    fn decode(&self, report: &Report, shared: &RandomStream) -> Result<Vec<f64>> {
        match self {
            Self::Rrsc(m) => m.decode(expect_message(report)?, shared),
            Self::Sqkr(m) => m.decode(expect_message(report)?, shared),
            Self::Mmrc(m) => m.decode(expect_message(report)?, shared),
            Self::PrivUnitG(_) => match report {
                Report::Vector(v) if v.len() == self.dim() => Ok(v.clone()),
                _ => Err(Error::InvalidInput("expected a vector report".into())),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn message_widths() {
        let m = Message::new(0x1ff, 9).unwrap();
        assert_eq!(m.to_bytes(), vec![0xff, 0x01]);
        assert_eq!(Message::from_bytes(&[0xff, 0x01], 9).unwrap(), m);
        assert!(Message::new(8, 3).is_err());
        assert!(Message::new(0, 0).is_err());
        assert!(Message::from_bytes(&[0, 0], 8).is_err());
        assert!(Message::from_bytes(&[0xff, 0x03], 9).is_err());
        assert_eq!(Message::new(u64::MAX, 64).unwrap().to_bytes().len(), 8);
    }

    proptest! {
        #[test]
        fn message_round_trip(bits in 1u32..=64, raw in any::<u64>()) {
            let index = if bits == 64 { raw } else { raw & ((1u64 << bits) - 1) };
            let m = Message::new(index, bits).unwrap();
            let bytes = m.to_bytes();
            prop_assert_eq!(bytes.len(), bits.div_ceil(8) as usize);
            prop_assert_eq!(Message::from_bytes(&bytes, bits).unwrap(), m);
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MechanismKind::ALL {
            assert_eq!(k.name().parse::<MechanismKind>().unwrap(), k);
        }
        assert!("rrsc2".parse::<MechanismKind>().is_err());
        assert_eq!(serde_json::to_string(&MechanismKind::PrivUnitG).unwrap(), "\"privunitg\"");
    }

    #[test]
    fn build_each_kind() {
        let mut cache = CalibrationCache::in_memory();
        let settings = CalibrationSettings { trials: 10_000, seed: 1 };
        let root = RandomStream::new(2);
        let v = crate::rand_geom::uniform_sphere(16, &root.derive("v", 0)).unwrap();
        for kind in MechanismKind::ALL {
            let cfg = MechanismConfig {
                kind,
                d: 16,
                eps: 2.0,
                bits: Some(3),
            };
            let mech = Mechanism::build(&cfg, &mut cache, settings).unwrap();
            assert_eq!(mech.kind(), kind);
            let shared = root.derive("s", 0);
            let rep = mech.encode(&v, &shared, &root.derive("p", 0)).unwrap();
            let out = mech.decode(&rep, &shared).unwrap();
            assert_eq!(out.len(), 16);
        }
        let no_bits = MechanismConfig {
            kind: MechanismKind::Rrsc,
            d: 16,
            eps: 2.0,
            bits: None,
        };
        assert!(Mechanism::build(&no_bits, &mut cache, settings).unwrap_err().is_config());
    }
}
