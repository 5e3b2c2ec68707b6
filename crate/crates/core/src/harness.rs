//! Sweep configuration, orchestration, and CSV output.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationCache, MIN_TRIALS};
use crate::error::{Error, Result};
use crate::estimation::{estimate_mean, generate_cohort, l2_error, UserCohort};
use crate::mechanisms::{CalibrationSettings, Mechanism, MechanismConfig, MechanismKind};
use crate::rand_geom::RandomStream;

pub const CSV_HEADER: &str = "mechanism,eps,bits,n,d,round,k,r_k,l2_error,wall_ms";

/// Largest bit budget accepted in a sweep.
pub const MAX_BITS: u32 = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BitsSpec {
    List(Vec<u32>),
    Coupled(Coupling),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Coupling {
    /// `b = ε` for each cell; ε must be an integer.
    #[serde(rename = "eq_eps")]
    EqEps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub mechanisms: Vec<MechanismKind>,
    pub eps: Vec<f64>,
    pub bits: BitsSpec,
    pub n: usize,
    pub d: usize,
    pub rounds: usize,
    pub calib_trials: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Fill `wall_ms`. Off by default so that reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("bad sweep config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    /// All `(mechanism, ε, b)` cells in output order, after validation.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let mut problems = Vec::new();
        if self.mechanisms.is_empty() {
            problems.push("no mechanisms".to_owned());
        }
        if self.eps.is_empty() {
            problems.push("empty eps list".to_owned());
        }
        if matches!(&self.bits, BitsSpec::List(b) if b.is_empty()) {
            problems.push("empty bits list".to_owned());
        }
        if self.n < 2 || !self.n.is_multiple_of(2) {
            problems.push(format!("n must be even and >= 2, got {}", self.n));
        }
        if self.d == 0 {
            problems.push("d must be positive".to_owned());
        }
        if self.rounds == 0 {
            problems.push("rounds must be positive".to_owned());
        }
        if self.calib_trials < MIN_TRIALS {
            problems.push(format!("calib_trials must be >= {MIN_TRIALS}, got {}", self.calib_trials));
        }
        let mut cells = Vec::new();
        for &kind in &self.mechanisms {
            for &eps in &self.eps {
                if !(eps > 0.0) || !eps.is_finite() {
                    problems.push(format!("{kind} eps={eps}: epsilon must be positive"));
                    continue;
                }
                if !kind.uses_bits() {
                    cells.push(Cell { kind, eps, bits: None });
                    continue;
                }
                let bits: Vec<u32> = match &self.bits {
                    BitsSpec::List(b) => b.clone(),
                    BitsSpec::Coupled(Coupling::EqEps) => {
                        if eps.fract() != 0.0 {
                            problems.push(format!("{kind} eps={eps}: eq_eps needs integer epsilon"));
                            continue;
                        }
                        vec![eps as u32]
                    }
                };
                for b in bits {
                    if b == 0 || b > MAX_BITS {
                        problems.push(format!("{kind} eps={eps} bits={b}: bits must be in 1..={MAX_BITS}"));
                    } else {
                        cells.push(Cell { kind, eps, bits: Some(b) });
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(cells)
        } else {
            Err(Error::InvalidConfig(format!("invalid sweep cells: {}", problems.join("; "))))
        }
    }

    pub fn settings(&self) -> CalibrationSettings {
        CalibrationSettings {
            trials: self.calib_trials,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub kind: MechanismKind,
    pub eps: f64,
    pub bits: Option<u32>,
}

impl Cell {
    fn mechanism_config(&self, d: usize) -> MechanismConfig {
        MechanismConfig {
            kind: self.kind,
            d,
            eps: self.eps,
            bits: self.bits,
        }
    }

    fn describe(&self) -> String {
        match self.bits {
            Some(b) => format!("{} eps={} bits={b}", self.kind, fmt_g9(self.eps)),
            None => format!("{} eps={}", self.kind, fmt_g9(self.eps)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub mechanism: MechanismKind,
    pub eps: f64,
    pub bits: Option<u32>,
    pub n: usize,
    pub d: usize,
    pub round: usize,
    pub k: Option<usize>,
    pub r_k: Option<f64>,
    pub l2_error: f64,
    pub wall_ms: Option<f64>,
}

impl ExperimentRecord {
    pub fn csv_row(&self) -> String {
        let opt = |x: Option<String>| x.unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.mechanism,
            fmt_g9(self.eps),
            opt(self.bits.map(|b| b.to_string())),
            self.n,
            self.d,
            self.round,
            opt(self.k.map(|k| k.to_string())),
            opt(self.r_k.map(fmt_g9)),
            fmt_g9(self.l2_error),
            opt(self.wall_ms.map(fmt_g9)),
        )
    }
}

/// `printf("%.9g")`.
pub fn fmt_g9(x: f64) -> String {
    const P: i32 = 9;
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", (P - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..P).contains(&exp) {
        let mut s = String::new();
        let _ = write!(s, "{}e{}{:02}", strip_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs());
        s
    } else {
        strip_zeros(&format!("{:.*}", (P - 1 - exp) as usize, x)).to_owned()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Builds (and calibrates) one mechanism per cell, in cell order.
pub fn build_mechanisms(config: &SweepConfig, cells: &[Cell], cache: &mut CalibrationCache) -> Result<Vec<Mechanism>> {
    let settings = config.settings();
    cells
        .iter()
        .map(|cell| {
            Mechanism::build(&cell.mechanism_config(config.d), cache, settings).map_err(|e| match e {
                Error::InvalidConfig(msg) | Error::InvalidSpec(msg) | Error::InvalidDimension(msg) => {
                    Error::InvalidConfig(format!("{}: {msg}", cell.describe()))
                }
                other => other,
            })
        })
        .collect()
}

fn round_stream(seed: u64, round: usize) -> RandomStream {
    RandomStream::new(seed).derive("round", round as u64)
}

fn estimate_stream(seed: u64, round: usize, cell: &Cell) -> RandomStream {
    round_stream(seed, round)
        .derive(cell.kind.name(), u64::from(cell.bits.unwrap_or(0)))
        .derive("estimate", cell.eps.to_bits())
}

/// Runs every `(cell, round)` after calibrating through `cache`. Rows come
/// back in config order whatever the scheduling.
pub fn run_sweep(config: &SweepConfig, cache: &mut CalibrationCache) -> Result<Vec<ExperimentRecord>> {
    let cells = config.cells()?;
    let mechanisms = build_mechanisms(config, &cells, cache)?;
    let cohorts = (0..config.rounds)
        .into_par_iter()
        .map(|r| generate_cohort(config.n, config.d, &round_stream(config.seed, r).derive("cohort", 0)))
        .collect::<Result<Vec<UserCohort>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.rounds).map(move |r| (c, r)))
        .collect();
    jobs.par_iter()
        .map(|&(c, r)| {
            let cell = &cells[c];
            let mech = &mechanisms[c];
            let start = Instant::now();
            let est = estimate_mean(&cohorts[r], mech, &estimate_stream(config.seed, r, cell))?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            Ok(ExperimentRecord {
                mechanism: cell.kind,
                eps: cell.eps,
                bits: cell.bits,
                n: config.n,
                d: config.d,
                round: r,
                k: mech.k(),
                r_k: mech.scale(),
                l2_error: l2_error(&est, &cohorts[r])?,
                wall_ms: config.timing.then_some(elapsed),
            })
        })
        .collect()
}

pub fn write_csv<W: Write>(mut w: W, records: &[ExperimentRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for rec in records {
        writeln!(w, "{}", rec.csv_row())?;
    }
    w.flush()
}

/// Validates, opens the output, runs, and writes the CSV. The cache is
/// saved after calibration even if estimation later fails.
pub fn run_sweep_to_file(config: &SweepConfig, cache: &mut CalibrationCache) -> Result<Vec<ExperimentRecord>> {
    config.cells()?;
    let shown = config.out.display().to_string();
    let file = File::create(&config.out).map_err(|e| Error::io(&shown, e))?;
    let result = run_sweep(config, cache);
    cache.save()?;
    let records = result?;
    write_csv(BufWriter::new(file), &records).map_err(|e| Error::io(&shown, e))?;
    Ok(records)
}

/// Runs every calibration the sweep would need, without estimating.
pub fn calibrate_config(config: &SweepConfig, cache: &mut CalibrationCache) -> Result<Vec<(Cell, Mechanism)>> {
    let cells = config.cells()?;
    let mechanisms = build_mechanisms(config, &cells, cache)?;
    Ok(cells.into_iter().zip(mechanisms).collect())
}
