//! JSON-backed store of calibration results.
//!
//! One record per `(variant, M, d, eps, k, trials, seed)`. A full k-selection
//! stores every candidate `k`, so a later selection at another `eps` reuses the
//! same Monte Carlo estimates. Saves go through a temp file and a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    calibration_stream, compute_rk, compute_rk_uniform, estimate_ck_all, estimate_uniform_topk_all,
    select_from_estimates, Calibration, CkEstimate,
};
use crate::codebook::CodebookKind;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub variant: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub d: usize,
    pub eps: f64,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    pub ck_value: f64,
    pub ck_stderr: f64,
    pub r_k: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: usize,
    /// Monte Carlo runs performed because no record matched.
    pub misses: usize,
}

fn eps_key(eps: f64) -> i64 {
    (eps * 1e9).round() as i64
}

#[derive(Debug, Default)]
pub struct CalibrationCache {
    path: Option<PathBuf>,
    records: Vec<CacheRecord>,
    stats: CacheStats,
    dirty: bool,
}

impl CalibrationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; a missing file is an empty cache.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let records = match fs::read_to_string(path) {
            Ok(text) if text.trim().is_empty() => Vec::new(),
            Ok(text) => serde_json::from_str(&text).map_err(|e| Error::json(&shown, e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(Error::io(shown, e)),
        };
        Ok(Self {
            path: Some(path.to_path_buf()),
            records,
            stats: CacheStats::default(),
            dirty: false,
        })
    }

    pub fn records(&self) -> &[CacheRecord] {
        &self.records
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Writes the cache back to disk if anything changed.
    pub fn save(&mut self) -> Result<()> {
        let Some(path) = self.path.clone() else {
            return Ok(());
        };
        if !self.dirty {
            return Ok(());
        }
        let shown = path.display().to_string();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&shown, e))?;
        let body = serde_json::to_string_pretty(&self.records).map_err(|e| Error::json(&shown, e))?;
        tmp.write_all(body.as_bytes())
            .and_then(|_| tmp.write_all(b"\n"))
            .map_err(|e| Error::io(&shown, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&shown, e.error))?;
        self.dirty = false;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn find(&self, variant: &str, m: usize, d: usize, eps: f64, k: usize, trials: usize, seed: u64) -> Option<&CacheRecord> {
        let ek = eps_key(eps);
        self.records.iter().find(|r| {
            r.variant == variant
                && r.m == m
                && r.d == d
                && eps_key(r.eps) == ek
                && r.k == k
                && r.trials == trials
                && r.seed == seed
        })
    }

    fn insert(&mut self, rec: CacheRecord) {
        let ek = eps_key(rec.eps);
        if let Some(old) = self.records.iter_mut().find(|r| {
            r.variant == rec.variant
                && r.m == rec.m
                && r.d == rec.d
                && eps_key(r.eps) == ek
                && r.k == rec.k
                && r.trials == rec.trials
                && r.seed == rec.seed
        }) {
            *old = rec;
        } else {
            self.records.push(rec);
        }
        self.dirty = true;
    }

    /// All `k = 1..M-1` estimates stored under any `eps`, if complete.
    fn stored_estimates(&self, variant: &str, m: usize, d: usize, trials: usize, seed: u64) -> Option<Vec<CkEstimate>> {
        let mut by_eps: Vec<i64> = self
            .records
            .iter()
            .filter(|r| r.variant == variant && r.m == m && r.d == d && r.trials == trials && r.seed == seed)
            .map(|r| eps_key(r.eps))
            .collect();
        by_eps.sort_unstable();
        by_eps.dedup();
        by_eps.into_iter().find_map(|ek| {
            let eps = ek as f64 / 1e9;
            (1..m)
                .map(|k| {
                    self.find(variant, m, d, eps, k, trials, seed).map(|r| CkEstimate {
                        m,
                        d,
                        k,
                        trials,
                        value: r.ck_value,
                        stderr: r.ck_stderr,
                    })
                })
                .collect::<Option<Vec<_>>>()
        })
    }

    /// Error-optimal k-closest calibration. Uses the rotated simplex when
    /// `M <= d` and the uniform-sphere codebook otherwise.
    pub fn kclosest(&mut self, m: usize, d: usize, eps: f64, trials: usize, seed: u64) -> Result<Calibration> {
        let variant = CodebookKind::for_size(m, d);
        let label = variant.label();
        let estimates = match self.stored_estimates(label, m, d, trials, seed) {
            Some(est) => {
                self.stats.hits += 1;
                est
            }
            None => {
                self.stats.misses += 1;
                let stream = calibration_stream(label, m, d, seed);
                match variant {
                    CodebookKind::RotatedSimplex => estimate_ck_all(m, d, trials, &stream)?,
                    CodebookKind::UniformSphere => estimate_uniform_topk_all(m, d, trials, &stream)?,
                }
            }
        };
        let cal = select_from_estimates(variant, eps, &estimates)?;
        if self.find(label, m, d, eps, m - 1, trials, seed).is_none() {
            for est in &estimates {
                let r_k = match variant {
                    CodebookKind::RotatedSimplex => compute_rk(m, eps, est.k, est)?,
                    CodebookKind::UniformSphere => compute_rk_uniform(m, eps, est.k, est)?,
                };
                self.insert(CacheRecord {
                    variant: label.to_owned(),
                    m,
                    d,
                    eps,
                    k: est.k,
                    trials,
                    seed,
                    ck_value: est.value,
                    ck_stderr: est.stderr,
                    r_k,
                });
            }
        }
        Ok(cal)
    }

    /// Cached scalar calibration: `compute` runs only on a miss and returns
    /// `(expectation, stderr, scale)`. Stored with `k = 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar<F>(&mut self, variant: &str, m: usize, d: usize, eps: f64, trials: usize, seed: u64, compute: F) -> Result<CacheRecord>
    where
        F: FnOnce() -> Result<(f64, f64, f64)>,
    {
        if let Some(rec) = self.find(variant, m, d, eps, 0, trials, seed).cloned() {
            self.stats.hits += 1;
            return Ok(rec);
        }
        self.stats.misses += 1;
        let (value, stderr, scale) = compute()?;
        let rec = CacheRecord {
            variant: variant.to_owned(),
            m,
            d,
            eps,
            k: 0,
            trials,
            seed,
            ck_value: value,
            ck_stderr: stderr,
            r_k: scale,
        };
        self.insert(rec.clone());
        Ok(rec)
    }
}
