//! The multi-user protocol: synthetic cohorts, per-user encode/decode, and
//! additive aggregation.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mechanisms::{LdpMechanism, Message, Report};
use crate::rand_geom::{RandomStream, UnitVector};

/// Users per parallel work unit. Partial sums are combined in chunk order,
/// so results do not depend on the thread count.
const USER_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct UserCohort {
    d: usize,
    vectors: Vec<UnitVector>,
}

impl UserCohort {
    pub fn new(d: usize, vectors: Vec<UnitVector>) -> Result<Self> {
        if vectors.is_empty() {
            return Err(Error::InvalidConfig("cohort must contain at least one user".into()));
        }
        if let Some(v) = vectors.iter().find(|v| v.dim() != d) {
            return Err(Error::InvalidInput(format!(
                "cohort of dimension {d} contains a vector of dimension {}",
                v.dim()
            )));
        }
        Ok(Self { d, vectors })
    }

    pub fn n(&self) -> usize {
        self.vectors.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn vectors(&self) -> &[UnitVector] {
        &self.vectors
    }

    /// `(1/n) Σ v_i`.
    pub fn true_mean(&self) -> Vec<f64> {
        let mut sum = vec![0.0; self.d];
        for v in &self.vectors {
            for (s, x) in sum.iter_mut().zip(v.as_slice()) {
                *s += x;
            }
        }
        let n = self.n() as f64;
        sum.iter_mut().for_each(|s| *s /= n);
        sum
    }
}

/// First half `N(1, 1)^d`, second half `N(10, 1)^d`, each normalized.
pub fn generate_cohort(n: usize, d: usize, stream: &RandomStream) -> Result<UserCohort> {
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("cohort size must be even and >= 2, got {n}")));
    }
    if d == 0 {
        return Err(Error::InvalidDimension("cohort dimension must be positive".into()));
    }
    let vectors = (0..n)
        .map(|i| {
            let center = if i < n / 2 { 1.0 } else { 10.0 };
            let mut rng = stream.derive("user", i as u64).rng();
            let raw = (0..d)
                .map(|_| center + rng.sample::<f64, _>(StandardNormal))
                .collect();
            UnitVector::normalize(raw)
        })
        .collect::<Result<Vec<_>>>()?;
    UserCohort::new(d, vectors)
}

fn user_streams(root: &RandomStream, i: usize) -> (RandomStream, RandomStream) {
    (root.derive("user", i as u64), root.derive("private", i as u64))
}

/// Encodes and decodes one user's vector; messages pass through their wire
/// encoding on the way.
pub fn simulate_user<M: LdpMechanism + ?Sized>(mech: &M, v: &UnitVector, root: &RandomStream, i: usize) -> Result<Vec<f64>> {
    let (shared, private) = user_streams(root, i);
    let report = match mech.encode(v, &shared, &private)? {
        Report::Message(m) => Report::Message(Message::from_bytes(&m.to_bytes(), m.bits())?),
        other => other,
    };
    mech.decode(&report, &shared)
}

/// `(1/n) Σ_i decode(encode(v_i))`, with user `i` on the shared stream
/// `("user", i)` and the private stream `("private", i)` under `root`.
pub fn estimate_mean<M: LdpMechanism + ?Sized>(cohort: &UserCohort, mech: &M, root: &RandomStream) -> Result<Vec<f64>> {
    if mech.dim() != cohort.d() {
        return Err(Error::InvalidInput(format!(
            "mechanism dimension {} does not match cohort dimension {}",
            mech.dim(),
            cohort.d()
        )));
    }
    let d = cohort.d();
    let partials = cohort
        .vectors()
        .par_chunks(USER_CHUNK)
        .enumerate()
        .map(|(c, chunk)| {
            let mut sum = vec![0.0; d];
            for (j, v) in chunk.iter().enumerate() {
                let out = simulate_user(mech, v, root, c * USER_CHUNK + j)?;
                for (s, x) in sum.iter_mut().zip(&out) {
                    *s += x;
                }
            }
            Ok(sum)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![0.0; d];
    for part in &partials {
        for (t, x) in total.iter_mut().zip(part) {
            *t += x;
        }
    }
    let n = cohort.n() as f64;
    total.iter_mut().for_each(|t| *t /= n);
    Ok(total)
}

/// `‖estimate − true mean‖₂`.
pub fn l2_error(estimate: &[f64], cohort: &UserCohort) -> Result<f64> {
    if estimate.len() != cohort.d() {
        return Err(Error::InvalidInput(format!(
            "estimate of dimension {} for a cohort of dimension {}",
            estimate.len(),
            cohort.d()
        )));
    }
    Ok(estimate
        .iter()
        .zip(cohort.true_mean())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::CalibrationCache;
    use crate::mechanisms::{CalibrationSettings, Mechanism, MechanismConfig, MechanismKind};
    use crate::stats::{ols_slope, MeanAccumulator};

    fn build(kind: MechanismKind, d: usize, eps: f64, bits: u32) -> Mechanism {
        let cfg = MechanismConfig {
            kind,
            d,
            eps,
            bits: Some(bits),
        };
        let settings = CalibrationSettings { trials: 50_000, seed: 7 };
        Mechanism::build(&cfg, &mut CalibrationCache::in_memory(), settings).unwrap()
    }

    #[test]
    fn cohort_shape_and_concentration() {
        let d = 500;
        let cohort = generate_cohort(200, d, &RandomStream::new(1)).unwrap();
        assert_eq!(cohort.n(), 200);
        for v in cohort.vectors() {
            let norm: f64 = v.as_slice().iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let second: MeanAccumulator = cohort.vectors()[100..]
            .iter()
            .flat_map(|v| v.as_slice().iter().copied())
            .collect();
        let want = 10.0 / (d as f64 * 101.0).sqrt();
        assert!((second.mean() / want - 1.0).abs() < 0.1);
        assert_eq!(cohort, generate_cohort(200, d, &RandomStream::new(1)).unwrap());
    }

    #[test]
    fn cohort_errors() {
        assert!(generate_cohort(3, 4, &RandomStream::new(0)).unwrap_err().is_config());
        assert!(generate_cohort(0, 4, &RandomStream::new(0)).is_err());
        assert!(generate_cohort(2, 0, &RandomStream::new(0)).is_err());
    }

    #[test]
    fn l2_error_definition() {
        let cohort = generate_cohort(4, 3, &RandomStream::new(2)).unwrap();
        let mut est = cohort.true_mean();
        assert_eq!(l2_error(&est, &cohort).unwrap(), 0.0);
        est[0] += 0.25;
        assert!((l2_error(&est, &cohort).unwrap() - 0.25).abs() < 1e-15);
        assert!(l2_error(&est[..2], &cohort).is_err());
    }

    #[test]
    fn single_user_huge_epsilon() {
        let mech = build(MechanismKind::Rrsc, 20, 50.0, 3);
        let cohort = generate_cohort(2, 20, &RandomStream::new(3)).unwrap();
        let one = UserCohort::new(20, cohort.vectors()[..1].to_vec()).unwrap();
        let est = estimate_mean(&one, &mech, &RandomStream::new(4)).unwrap();
        let err = l2_error(&est, &one).unwrap();
        let r_k = mech.scale().unwrap();
        assert!(err.is_finite() && err <= r_k + 1.0);
    }

    #[test]
    fn deterministic_and_thread_independent() {
        let mech = build(MechanismKind::Sqkr, 16, 2.0, 2);
        let cohort = generate_cohort(300, 16, &RandomStream::new(5)).unwrap();
        let root = RandomStream::new(6);
        let a = estimate_mean(&cohort, &mech, &root).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| estimate_mean(&cohort, &mech, &root)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn aggregate_is_unbiased() {
        let (n, d) = (100, 50);
        let mech = build(MechanismKind::Rrsc, d, 3.0, 3);
        let cohort = generate_cohort(n, d, &RandomStream::new(8)).unwrap();
        let runs = 1000;
        let mut sum = vec![0.0; d];
        for r in 0..runs {
            let est = estimate_mean(&cohort, &mech, &RandomStream::new(1000 + r)).unwrap();
            sum.iter_mut().zip(&est).for_each(|(s, x)| *s += x);
        }
        sum.iter_mut().for_each(|s| *s /= runs as f64);
        // Per-user squared error r_k² − 1 shrinks by n · runs.
        let r_k = mech.scale().unwrap();
        let sd = ((r_k * r_k - 1.0) / (n * runs as usize) as f64).sqrt();
        let dist = l2_error(&sum, &cohort).unwrap();
        assert!(dist < 3.0 * sd, "{dist} vs {sd}");
    }

    #[test]
    fn error_scales_as_inverse_sqrt_n() {
        let d = 20;
        let mech = build(MechanismKind::PrivUnitG, d, 2.0, 1);
        let ns = [250usize, 1000, 4000];
        let mut logs = Vec::new();
        for &n in &ns {
            let acc: MeanAccumulator = (0..20)
                .map(|r| {
                    let cohort = generate_cohort(n, d, &RandomStream::new(r).derive("cohort", 0)).unwrap();
                    let est = estimate_mean(&cohort, &mech, &RandomStream::new(r).derive("estimate", 0)).unwrap();
                    l2_error(&est, &cohort).unwrap()
                })
                .collect();
            logs.push(acc.mean().ln());
        }
        let x: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
        let slope = ols_slope(&x, &logs);
        assert!((-0.6..=-0.4).contains(&slope), "slope {slope}");
    }
}
