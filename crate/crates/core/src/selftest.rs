//! Quick invariant checks exposed through the `selftest` subcommand.

use crate::calibration::{estimate_ck, select_k};
use crate::codebook::{simplex_vectors, Codebook, SimplexSpec};
use crate::error::Result;
use crate::mechanisms::{kclosest_probs, Mmrc, PrivUnitGParams, Sqkr};
use crate::rand_geom::{dot, haar_orthogonal, uniform_sphere, RandomStream};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn simplex_identities() -> Result<Check> {
    let mut worst = 0.0f64;
    for m in [2, 3, 8, 64] {
        let s = simplex_vectors(SimplexSpec::new(m, m + 3)?);
        let want_off = -1.0 / (m as f64 - 1.0);
        for i in 0..m {
            for j in 0..m {
                let want = if i == j { 1.0 } else { want_off };
                worst = worst.max((dot(&s[i], &s[j]) - want).abs());
            }
        }
        for c in 0..m + 3 {
            worst = worst.max(s.iter().map(|v| v[c]).sum::<f64>().abs());
        }
    }
    Ok(check("simplex identities", worst <= 1e-9, format!("max deviation {worst:.3e}")))
}

fn fast_scores() -> Result<Check> {
    let root = RandomStream::new(11);
    let (m, d) = (8, 24);
    let spec = SimplexSpec::new(m, d)?;
    let s = simplex_vectors(spec);
    let mut worst = 0.0f64;
    for t in 0..20 {
        let rot = haar_orthogonal(d, &root.derive("rotation", t))?;
        let cols: Vec<f64> = (0..m).flat_map(|j| rot.column(j)).collect();
        let cb = Codebook::from_rotation_columns(spec, 1.0, cols)?;
        let v = uniform_sphere(d, &root.derive("v", t))?;
        let fast = cb.scores(v.as_slice())?;
        for (i, f) in fast.iter().enumerate() {
            let naive = dot(&rot.apply(&s[i]), v.as_slice());
            worst = worst.max((f - naive).abs());
        }
    }
    Ok(check("fast simplex scores", worst <= 1e-10, format!("max deviation {worst:.3e}")))
}

fn kclosest_ratio() -> Result<Check> {
    let root = RandomStream::new(12);
    let mut worst = 0.0f64;
    for (t, eps) in [0.5, 1.0, 3.0, 6.0].into_iter().enumerate() {
        let scores: Vec<f64> = uniform_sphere(8, &root.derive("scores", t as u64))?.into_inner();
        let p = kclosest_probs(&scores, 2.0, eps, 8)?;
        worst = worst.max((p.max_min_ratio() / eps.exp() - 1.0).abs());
    }
    Ok(check("k-closest ratio is e^eps", worst <= 1e-12, format!("max relative deviation {worst:.3e}")))
}

fn sqkr_ratio() -> Result<Check> {
    let mech = Sqkr::new(16, 2.5, 4, &RandomStream::new(13))?;
    let r = mech.rr_transition(0, 0) / mech.rr_transition(1, 0);
    Ok(check(
        "SQKR randomized response ratio",
        r <= 2.5f64.exp() + 1e-9,
        format!("ratio {r:.9} vs e^eps {:.9}", 2.5f64.exp()),
    ))
}

fn mmrc_ratio() -> Result<Check> {
    let params = PrivUnitGParams::optimized(2.0, 10)?;
    let mech = Mmrc::new(4, params, 1.0)?;
    let (hi, lo) = mech.params().cap_weights();
    Ok(check(
        "MMRC weight ratio",
        hi / lo <= 2f64.exp() + 1e-9,
        format!("ratio {:.9} vs e^eps {:.9}", hi / lo, 2f64.exp()),
    ))
}

fn closed_form_c1() -> Result<Check> {
    let est = estimate_ck(2, 2, 1, 200_000, &RandomStream::new(14))?;
    let want = std::f64::consts::SQRT_2 / std::f64::consts::PI;
    let z = (est.value - want) / est.stderr;
    Ok(check(
        "C_1(M=2, d=2) = sqrt(2)/pi",
        z.abs() <= 4.0,
        format!("estimate {:.6} ± {:.1e}, z = {z:.2}", est.value, est.stderr),
    ))
}

fn select_k_sanity() -> Result<Check> {
    let cal = select_k(8, 100, 3.0, 100_000, &RandomStream::new(15))?;
    Ok(check(
        "select_k gives a valid calibration",
        cal.k >= 1 && cal.k < 8 && cal.r_k > 1.0,
        format!("k = {}, r_k = {:.4}", cal.k, cal.r_k),
    ))
}

/// Runs every check; an `Err` means a check could not run at all.
pub fn run_all() -> Result<Vec<Check>> {
    let checks: [fn() -> Result<Check>; 7] = [
        simplex_identities,
        fast_scores,
        kclosest_ratio,
        sqkr_ratio,
        mmrc_ratio,
        closed_form_c1,
        select_k_sanity,
    ];
    checks.iter().map(|f| f()).collect()
}
