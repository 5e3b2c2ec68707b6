//! Simplex and uniform-sphere codebooks.
//!
//! A rotated simplex codebook is `scale · A s_m` for a Haar rotation `A`. Only
//! the first `M` columns `a_1..a_M` of `A` are ever needed: `s_m` is supported
//! on its first `M` coordinates, so
//!
//! ```text
//! <v, A s_m> = sqrt(M/(M-1)) <a_m, v> - (1/sqrt(M(M-1))) Σ_i <a_i, v>
//! A s_m      = sqrt(M/(M-1)) a_m      - (1/sqrt(M(M-1))) Σ_i a_i
//! ```
//!
//! which makes scoring and decoding `O(Md)`.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rand_geom::{dot, haar_frame_with, uniform_sphere_with, RandomStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SimplexSpec {
    m: usize,
    d: usize,
}

impl SimplexSpec {
    /// `2 <= m <= d`. `m == d` is admitted: the vertex formula still gives
    /// unit vectors with the simplex inner products.
    pub fn new(m: usize, d: usize) -> Result<Self> {
        if m < 2 || m > d {
            return Err(Error::InvalidSpec(format!(
                "simplex needs 2 <= M <= d, got M={m}, d={d}"
            )));
        }
        Ok(Self { m, d })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn weights(&self) -> (f64, f64) {
        let m = self.m as f64;
        ((m / (m - 1.0)).sqrt(), 1.0 / (m * (m - 1.0)).sqrt())
    }
}

/// The `M` unit simplex vertices `s_1..s_M` embedded in `R^d`.
pub fn simplex_vectors(spec: SimplexSpec) -> Vec<Vec<f64>> {
    let (m, d) = (spec.m, spec.d);
    let denom = ((m * (m - 1)) as f64).sqrt();
    let diag = (m - 1) as f64 / denom;
    let off = -1.0 / denom;
    (0..m)
        .map(|i| {
            let mut s = vec![0.0; d];
            for (j, x) in s.iter_mut().enumerate().take(m) {
                *x = if i == j { diag } else { off };
            }
            s
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CodebookKind {
    RotatedSimplex,
    UniformSphere,
}

impl CodebookKind {
    pub fn label(self) -> &'static str {
        match self {
            CodebookKind::RotatedSimplex => "simplex",
            CodebookKind::UniformSphere => "uniform_sphere",
        }
    }

    /// Simplex while it exists, uniform sphere once `M > d`.
    pub fn for_size(m: usize, d: usize) -> Self {
        if m <= d {
            CodebookKind::RotatedSimplex
        } else {
            CodebookKind::UniformSphere
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Vectors {
    /// First `M` columns of the rotation, row-major `M x d`.
    Rotation(Vec<f64>),
    /// Unit-norm codewords, row-major `M x d`.
    Explicit(Vec<f64>),
}

/// `M` codewords in `R^d`, each of norm `scale`. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    m: usize,
    d: usize,
    scale: f64,
    vectors: Vectors,
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(format!("codebook scale must be positive, got {scale}")))
    }
}

impl Codebook {
    pub fn build_rotated_simplex(spec: SimplexSpec, scale: f64, stream: &RandomStream) -> Result<Self> {
        Self::build_rotated_simplex_with(spec, scale, &mut stream.rng())
    }

    pub fn build_rotated_simplex_with<R: Rng + ?Sized>(
        spec: SimplexSpec,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        check_scale(scale)?;
        let rows = haar_frame_with(spec.m, spec.d, rng)?;
        Ok(Self {
            m: spec.m,
            d: spec.d,
            scale,
            vectors: Vectors::Rotation(rows),
        })
    }

    /// Simplex rotated by a caller-supplied rotation, given as the first `M`
    /// columns of `A` (row-major, `M x d`, orthonormal).
    pub fn from_rotation_columns(spec: SimplexSpec, scale: f64, columns: Vec<f64>) -> Result<Self> {
        check_scale(scale)?;
        if columns.len() != spec.m * spec.d {
            return Err(Error::InvalidInput(format!(
                "expected {} rotation entries, got {}",
                spec.m * spec.d,
                columns.len()
            )));
        }
        Ok(Self {
            m: spec.m,
            d: spec.d,
            scale,
            vectors: Vectors::Rotation(columns),
        })
    }

    /// Unrotated simplex, `A = I`.
    pub fn identity_simplex(spec: SimplexSpec, scale: f64) -> Result<Self> {
        let mut cols = vec![0.0; spec.m * spec.d];
        for i in 0..spec.m {
            cols[i * spec.d + i] = 1.0;
        }
        Self::from_rotation_columns(spec, scale, cols)
    }

    pub fn build_uniform_sphere(m: usize, d: usize, scale: f64, stream: &RandomStream) -> Result<Self> {
        Self::build_uniform_sphere_with(m, d, scale, &mut stream.rng())
    }

    pub fn build_uniform_sphere_with<R: Rng + ?Sized>(
        m: usize,
        d: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if m < 2 || d == 0 {
            return Err(Error::InvalidSpec(format!(
                "uniform-sphere codebook needs M >= 2 and d >= 1, got M={m}, d={d}"
            )));
        }
        check_scale(scale)?;
        let mut words = Vec::with_capacity(m * d);
        for _ in 0..m {
            words.extend_from_slice(uniform_sphere_with(d, rng)?.as_slice());
        }
        Ok(Self {
            m,
            d,
            scale,
            vectors: Vectors::Explicit(words),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn kind(&self) -> CodebookKind {
        match self.vectors {
            Vectors::Rotation(_) => CodebookKind::RotatedSimplex,
            Vectors::Explicit(_) => CodebookKind::UniformSphere,
        }
    }

    fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        match &self.vectors {
            Vectors::Rotation(r) | Vectors::Explicit(r) => r.chunks_exact(self.d),
        }
    }

    /// Unscaled inner products `<v, codeword_m / scale>` for every `m`.
    ///
    /// Ranking by these is the same as ranking by `-|v - codeword_m|²`, since
    /// every codeword has the same norm.
    pub fn scores(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.d {
            return Err(Error::InvalidInput(format!(
                "vector of dimension {} scored against a codebook of dimension {}",
                v.len(),
                self.d
            )));
        }
        let proj: Vec<f64> = self.rows().map(|row| dot(row, v)).collect();
        Ok(match self.vectors {
            Vectors::Explicit(_) => proj,
            Vectors::Rotation(_) => {
                let (a, b) = SimplexSpec { m: self.m, d: self.d }.weights();
                let total: f64 = proj.iter().sum();
                proj.iter().map(|p| a * p - b * total).collect()
            }
        })
    }

    /// Codeword `index`, scaled.
    pub fn codeword(&self, index: usize) -> Result<Vec<f64>> {
        if index >= self.m {
            return Err(Error::InvalidInput(format!(
                "codeword index {index} out of range for M={}",
                self.m
            )));
        }
        let d = self.d;
        Ok(match &self.vectors {
            Vectors::Explicit(w) => w[index * d..(index + 1) * d]
                .iter()
                .map(|x| x * self.scale)
                .collect(),
            Vectors::Rotation(cols) => {
                let (a, b) = SimplexSpec { m: self.m, d }.weights();
                let mut out = vec![0.0; d];
                for row in cols.chunks_exact(d) {
                    for (o, x) in out.iter_mut().zip(row) {
                        *o += x;
                    }
                }
                let own = &cols[index * d..(index + 1) * d];
                for (o, x) in out.iter_mut().zip(own) {
                    *o = self.scale * (a * x - b * *o);
                }
                out
            }
        })
    }
}

/// Indices sorted by descending score; equal scores keep the lower index first.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&i, &j| match scores[j].total_cmp(&scores[i]) {
        Ordering::Equal => i.cmp(&j),
        o => o,
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rand_geom::{haar_orthogonal_with, l2_norm, uniform_sphere_with, UnitVector};
    use proptest::prelude::*;

    #[test]
    fn spec_bounds() {
        assert!(SimplexSpec::new(1, 5).is_err());
        assert!(SimplexSpec::new(6, 5).is_err());
        assert!(SimplexSpec::new(5, 5).is_ok());
        assert!(SimplexSpec::new(2, 2).is_ok());
    }

    #[test]
    fn two_point_simplex() {
        let s = simplex_vectors(SimplexSpec::new(2, 2).unwrap());
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s[0][0] - h).abs() < 1e-15 && (s[0][1] + h).abs() < 1e-15);
        assert!((s[1][0] + h).abs() < 1e-15 && (s[1][1] - h).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn simplex_identities(m in 2usize..40, extra in 0usize..20) {
            let spec = SimplexSpec::new(m, m + extra).unwrap();
            let s = simplex_vectors(spec);
            let target = -1.0 / (m as f64 - 1.0);
            for i in 0..m {
                prop_assert!((l2_norm(&s[i]) - 1.0).abs() < 1e-9);
                for j in (i + 1)..m {
                    prop_assert!((dot(&s[i], &s[j]) - target).abs() < 1e-9);
                }
            }
            for c in 0..spec.d() {
                let col: f64 = s.iter().map(|v| v[c]).sum();
                prop_assert!(col.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_rotation_gives_plain_simplex() {
        let spec = SimplexSpec::new(4, 6).unwrap();
        let cb = Codebook::identity_simplex(spec, 1.0).unwrap();
        let s = simplex_vectors(spec);
        for (m, sm) in s.iter().enumerate() {
            let w = cb.codeword(m).unwrap();
            for (a, b) in w.iter().zip(sm) {
                assert!((a - b).abs() < 1e-15);
            }
        }
        let v = UnitVector::normalize(vec![0.3, -1.0, 2.0, 0.1, 0.0, 0.7]).unwrap();
        let sc = cb.scores(v.as_slice()).unwrap();
        for (m, sm) in s.iter().enumerate() {
            assert!((sc[m] - dot(v.as_slice(), sm)).abs() < 1e-14);
        }
    }

    #[test]
    fn rotated_codewords_keep_simplex_geometry() {
        let spec = SimplexSpec::new(8, 20).unwrap();
        let scale = 2.5;
        let cb = Codebook::build_rotated_simplex(spec, scale, &RandomStream::new(1)).unwrap();
        let words: Vec<Vec<f64>> = (0..8).map(|m| cb.codeword(m).unwrap()).collect();
        for i in 0..8 {
            assert!((l2_norm(&words[i]) - scale).abs() < 1e-9);
            for j in (i + 1)..8 {
                let want = -scale * scale / 7.0;
                assert!((dot(&words[i], &words[j]) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn fast_scores_match_full_rotation() {
        let mut rng = RandomStream::new(5).derive("naive", 0).rng();
        let (m, d) = (8, 20);
        let spec = SimplexSpec::new(m, d).unwrap();
        let s = simplex_vectors(spec);
        for _ in 0..20 {
            let a = haar_orthogonal_with(d, &mut rng).unwrap();
            let cols: Vec<f64> = (0..m).flat_map(|j| a.column(j)).collect();
            let cb = Codebook::from_rotation_columns(spec, 1.0, cols).unwrap();
            let v = uniform_sphere_with(d, &mut rng).unwrap();
            let atv = a.apply_transpose(v.as_slice());
            let fast = cb.scores(v.as_slice()).unwrap();
            for (k, sk) in s.iter().enumerate() {
                assert!((fast[k] - dot(&atv, sk)).abs() < 1e-10);
            }
            // Decoded codeword equals A s_m.
            let w = cb.codeword(3).unwrap();
            let full = a.apply(&s[3]);
            for (x, y) in w.iter().zip(&full) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!(fast.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn score_ranking_matches_distance_ranking() {
        let mut rng = RandomStream::new(6).derive("rank", 0).rng();
        for (m, d) in [(8usize, 20usize), (16, 16)] {
            let spec = SimplexSpec::new(m, d).unwrap();
            let cb = Codebook::build_rotated_simplex_with(spec, 3.0, &mut rng).unwrap();
            let us = Codebook::build_uniform_sphere_with(m, d, 3.0, &mut rng).unwrap();
            for book in [&cb, &us] {
                let v = uniform_sphere_with(d, &mut rng).unwrap();
                let by_score = rank_descending(&book.scores(v.as_slice()).unwrap());
                let dist: Vec<f64> = (0..m)
                    .map(|i| {
                        let w = book.codeword(i).unwrap();
                        -w.iter().zip(v.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                    })
                    .collect();
                assert_eq!(by_score, rank_descending(&dist));
            }
        }
    }

    #[test]
    fn codebooks_are_reproducible() {
        let spec = SimplexSpec::new(8, 12).unwrap();
        let st = RandomStream::new(99).derive("user", 4);
        assert_eq!(
            Codebook::build_rotated_simplex(spec, 1.5, &st).unwrap(),
            Codebook::build_rotated_simplex(spec, 1.5, &st).unwrap()
        );
        assert_eq!(
            Codebook::build_uniform_sphere(8, 5, 1.5, &st).unwrap(),
            Codebook::build_uniform_sphere(8, 5, 1.5, &st).unwrap()
        );
    }

    #[test]
    fn uniform_sphere_codebook() {
        let (m, d, scale) = (1024, 50, 2.0);
        let cb = Codebook::build_uniform_sphere(m, d, scale, &RandomStream::new(3)).unwrap();
        let mut mean = vec![0.0; d];
        for i in 0..m {
            let w = cb.codeword(i).unwrap();
            assert!((l2_norm(&w) - scale).abs() < 1e-9);
            for (a, b) in mean.iter_mut().zip(&w) {
                *a += b / m as f64;
            }
        }
        assert!(l2_norm(&mean) <= 5.0 * scale / (m as f64).sqrt());
        assert!(Codebook::build_uniform_sphere(1, 5, 1.0, &RandomStream::new(0)).is_err());
        assert!(Codebook::build_uniform_sphere(4, 5, 0.0, &RandomStream::new(0)).is_err());
    }

    #[test]
    fn bad_inputs() {
        let spec = SimplexSpec::new(4, 6).unwrap();
        let cb = Codebook::identity_simplex(spec, 1.0).unwrap();
        assert!(cb.scores(&[1.0, 0.0]).is_err());
        assert!(cb.codeword(4).is_err());
        assert!(Codebook::identity_simplex(spec, -1.0).is_err());
    }

    #[test]
    fn ties_break_to_lower_index() {
        assert_eq!(rank_descending(&[0.5, 1.0, 0.5, 1.0]), vec![1, 3, 0, 2]);
    }
}
