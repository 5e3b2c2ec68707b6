//! Seeded random streams and the random-geometry primitives built on them.
//!
//! A [`RandomStream`] is a value: a root seed plus a derivation path. The
//! generator it hands out is seeded from a SHA-256 digest of both, so any party
//! holding the same `(root, path)` regenerates the same draws. Encoder and
//! decoder rely on this to rebuild identical codebooks from a compact seed, and
//! parallel workers never share generator state.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Generator handed out by [`RandomStream::rng`].
pub type StreamRng = ChaCha8Rng;

const DOMAIN_TAG: &[u8] = b"rrsc.stream.v1";

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RandomStream {
    root_seed: u64,
    path: Vec<(String, u64)>,
}

impl RandomStream {
    pub fn new(root_seed: u64) -> Self {
        Self {
            root_seed,
            path: Vec::new(),
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn path(&self) -> &[(String, u64)] {
        &self.path
    }

    /// Child stream one derivation step below `self`.
    ///
    /// Panics if `label` is empty.
    pub fn derive(&self, label: &str, index: u64) -> Self {
        assert!(!label.is_empty(), "stream labels must be nonempty");
        let mut path = self.path.clone();
        path.push((label.to_owned(), index));
        Self {
            root_seed: self.root_seed,
            path,
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        StreamRng::from_seed(self.key())
    }

    fn key(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(DOMAIN_TAG);
        h.update(self.root_seed.to_le_bytes());
        for (label, index) in &self.path {
            // Length prefix keeps ("ab", 1)("c", 2) distinct from ("a", 1)("bc", 2).
            h.update((label.len() as u64).to_le_bytes());
            h.update(label.as_bytes());
            h.update(index.to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Vector on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub const NORM_TOL: f64 = 1e-12;

    /// Wraps `entries`, which must already have unit norm.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidDimension("unit vector of dimension 0".into()));
        }
        let norm = l2_norm(&entries);
        if !((norm - 1.0).abs() <= Self::NORM_TOL) {
            return Err(Error::InvalidInput(format!(
                "expected a unit vector, got norm {norm}"
            )));
        }
        Ok(Self(entries))
    }

    /// Rescales `entries` to unit norm.
    pub fn normalize(mut entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::InvalidDimension("unit vector of dimension 0".into()));
        }
        let norm = l2_norm(&entries);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "cannot normalize a vector of norm {norm}"
            )));
        }
        entries.iter_mut().for_each(|x| *x /= norm);
        Ok(Self(entries))
    }

    /// Standard basis vector `e_{axis}` (zero-based).
    pub fn basis(d: usize, axis: usize) -> Result<Self> {
        if d == 0 || axis >= d {
            return Err(Error::InvalidDimension(format!(
                "basis vector e_{axis} in dimension {d}"
            )));
        }
        let mut e = vec![0.0; d];
        e[axis] = 1.0;
        Ok(Self(e))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for UnitVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Square orthogonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalMatrix(DMatrix<f64>);

impl OrthogonalMatrix {
    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// Largest entry of `|AᵀA - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let d = self.dim();
        let gram = self.0.transpose() * &self.0;
        (gram - DMatrix::<f64>::identity(d, d)).amax()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Column `j` as an owned vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.0.column(j).iter().copied().collect()
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.0.column(j).iter()) {
                *o += a * xj;
            }
        }
        out
    }

    /// `Aᵀ x`.
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|j| dot(self.0.column(j).as_slice(), x))
            .collect()
    }
}

/// Haar-distributed orthogonal matrix drawn from `stream`.
pub fn haar_orthogonal(d: usize, stream: &RandomStream) -> Result<OrthogonalMatrix> {
    haar_orthogonal_with(d, &mut stream.rng())
}

/// QR of an i.i.d. Gaussian matrix with the columns of Q flipped to make the
/// diagonal of R positive. Without the sign fix the result is not Haar.
pub fn haar_orthogonal_with<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<OrthogonalMatrix> {
    if d == 0 {
        return Err(Error::InvalidDimension("orthogonal matrix of dimension 0".into()));
    }
    let mut gauss = Vec::with_capacity(d * d);
    for _ in 0..d * d {
        gauss.push(rng.sample::<f64, _>(StandardNormal));
    }
    let qr = DMatrix::from_vec(d, d, gauss).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(OrthogonalMatrix(q))
}

/// First `m` columns of a Haar-distributed `d x d` orthogonal matrix, returned
/// as `m` consecutive length-`d` vectors.
///
/// Gram-Schmidt on `m` Gaussian vectors; equal in distribution to slicing the
/// output of [`haar_orthogonal`] at `O(m² d)` cost instead of `O(d³)`.
pub fn haar_frame_with<R: Rng + ?Sized>(m: usize, d: usize, rng: &mut R) -> Result<Vec<f64>> {
    if d == 0 || m == 0 || m > d {
        return Err(Error::InvalidDimension(format!(
            "orthonormal frame of {m} vectors in dimension {d}"
        )));
    }
    let mut frame = vec![0.0; m * d];
    for i in 0..m {
        let (done, rest) = frame.split_at_mut(i * d);
        let row = &mut rest[..d];
        for x in row.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        // Two passes of modified Gram-Schmidt keep the rows orthogonal to
        // machine precision.
        for _ in 0..2 {
            for prev in done.chunks_exact(d) {
                let proj = dot(prev, row);
                for (x, p) in row.iter_mut().zip(prev) {
                    *x -= proj * p;
                }
            }
        }
        let norm = l2_norm(row);
        row.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(frame)
}

/// Uniform draw from the unit sphere in `R^d`.
pub fn uniform_sphere(d: usize, stream: &RandomStream) -> Result<UnitVector> {
    uniform_sphere_with(d, &mut stream.rng())
}

pub fn uniform_sphere_with<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitVector> {
    if d == 0 {
        return Err(Error::InvalidDimension("sphere of dimension 0".into()));
    }
    loop {
        let g: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        // A zero Gaussian vector has probability zero; redraw if it happens.
        if g.iter().any(|&x| x != 0.0) {
            return UnitVector::normalize(g);
        }
    }
}

/// Samples the leading coordinates of a uniform unit vector in `R^d` without
/// materializing the remaining `d - m`.
///
/// The tail's squared norm is drawn as a single chi-square with `d - m`
/// degrees of freedom, which is exactly its distribution.
#[derive(Clone, Debug)]
pub struct SpherePrefix {
    m: usize,
    tail: Option<ChiSquared<f64>>,
}

impl SpherePrefix {
    pub fn new(m: usize, d: usize) -> Result<Self> {
        if m == 0 || m > d {
            return Err(Error::InvalidDimension(format!(
                "{m} leading coordinates of a sphere in dimension {d}"
            )));
        }
        let tail = if d > m {
            Some(
                ChiSquared::new((d - m) as f64)
                    .map_err(|e| Error::InvalidDimension(e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self { m, tail })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Fills `out` (length `m`) with the leading coordinates.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.m);
        loop {
            let mut sq = 0.0;
            for x in out.iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *x = g;
                sq += g * g;
            }
            if let Some(tail) = &self.tail {
                sq += tail.sample(rng);
            }
            if sq > 0.0 {
                let inv = sq.sqrt().recip();
                out.iter_mut().for_each(|x| *x *= inv);
                return;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_two_sample, MeanAccumulator};

    #[test]
    fn derive_is_reproducible() {
        let root = RandomStream::new(7);
        let a: Vec<u64> = {
            let mut r = root.derive("user", 3).rng();
            (0..100).map(|_| r.random()).collect()
        };
        let b: Vec<u64> = {
            let mut r = root.derive("user", 3).rng();
            (0..100).map(|_| r.random()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn derive_path_is_unambiguous() {
        let root = RandomStream::new(1);
        let x = root.derive("ab", 1).derive("c", 2).rng().random::<u64>();
        let y = root.derive("a", 1).derive("bc", 2).rng().random::<u64>();
        assert_ne!(x, y);
        let z = RandomStream::new(2).derive("ab", 1).derive("c", 2).rng().random::<u64>();
        assert_ne!(x, z);
    }

    #[test]
    #[should_panic]
    fn derive_rejects_empty_label() {
        RandomStream::new(0).derive("", 0);
    }

    #[test]
    fn sibling_streams_are_uncorrelated() {
        let root = RandomStream::new(2024);
        let mut r3 = root.derive("user", 3).rng();
        let mut r4 = root.derive("user", 4).rng();
        let n = 1_000_000;
        let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x: f64 = r3.random();
            let y: f64 = r4.random();
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        let nf = n as f64;
        let cov = sxy / nf - (sx / nf) * (sy / nf);
        let vx = sxx / nf - (sx / nf).powi(2);
        let vy = syy / nf - (sy / nf).powi(2);
        let rho = cov / (vx * vy).sqrt();
        assert!(rho.abs() < 0.01, "correlation {rho}");
    }

    #[test]
    fn calibration_stream_gaussians_are_centered() {
        let mut rng = RandomStream::new(5).derive("calib", 0).rng();
        let mut acc = MeanAccumulator::default();
        for _ in 0..1_000_000 {
            acc.push(rng.sample::<f64, _>(StandardNormal));
        }
        assert!(acc.mean().abs() <= 0.005, "mean {}", acc.mean());
    }

    #[test]
    fn haar_rejects_zero_dim() {
        assert!(matches!(
            haar_orthogonal(0, &RandomStream::new(0)),
            Err(Error::InvalidDimension(_))
        ));
        assert!(uniform_sphere(0, &RandomStream::new(0)).is_err());
    }

    #[test]
    fn haar_is_orthogonal() {
        let root = RandomStream::new(11);
        for d in [1usize, 2, 3, 10, 57] {
            let a = haar_orthogonal(d, &root.derive("haar", d as u64)).unwrap();
            assert!(a.orthogonality_defect() < 1e-10);
            let det = a.determinant();
            assert!((det.abs() - 1.0).abs() < 1e-9, "det {det}");
        }
    }

    #[test]
    fn haar_d1_is_a_fair_sign() {
        let mut rng = RandomStream::new(3).derive("haar1", 0).rng();
        let n = 100_000;
        let plus = (0..n)
            .filter(|_| haar_orthogonal_with(1, &mut rng).unwrap().matrix()[(0, 0)] > 0.0)
            .count();
        let freq = plus as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn haar_d3_first_column_second_moments() {
        let mut rng = RandomStream::new(4).derive("haar3", 0).rng();
        let n = 100_000;
        let mut m2 = [0.0; 3];
        for _ in 0..n {
            let a = haar_orthogonal_with(3, &mut rng).unwrap();
            for (i, s) in m2.iter_mut().enumerate() {
                *s += a.matrix()[(i, 0)].powi(2);
            }
        }
        for s in m2 {
            let e = s / n as f64;
            assert!((e - 1.0 / 3.0).abs() < 0.01, "second moment {e}");
        }
    }

    #[test]
    fn haar_image_of_fixed_vector_is_uniform() {
        // <A u, e1> against the first coordinate of a uniform sphere draw.
        let d = 6;
        let u = UnitVector::normalize(vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]).unwrap();
        let n = 100_000;
        let mut rng = RandomStream::new(9).derive("haar-inv", 0).rng();
        let rotated: Vec<f64> = (0..n)
            .map(|_| haar_orthogonal_with(d, &mut rng).unwrap().apply(u.as_slice())[0])
            .collect();
        let mut rng = RandomStream::new(9).derive("sphere-ref", 0).rng();
        let reference: Vec<f64> = (0..n)
            .map(|_| uniform_sphere_with(d, &mut rng).unwrap().as_slice()[0])
            .collect();
        let ks = ks_two_sample(&rotated, &reference);
        assert!(ks.passes(0.01), "{ks:?}");
    }

    #[test]
    fn frame_rows_are_orthonormal() {
        let mut rng = RandomStream::new(1).derive("frame", 0).rng();
        let (m, d) = (16, 40);
        let f = haar_frame_with(m, d, &mut rng).unwrap();
        for i in 0..m {
            for j in 0..m {
                let ip = dot(&f[i * d..(i + 1) * d], &f[j * d..(j + 1) * d]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ip - want).abs() < 1e-12);
            }
        }
        assert!(haar_frame_with(5, 4, &mut rng).is_err());
    }

    #[test]
    fn sphere_draws_are_unit_with_expected_moments() {
        let mut rng = RandomStream::new(12).derive("sphere", 0).rng();
        let d = 10;
        let mut first = MeanAccumulator::default();
        let mut second = MeanAccumulator::default();
        for _ in 0..1_000_000 {
            let a = uniform_sphere_with(d, &mut rng).unwrap();
            assert!((l2_norm(a.as_slice()) - 1.0).abs() < 1e-12);
            first.push(a.as_slice()[0]);
            second.push(a.as_slice()[0].powi(2));
        }
        assert!(first.mean().abs() <= 0.003, "E[a1] {}", first.mean());
        assert!((second.mean() - 0.1).abs() <= 0.002, "E[a1^2] {}", second.mean());
    }

    #[test]
    fn sphere_prefix_matches_full_draw() {
        let (m, d) = (3, 8);
        let prefix = SpherePrefix::new(m, d).unwrap();
        let n = 100_000;
        let mut rng = RandomStream::new(77).derive("prefix", 0).rng();
        let mut buf = vec![0.0; m];
        let a: Vec<f64> = (0..n)
            .map(|_| {
                prefix.sample_into(&mut rng, &mut buf);
                buf[1]
            })
            .collect();
        let mut rng = RandomStream::new(77).derive("full", 0).rng();
        let b: Vec<f64> = (0..n)
            .map(|_| uniform_sphere_with(d, &mut rng).unwrap().as_slice()[1])
            .collect();
        assert!(ks_two_sample(&a, &b).passes(0.01));
        assert!(SpherePrefix::new(0, 3).is_err());
        assert!(SpherePrefix::new(4, 3).is_err());
    }

    #[test]
    fn unit_vector_validation() {
        assert!(UnitVector::new(vec![0.6, 0.8]).is_ok());
        assert!(UnitVector::new(vec![0.6, 0.81]).is_err());
        assert!(UnitVector::new(vec![]).is_err());
        assert!(UnitVector::normalize(vec![0.0, 0.0]).is_err());
        let v = UnitVector::normalize(vec![3.0, 4.0]).unwrap();
        assert_eq!(v.as_slice(), &[0.6, 0.8]);
    }
}
