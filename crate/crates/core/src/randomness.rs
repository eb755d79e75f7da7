//! Perturbation distributions, their tail certificates, the word-indexed
//! perturbation field `w ↦ y_w`, and the empirical Borel–Cantelli check.
//!
//! The field is counter-based: the perturbation for a word is drawn from a
//! ChaCha8 stream keyed by the first 128 bits of a SHA-256 digest of
//! `(seed, model, canonical word encoding)`. Any `y_w` can therefore be
//! evaluated on its own, in any order and on any thread, without walking an
//! enumeration of all finite words.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::ifs::IfsSpec;

/// ChaCha8 stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform in `[0, 1)` with 53 random bits.
#[inline]
pub fn uniform_f64<R: RngCore>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in the open interval `(0, 1)`.
#[inline]
pub fn uniform_open<R: RngCore>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Uniform index in `0..m` (Lemire's widening multiply; bias below `m / 2^64`).
#[inline]
pub fn uniform_index<R: RngCore>(rng: &mut R, m: usize) -> usize {
    ((rng.next_u64() as u128 * m as u128) >> 64) as usize
}

/// Standard normal pair by the Marsaglia polar method.
fn polar_pair<R: RngCore>(rng: &mut R) -> (f64, f64) {
    loop {
        let u = 2.0 * uniform_f64(rng) - 1.0;
        let v = 2.0 * uniform_f64(rng) - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            let f = (-2.0 * s.ln() / s).sqrt();
            return (u * f, v * f);
        }
    }
}

/// Gamma(shape, 1) by Marsaglia–Tsang.
fn gamma_sample<R: RngCore>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        return gamma_sample(rng, shape + 1.0) * uniform_open(rng).powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let (z, _) = polar_pair(rng);
        let v = 1.0 + c * z;
        if v <= 0.0 {
            continue;
        }
        let v3 = v * v * v;
        let u = uniform_open(rng);
        if u.ln() < 0.5 * z * z + d - d * v3 + d * v3.ln() {
            return d * v3;
        }
    }
}

/// Volume of the Euclidean ball of radius `r` in `R^k`.
fn ball_volume(k: usize, r: f64) -> f64 {
    // V_0 = 1, V_1 = 2r, V_k = V_{k-2} · 2π r² / k.
    let (mut even, mut odd) = (1.0, 2.0 * r);
    if k == 0 {
        return even;
    }
    for j in 2..=k {
        if j % 2 == 0 {
            even *= 2.0 * std::f64::consts::PI * r * r / j as f64;
        } else {
            odd *= 2.0 * std::f64::consts::PI * r * r / j as f64;
        }
    }
    if k % 2 == 0 {
        even
    } else {
        odd
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Peak of the standard Student-t density with `nu` degrees of freedom.
fn student_t_peak(nu: f64) -> f64 {
    (ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0)).exp() / (nu * std::f64::consts::PI).sqrt()
}

/// Perturbation law `η` on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DistributionKind {
    /// Isotropic normal with per-coordinate standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// Independent Laplace coordinates with scale `b`.
    Laplace { b: f64 },
    /// Uniform on the Euclidean ball of radius `radius`; `radius = 0` is the point mass at 0.
    UniformBall { radius: f64 },
    /// Independent Student-t coordinates. Polynomial tails: negative control only.
    StudentT { nu: f64, scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributionSpec {
    pub kind: DistributionKind,
    pub dim: usize,
}

impl DistributionSpec {
    pub fn new(kind: DistributionKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Input("distribution dimension must be at least 1".into()));
        }
        let ok = match kind {
            DistributionKind::Gaussian { sigma } => sigma.is_finite() && sigma > 0.0,
            DistributionKind::Laplace { b } => b.is_finite() && b > 0.0,
            DistributionKind::UniformBall { radius } => radius.is_finite() && radius >= 0.0,
            DistributionKind::StudentT { nu, scale } => {
                nu.is_finite() && nu > 0.0 && scale.is_finite() && scale > 0.0
            }
        };
        if !ok {
            return Err(Error::Input(format!("invalid distribution parameters: {kind:?}")));
        }
        Ok(Self { kind, dim })
    }

    pub fn gaussian(sigma: f64, dim: usize) -> Result<Self> {
        Self::new(DistributionKind::Gaussian { sigma }, dim)
    }

    pub fn laplace(b: f64, dim: usize) -> Result<Self> {
        Self::new(DistributionKind::Laplace { b }, dim)
    }

    pub fn uniform_ball(radius: f64, dim: usize) -> Result<Self> {
        Self::new(DistributionKind::UniformBall { radius }, dim)
    }

    pub fn student_t(nu: f64, scale: f64, dim: usize) -> Result<Self> {
        Self::new(DistributionKind::StudentT { nu, scale }, dim)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            DistributionKind::Gaussian { .. } => "gaussian",
            DistributionKind::Laplace { .. } => "laplace",
            DistributionKind::UniformBall { .. } => "uniform-ball",
            DistributionKind::StudentT { .. } => "student-t",
        }
    }

    /// Super-polynomial tail decay. Student-t is the only inadmissible kind.
    pub fn tail_admissible(&self) -> bool {
        !matches!(self.kind, DistributionKind::StudentT { .. })
    }

    /// Point mass at the origin (unperturbed IFS).
    pub fn is_degenerate(&self) -> bool {
        matches!(self.kind, DistributionKind::UniformBall { radius } if radius == 0.0)
    }

    /// Supremum of the `d`-dimensional density (`∞` for the point mass).
    pub fn density_bound(&self) -> f64 {
        self.projected_density_bound(self.dim)
    }

    /// Supremum over all orthogonal projections onto `k`-dimensional subspaces
    /// of the projected density.
    ///
    /// Gaussian and uniform-ball are rotation invariant, so the value is the
    /// peak of the `k`-dimensional marginal. For independent coordinates with
    /// one-dimensional peak `p`, Cauchy–Binet gives a `k×k` minor of the
    /// projection with `|det| ≥ C(d,k)^{-1/2}`; conditioning on the other
    /// coordinates bounds the projected density by `p^k · C(d,k)^{1/2}`.
    pub fn projected_density_bound(&self, k: usize) -> f64 {
        let d = self.dim;
        match self.kind {
            DistributionKind::Gaussian { sigma } => {
                (2.0 * std::f64::consts::PI * sigma * sigma).powf(-(k as f64) / 2.0)
            }
            DistributionKind::UniformBall { radius } => {
                if radius == 0.0 {
                    f64::INFINITY
                } else {
                    ball_volume(d - k, radius) / ball_volume(d, radius)
                }
            }
            DistributionKind::Laplace { b } => {
                (2.0 * b).powi(-(k as i32)) * binomial(d, k).sqrt()
            }
            DistributionKind::StudentT { nu, scale } => {
                (student_t_peak(nu) / scale).powi(k as i32) * binomial(d, k).sqrt()
            }
        }
    }

    /// Projection-density constant `K`: the largest projected-density bound
    /// over subspace dimensions `1..=d`, floored at `2^{-d}` so that
    /// `C = 2^d K ≥ 1` also covers the trivial regime `ρ ≥ α_1`.
    pub fn projection_bound(&self) -> f64 {
        let k = (1..=self.dim)
            .map(|k| self.projected_density_bound(k))
            .fold(0.0, f64::max);
        k.max(0.5f64.powi(self.dim as i32))
    }

    /// Closed-form upper bound on `η{|X| > t}`.
    pub fn tail_bound(&self, t: f64) -> f64 {
        if !(t > 0.0) {
            return 1.0;
        }
        let d = self.dim as f64;
        let bound = match self.kind {
            DistributionKind::Gaussian { sigma } => {
                // Chernoff bound for χ²_d: P(χ² ≥ z) ≤ (z/d)^{d/2} e^{-(z-d)/2}, z > d.
                let z = (t / sigma).powi(2);
                if z <= d {
                    1.0
                } else {
                    (0.5 * d * (z / d).ln() - 0.5 * (z - d)).exp()
                }
            }
            DistributionKind::Laplace { b } => {
                // Some coordinate exceeds t/√d; each has P(|X_i| > u) = e^{-u/b}.
                d * (-t / (b * d.sqrt())).exp()
            }
            DistributionKind::UniformBall { radius } => {
                if t >= radius {
                    0.0
                } else {
                    1.0 - (t / radius).powf(d)
                }
            }
            DistributionKind::StudentT { nu, scale } => {
                // f(x) ≤ c (x²/ν)^{-(ν+1)/2} integrates to P(|T| > u) ≤ 2c ν^{(ν-1)/2} u^{-ν}.
                let u = t / (scale * d.sqrt());
                d * 2.0 * student_t_peak(nu) * nu.powf((nu - 1.0) / 2.0) * u.powf(-nu)
            }
        };
        bound.min(1.0)
    }

    /// Polynomial decay exponent of the tail bound; `None` when it decays
    /// faster than every polynomial.
    pub fn polynomial_tail_exponent(&self) -> Option<f64> {
        match self.kind {
            DistributionKind::StudentT { nu, .. } => Some(nu),
            _ => None,
        }
    }

    pub fn tail_certificate(&self) -> TailCertificate {
        let form = match self.kind {
            DistributionKind::Gaussian { .. } => "chi-square Chernoff: (z/d)^(d/2) exp(-(z-d)/2), z = (t/sigma)^2",
            DistributionKind::Laplace { .. } => "coordinate union bound: d exp(-t/(b sqrt d))",
            DistributionKind::UniformBall { .. } => "compact support: 1-(t/R)^d for t < R, 0 beyond",
            DistributionKind::StudentT { .. } => "polynomial: d 2c nu^((nu-1)/2) (t/(scale sqrt d))^(-nu)",
        };
        TailCertificate { dist: *self, admissible: self.tail_admissible(), form: form.to_string() }
    }

    /// Draws one vector into `out`.
    pub fn sample<R: RngCore>(&self, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            DistributionKind::Gaussian { sigma } => {
                let mut k = 0;
                while k < out.len() {
                    let (a, b) = polar_pair(rng);
                    out[k] = sigma * a;
                    if k + 1 < out.len() {
                        out[k + 1] = sigma * b;
                    }
                    k += 2;
                }
            }
            DistributionKind::Laplace { b } => {
                for v in out.iter_mut() {
                    let u = uniform_open(rng) - 0.5;
                    *v = -b * u.signum() * (1.0 - 2.0 * u.abs()).ln();
                }
            }
            DistributionKind::UniformBall { radius } => {
                if radius == 0.0 {
                    out.fill(0.0);
                    return;
                }
                loop {
                    for v in out.iter_mut() {
                        *v = 2.0 * uniform_f64(rng) - 1.0;
                    }
                    if out.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
                        break;
                    }
                }
                out.iter_mut().for_each(|v| *v *= radius);
            }
            DistributionKind::StudentT { nu, scale } => {
                for v in out.iter_mut() {
                    let (z, _) = polar_pair(rng);
                    let w = 2.0 * gamma_sample(rng, nu / 2.0);
                    *v = scale * z / (w / nu).sqrt();
                }
            }
        }
    }
}

/// `η{|X| > t}` upper bound (see [`DistributionSpec::tail_bound`]).
pub fn tail_probability_bound(dist: &DistributionSpec, t: f64) -> f64 {
    dist.tail_bound(t)
}

/// Closed-form tail bound together with its admissibility flag.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCertificate {
    pub dist: DistributionSpec,
    pub admissible: bool,
    pub form: String,
}

impl TailCertificate {
    pub fn bound(&self, t: f64) -> f64 {
        self.dist.tail_bound(t)
    }

    /// `max_t t^k · bound(t)` over `grid`.
    pub fn weighted_sup(&self, k: i32, grid: &[f64]) -> f64 {
        grid.iter().map(|&t| t.powi(k) * self.bound(t)).fold(0.0, f64::max)
    }
}

/// How perturbations are shared between words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FieldModel {
    /// A fresh i.i.d. vector for every finite word.
    #[default]
    FullWordIid,
    /// Words of equal length and equal final symbol share their vector.
    LastSymbol,
}

/// Anything that assigns a perturbation vector to every non-empty word.
pub trait PerturbationSource: Sync {
    fn dim(&self) -> usize;

    /// Writes `y_word` into `out` (`out.len() == dim`). `word` is non-empty.
    fn fill(&self, word: &[u32], out: &mut [f64]);

    /// True when every perturbation is exactly zero.
    fn is_null(&self) -> bool {
        false
    }
}

/// Deterministic word-indexed random field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationField {
    pub seed: u64,
    pub dist: DistributionSpec,
    pub model: FieldModel,
}

const FIELD_TAG: &[u8] = b"affdim/perturbation/v1";

fn push_varint(buf: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            buf.push(byte);
            return;
        }
        buf.push(byte | 0x80);
    }
}

impl PerturbationField {
    pub fn new(seed: u64, dist: DistributionSpec, model: FieldModel) -> Self {
        Self { seed, dist, model }
    }

    /// 128-bit key for `word`: truncated SHA-256 over the tag, seed, model
    /// and the length-prefixed varint encoding of the symbols (only the
    /// final symbol in last-symbol mode).
    pub fn key(&self, word: &[u32]) -> [u8; 16] {
        let mut buf = Vec::with_capacity(FIELD_TAG.len() + 12 + word.len());
        buf.extend_from_slice(FIELD_TAG);
        buf.extend_from_slice(&self.seed.to_le_bytes());
        push_varint(&mut buf, word.len() as u64);
        match self.model {
            FieldModel::FullWordIid => {
                buf.push(0);
                word.iter().for_each(|&s| push_varint(&mut buf, s as u64));
            }
            FieldModel::LastSymbol => {
                buf.push(1);
                push_varint(&mut buf, *word.last().unwrap_or(&0) as u64);
            }
        }
        let digest = Sha256::digest(&buf);
        let mut key = [0u8; 16];
        key.copy_from_slice(&digest[..16]);
        key
    }

    /// `y_word`; the empty word has no perturbation.
    pub fn perturbation(&self, word: &[u32]) -> Result<Vec<f64>> {
        if word.is_empty() {
            return Err(Error::InvalidWord("perturbations are indexed by non-empty words".into()));
        }
        let mut out = vec![0.0; self.dist.dim];
        self.fill(word, &mut out);
        Ok(out)
    }
}

impl PerturbationSource for PerturbationField {
    fn dim(&self) -> usize {
        self.dist.dim
    }

    fn fill(&self, word: &[u32], out: &mut [f64]) {
        if self.dist.is_degenerate() {
            out.fill(0.0);
            return;
        }
        let mut seed = [0u8; 32];
        seed[..16].copy_from_slice(&self.key(word));
        let mut rng = ChaCha8Rng::from_seed(seed);
        self.dist.sample(&mut rng, out);
    }

    fn is_null(&self) -> bool {
        self.dist.is_degenerate()
    }
}

/// The field seen from below a fixed prefix: `w ↦ y_{prefix·w}`.
pub struct ShiftedField<'a, P: PerturbationSource> {
    inner: &'a P,
    prefix: Vec<u32>,
}

impl<'a, P: PerturbationSource> ShiftedField<'a, P> {
    pub fn new(inner: &'a P, prefix: &[u32]) -> Self {
        Self { inner, prefix: prefix.to_vec() }
    }
}

impl<P: PerturbationSource> PerturbationSource for ShiftedField<'_, P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn fill(&self, word: &[u32], out: &mut [f64]) {
        let mut full = self.prefix.clone();
        full.extend_from_slice(word);
        self.inner.fill(&full, out);
    }

    fn is_null(&self) -> bool {
        self.inner.is_null()
    }
}

/// Zero perturbations everywhere (the classical attractor).
#[derive(Debug, Clone, Copy)]
pub struct NullField {
    pub dim: usize,
}

impl PerturbationSource for NullField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fill(&self, _word: &[u32], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn is_null(&self) -> bool {
        true
    }
}

/// Per-level line of the Borel–Cantelli report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailLevel {
    pub n: usize,
    /// `θ^{-n}`.
    pub threshold: f64,
    /// `min(1, N_n · η{|X| > θ^{-n}})` with `N_n` distinct perturbations at level `n`.
    pub union_bound: f64,
    pub partial_sum: f64,
    pub sampled_words: usize,
    pub exceedances: usize,
    /// Fraction of sampled words with `|y_w| > θ^{-n}`.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BorelCantelliReport {
    pub distribution: String,
    pub model: FieldModel,
    pub theta: f64,
    pub admissible: bool,
    /// Exponent `k` used in the ratio test: least `k` with `θ^k < 1/m` when
    /// tails are super-polynomial, the polynomial tail exponent otherwise.
    pub k: f64,
    /// Ratio of the geometric majorant of the union-bound series.
    pub series_ratio: f64,
    pub converges: bool,
    pub levels: Vec<TailLevel>,
    /// Last increment of the union-bound partial sums.
    pub cauchy_increment: f64,
}

/// Borel–Cantelli tail check: union bounds `P(A_n) ≤ N_n η{|X| > θ^{-n}}`,
/// their partial sums and convergence, and Monte Carlo exceedance counts
/// over sampled words of each level.
pub fn borel_cantelli_check(
    field: &PerturbationField,
    spec: &IfsSpec,
    theta: f64,
    levels: std::ops::RangeInclusive<usize>,
    samples_per_level: usize,
    seed: u64,
) -> Result<BorelCantelliReport> {
    if !(theta > spec.norm_t() && theta < 1.0) {
        return Err(Error::Domain(format!(
            "theta must lie in (‖T‖, 1) = ({}, 1), got {theta}",
            spec.norm_t()
        )));
    }
    if field.dist.dim != spec.dim() {
        return Err(Error::Input("distribution and IFS dimensions differ".into()));
    }
    let m = spec.num_maps() as f64;
    let admissible = field.dist.tail_admissible();
    let (k, base_ratio) = match field.dist.polynomial_tail_exponent() {
        None => {
            let k = (1..).find(|&k| theta.powi(k) * m < 1.0).unwrap();
            (k as f64, theta.powi(k))
        }
        Some(nu) => (nu, theta.powf(nu)),
    };
    let series_ratio = match field.model {
        FieldModel::FullWordIid => m * base_ratio,
        FieldModel::LastSymbol => base_ratio,
    };

    let mut partial = 0.0;
    let mut out = Vec::new();
    let mut y = vec![0.0; spec.dim()];
    for n in levels {
        let threshold = theta.powi(-(n as i32));
        let distinct = match field.model {
            FieldModel::FullWordIid => spec.word_count(n),
            FieldModel::LastSymbol => m,
        };
        let union_bound = (distinct * field.dist.tail_bound(threshold)).min(1.0);
        partial += union_bound;
        let mut rng = stream_rng(seed, n as u64);
        let mut word = vec![0u32; n];
        let mut exceedances = 0;
        for _ in 0..samples_per_level {
            word.iter_mut().for_each(|s| *s = uniform_index(&mut rng, spec.num_maps()) as u32);
            if n == 0 {
                continue;
            }
            field.fill(&word, &mut y);
            if y.iter().map(|v| v * v).sum::<f64>().sqrt() > threshold {
                exceedances += 1;
            }
        }
        out.push(TailLevel {
            n,
            threshold,
            union_bound,
            partial_sum: partial,
            sampled_words: samples_per_level,
            exceedances,
            frequency: if samples_per_level > 0 {
                exceedances as f64 / samples_per_level as f64
            } else {
                0.0
            },
        });
    }
    let cauchy_increment = out.last().map(|l| l.union_bound).unwrap_or(0.0);
    Ok(BorelCantelliReport {
        distribution: field.dist.name().to_string(),
        model: field.model,
        theta,
        admissible,
        k,
        series_ratio,
        converges: series_ratio < 1.0,
        levels: out,
        cauchy_increment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_field_is_zero() {
        let f = PerturbationField::new(1, DistributionSpec::uniform_ball(0.0, 2).unwrap(), FieldModel::FullWordIid);
        assert_eq!(f.perturbation(&[0, 1, 2]).unwrap(), vec![0.0, 0.0]);
        assert!(f.is_null());
    }

    #[test]
    fn empty_word_rejected() {
        let f = PerturbationField::new(1, DistributionSpec::gaussian(1.0, 2).unwrap(), FieldModel::FullWordIid);
        assert!(matches!(f.perturbation(&[]), Err(Error::InvalidWord(_))));
    }

    #[test]
    fn last_symbol_model_shares_vectors() {
        let f = PerturbationField::new(5, DistributionSpec::gaussian(1.0, 2).unwrap(), FieldModel::LastSymbol);
        assert_eq!(f.perturbation(&[0, 1, 2]).unwrap(), f.perturbation(&[2, 0, 2]).unwrap());
        assert_ne!(f.perturbation(&[0, 1, 2]).unwrap(), f.perturbation(&[0, 1, 1]).unwrap());
        assert_ne!(f.perturbation(&[0, 2]).unwrap(), f.perturbation(&[0, 1, 2]).unwrap());
    }

    #[test]
    fn full_word_field_is_repeatable_and_seed_dependent() {
        let g = DistributionSpec::gaussian(1.0, 3).unwrap();
        let a = PerturbationField::new(5, g, FieldModel::FullWordIid);
        let b = PerturbationField::new(6, g, FieldModel::FullWordIid);
        let w = [3, 1, 4, 1, 5];
        assert_eq!(a.perturbation(&w).unwrap(), a.perturbation(&w).unwrap());
        assert_ne!(a.perturbation(&w).unwrap(), b.perturbation(&w).unwrap());
        // Length prefix keeps (1) and (1, 0) apart even though bytes overlap.
        assert_ne!(a.key(&[1]), a.key(&[1, 0]));
    }

    #[test]
    fn tail_bounds() {
        let ball = DistributionSpec::uniform_ball(1.0, 2).unwrap();
        assert_eq!(tail_probability_bound(&ball, 2.0), 0.0);
        let g = DistributionSpec::gaussian(1.0, 2).unwrap().tail_certificate();
        assert!(g.admissible);
        let grid: Vec<f64> = (0..60).map(|i| 10f64.powf(i as f64 * 0.1)).collect();
        for k in 1..=10 {
            let far: Vec<f64> = grid.iter().copied().filter(|t| *t > 1e4).collect();
            assert_eq!(g.weighted_sup(k, &far), 0.0);
        }
        let t = DistributionSpec::student_t(3.0, 1.0, 2).unwrap().tail_certificate();
        assert!(!t.admissible);
        // t^5 · bound(t) grows like t^2 once the bound drops below 1.
        let tail_grid: Vec<f64> = (0..12).map(|i| 1e2 * 4f64.powi(i)).collect();
        let vals: Vec<f64> = tail_grid.iter().map(|&x| x.powi(5) * t.bound(x)).collect();
        assert!(vals.windows(2).all(|w| w[1] > 10.0 * w[0]));
    }

    #[test]
    fn gaussian_tail_bound_dominates_exact_tail() {
        // For d = 2, P(|X| > t) = exp(-t²/2σ²) exactly.
        let g = DistributionSpec::gaussian(0.7, 2).unwrap();
        for t in [0.5, 1.0, 1.5, 2.0, 3.0, 5.0] {
            let exact = (-(t * t) / (2.0 * 0.49f64)).exp();
            assert!(g.tail_bound(t) >= exact * (1.0 - 1e-12), "t={t}");
        }
    }

    #[test]
    fn projection_constants() {
        let g = DistributionSpec::gaussian(0.1, 2).unwrap();
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((g.density_bound() - 1.0 / (two_pi * 0.01)).abs() < 1e-9);
        assert!((g.projection_bound() - 1.0 / (two_pi * 0.01)).abs() < 1e-9);
        // Wide Gaussian: the floor 2^-d keeps C = 2^d K at least 1.
        let wide = DistributionSpec::gaussian(10.0, 2).unwrap();
        assert_eq!(wide.projection_bound(), 0.25);
        // Unit disc: 1-d marginal peak is 2/π, 2-d density 1/π.
        let b = DistributionSpec::uniform_ball(1.0, 2).unwrap();
        assert!((b.projected_density_bound(1) - 2.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!((b.density_bound() - 1.0 / std::f64::consts::PI).abs() < 1e-12);
        assert!(DistributionSpec::uniform_ball(0.0, 2).unwrap().projection_bound().is_infinite());
        let l = DistributionSpec::laplace(0.5, 2).unwrap();
        assert!((l.projected_density_bound(1) - 2f64.sqrt()).abs() < 1e-12);
        assert!((l.density_bound() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn samplers_have_right_scale() {
        let mut rng = stream_rng(42, 0);
        let n = 40_000;
        let mut out = [0.0; 2];
        for (dist, var) in [
            (DistributionSpec::gaussian(0.5, 2).unwrap(), 0.25),
            (DistributionSpec::laplace(0.5, 2).unwrap(), 0.5),
            (DistributionSpec::uniform_ball(2.0, 2).unwrap(), 1.0),
            (DistributionSpec::student_t(5.0, 1.0, 2).unwrap(), 5.0 / 3.0),
        ] {
            let mut sq = 0.0;
            for _ in 0..n {
                dist.sample(&mut rng, &mut out);
                sq += out[0] * out[0];
            }
            let v = sq / n as f64;
            assert!((v - var).abs() < 0.08 * var, "{}: {v} vs {var}", dist.name());
        }
    }

    #[test]
    fn borel_cantelli_series_classification() {
        let spec = IfsSpec::similarity(2, 0.5, vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.0, 0.5]])
            .unwrap();
        let g = PerturbationField::new(1, DistributionSpec::gaussian(1.0, 2).unwrap(), FieldModel::FullWordIid);
        let r = borel_cantelli_check(&g, &spec, 0.8, 1..=20, 2000, 3).unwrap();
        assert!(r.converges && r.admissible);
        assert_eq!(r.k, 5.0); // 0.8^5 = 0.328 < 1/3 <= 0.8^4
        assert!(r.levels[9].frequency < 1e-3);

        let t = PerturbationField::new(1, DistributionSpec::student_t(3.0, 1.0, 2).unwrap(), FieldModel::FullWordIid);
        let r = borel_cantelli_check(&t, &spec, 0.8, 1..=10, 100, 3).unwrap();
        assert!(!r.converges && !r.admissible);
        assert!((r.series_ratio - 3.0 * 0.512).abs() < 1e-12);
        // One perturbation per symbol and level: the polynomial tail suffices.
        let t_last = PerturbationField { model: FieldModel::LastSymbol, ..t };
        assert!(borel_cantelli_check(&t_last, &spec, 0.8, 1..=10, 100, 3).unwrap().converges);

        let ball = PerturbationField::new(1, DistributionSpec::uniform_ball(2.0, 2).unwrap(), FieldModel::FullWordIid);
        let r = borel_cantelli_check(&ball, &spec, 0.8, 1..=6, 10, 3).unwrap();
        assert_eq!(r.levels[0].union_bound, 1.0);
        assert_eq!(r.levels[5].union_bound, 0.0); // 0.8^-6 = 3.8 > 2

        assert!(matches!(
            borel_cantelli_check(&g, &spec, 0.4, 1..=3, 1, 0),
            Err(Error::Domain(_))
        ));
    }
}
