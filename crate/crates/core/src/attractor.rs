//! Points of the perturbed attractor `Λ^y`.
//!
//! A point is the value of the series
//! `Π^y(i) = Σ_{r≥0} T_{i_0…i_{r−1}} (a_{i_r} + y_{i_0…i_r})`
//! summed to a depth `N` chosen so that the geometric tail bound
//! `‖T‖^N (‖a‖/(1−‖T‖) + κ θ^{−N−1}/(1−‖T‖/θ))` is at most the requested
//! tolerance. The factor `κ ≥ 1` starts at 1 (the cap `|y_w| ≤ θ^{−|w|}`) and
//! grows to the largest observed `|y_w| θ^{|w|}` whenever a sampled
//! perturbation breaks the cap, after which the depth is extended.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ifs::{map_subtrees, walk_subtree, IfsSpec, KahanSum, Word};
use crate::linalg::{self, PhiWeights};
use crate::randomness::{stream_rng, uniform_f64, uniform_index, PerturbationField, PerturbationSource};

pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub truncation_tol: f64,
    pub max_depth: usize,
    pub theta: f64,
}

impl ProjectionConfig {
    /// Config with the default depth limit `⌈10 ln(1/ε) / ln(1/‖T‖)⌉`.
    pub fn new(spec: &IfsSpec, truncation_tol: f64, theta: f64) -> Result<Self> {
        let cfg = Self {
            truncation_tol,
            max_depth: default_max_depth(spec.norm_t(), truncation_tol),
            theta,
        };
        cfg.validate(spec)?;
        Ok(cfg)
    }

    pub fn validate(&self, spec: &IfsSpec) -> Result<()> {
        if !(self.truncation_tol > 0.0 && self.truncation_tol.is_finite()) {
            return Err(Error::Domain(format!(
                "truncation tolerance must be positive, got {}",
                self.truncation_tol
            )));
        }
        if !(self.theta > spec.norm_t() && self.theta < 1.0) {
            return Err(Error::Domain(format!(
                "theta must lie in (‖T‖, 1) = ({}, 1), got {}",
                spec.norm_t(),
                self.theta
            )));
        }
        if self.max_depth == 0 {
            return Err(Error::Input("max_depth must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn default_max_depth(norm_t: f64, tol: f64) -> usize {
    let v = 10.0 * (1.0 / tol).ln() / (1.0 / norm_t).ln();
    if v.is_finite() {
        (v.ceil() as usize).max(1)
    } else {
        1
    }
}

/// Tail of the projection series beyond depth `depth`.
pub fn truncation_bound(spec: &IfsSpec, theta: f64, depth: usize, kappa: f64) -> f64 {
    let t = spec.norm_t();
    let translations = t.powi(depth as i32) * spec.norm_a() / (1.0 - t);
    if kappa == 0.0 {
        return translations;
    }
    let noise = kappa * (t / theta).powi(depth as i32) / theta / (1.0 - t / theta);
    translations + noise
}

/// Least depth in `from..=max_depth` whose bound is at most `tol`.
fn depth_for(spec: &IfsSpec, cfg: &ProjectionConfig, kappa: f64, from: usize) -> Option<usize> {
    let ok = |n: usize| truncation_bound(spec, cfg.theta, n, kappa) <= cfg.truncation_tol;
    if from > cfg.max_depth || !ok(cfg.max_depth) {
        return None;
    }
    let (mut lo, mut hi) = (from, cfg.max_depth);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub point: Vec<f64>,
    /// The symbols actually read, of length equal to the truncation depth.
    pub word: Word,
    pub truncation_bound: f64,
}

/// Evaluates `Π^y` along the infinite word whose `r`-th symbol is `symbol(r)`.
/// Symbols are requested in order and only up to the truncation depth.
pub fn project<P: PerturbationSource + ?Sized>(
    spec: &IfsSpec,
    field: &P,
    symbol: &mut dyn FnMut(usize) -> u32,
    cfg: &ProjectionConfig,
) -> Result<Projection> {
    cfg.validate(spec)?;
    let d = spec.dim();
    if field.dim() != d {
        return Err(Error::Input("perturbation and IFS dimensions differ".into()));
    }
    let null = field.is_null();
    let mut kappa = if null { 0.0 } else { 1.0 };
    let unreachable = |kappa: f64| Error::TruncationNotAchieved {
        depth: cfg.max_depth,
        bound: truncation_bound(spec, cfg.theta, cfg.max_depth, kappa),
    };
    let mut target = depth_for(spec, cfg, kappa, 1).ok_or_else(|| unreachable(kappa))?;

    let m = spec.num_maps();
    let mut word = Vec::with_capacity(target);
    let mut x = vec![0.0; d];
    let mut prod = linalg::Matrix::identity(d).as_slice().to_vec();
    let mut tmp = vec![0.0; d * d];
    let mut term = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut r = 0;
    while r < target {
        let sym = symbol(r);
        if sym as usize >= m {
            return Err(Error::InvalidWord(format!("symbol {} out of range for {m} maps", sym + 1)));
        }
        word.push(sym);
        let map = &spec.maps()[sym as usize];
        if null {
            term.copy_from_slice(&map.translation);
        } else {
            field.fill(&word, &mut y);
            let observed = y.iter().map(|v| v * v).sum::<f64>().sqrt() * cfg.theta.powi(word.len() as i32);
            if observed > kappa {
                kappa = observed;
                target = depth_for(spec, cfg, kappa, r + 1).ok_or_else(|| unreachable(kappa))?;
            }
            for k in 0..d {
                term[k] = map.translation[k] + y[k];
            }
        }
        linalg::mat_vec_into(&prod, &term, &mut y, d);
        x.iter_mut().zip(&y).for_each(|(xi, v)| *xi += v);
        linalg::mul_into(&prod, map.matrix.as_slice(), &mut tmp, d);
        std::mem::swap(&mut prod, &mut tmp);
        r += 1;
    }
    Ok(Projection {
        point: x,
        word: Word(word),
        truncation_bound: truncation_bound(spec, cfg.theta, target, kappa),
    })
}

/// The series summed over exactly the terms `r < word.len()`, with no tail.
pub fn partial_sum<P: PerturbationSource + ?Sized>(
    spec: &IfsSpec,
    field: &P,
    word: &[u32],
) -> Result<Vec<f64>> {
    spec.check_word(word)?;
    let d = spec.dim();
    let mut x = vec![0.0; d];
    let mut prod = linalg::Matrix::identity(d).as_slice().to_vec();
    let mut tmp = vec![0.0; d * d];
    let mut term = vec![0.0; d];
    let mut y = vec![0.0; d];
    for r in 0..word.len() {
        let map = &spec.maps()[word[r] as usize];
        field.fill(&word[..=r], &mut y);
        for k in 0..d {
            term[k] = map.translation[k] + y[k];
        }
        linalg::mat_vec_into(&prod, &term, &mut y, d);
        x.iter_mut().zip(&y).for_each(|(xi, v)| *xi += v);
        linalg::mul_into(&prod, map.matrix.as_slice(), &mut tmp, d);
        std::mem::swap(&mut prod, &mut tmp);
    }
    Ok(x)
}

/// Cylinder constant `C = 2 max{2/(‖T‖(1 − ‖T‖/(‖T‖+ε₀))), 2‖a‖/(1 − ‖T‖)}`.
pub fn cylinder_constant(spec: &IfsSpec, eps0: f64) -> f64 {
    let t = spec.norm_t();
    let first = 2.0 / (t * (1.0 - t / (t + eps0)));
    let second = 2.0 * spec.norm_a() / (1.0 - t);
    2.0 * first.max(second)
}

/// Default gap `ε₀ = (1 − ‖T‖)/10` between `‖T‖` and admissible `θ`.
pub fn default_eps0(spec: &IfsSpec) -> f64 {
    (1.0 - spec.norm_t()) / 10.0
}

/// `2 α_1(T_word) C / θ^n` with `n = |word|`: a bound on the diameter of the
/// image of the cylinder `[word]`.
pub fn cylinder_diameter_bound(spec: &IfsSpec, theta: f64, word: &[u32]) -> Result<f64> {
    let eps0 = default_eps0(spec);
    if !(theta > spec.norm_t() + eps0 && theta < 1.0) {
        return Err(Error::Domain(format!(
            "theta must lie in (‖T‖ + ε₀, 1) = ({}, 1), got {theta}",
            spec.norm_t() + eps0
        )));
    }
    let alpha1 = spec.word_spectrum(word)?.largest();
    let c = cylinder_constant(spec, eps0);
    Ok(2.0 * alpha1 * c / theta.powi(word.len() as i32))
}

/// Word measure at level `n`: `weight(ω) = φ^s(T_ω) / S_n(s)`, indexed by the
/// lexicographic rank of `ω`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WordMeasure {
    pub n: usize,
    pub s: f64,
    pub num_maps: usize,
    /// `c′ = 1/S_n(s)`, so `weight(ω) = c′ φ^s(T_ω)`.
    pub c_prime: f64,
    pub weights: Vec<f64>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

impl WordMeasure {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn word(&self, index: usize) -> Word {
        let m = self.num_maps;
        let mut w = vec![0u32; self.n];
        let mut idx = index;
        for slot in w.iter_mut().rev() {
            *slot = (idx % m) as u32;
            idx /= m;
        }
        Word(w)
    }

    pub fn index_of(&self, word: &[u32]) -> Result<usize> {
        if word.len() != self.n || word.iter().any(|&s| s as usize >= self.num_maps) {
            return Err(Error::InvalidWord(format!("expected a word of length {} over {} symbols", self.n, self.num_maps)));
        }
        Ok(word.iter().fold(0usize, |acc, &s| acc * self.num_maps + s as usize))
    }

    pub fn weight(&self, word: &[u32]) -> Result<f64> {
        Ok(self.weights[self.index_of(word)?])
    }

    /// Index drawn with probability equal to its weight, from `u ∈ [0, 1)`.
    pub fn sample_index(&self, u: f64) -> usize {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let target = u * total;
        self.cumulative.partition_point(|&c| c <= target).min(self.len() - 1)
    }
}

/// Normalised `φ^s(T_ω)` weights over all words of length `n`.
pub fn falconer_weights(spec: &IfsSpec, s: f64, n: usize) -> Result<WordMeasure> {
    if !(s >= 0.0) {
        return Err(Error::Domain(format!("exponent s must be >= 0, got {s}")));
    }
    if !spec.exact_feasible(n) {
        return Err(Error::EnumerationTooLarge {
            words: spec.word_count(n),
            cap: crate::ifs::ENUMERATION_CAP,
        });
    }
    let d = spec.dim();
    let phi = PhiWeights::new(d, s);
    let parts = map_subtrees(spec, n, |prefix| {
        let mut logs = vec![0.0; d];
        let mut values = Vec::new();
        walk_subtree(spec, prefix, n, n, |_, prod, log_det| {
            linalg::log_spectrum_into(prod, d, log_det, &mut logs);
            values.push(phi.phi_from_logs(&logs));
        });
        values
    });
    let phis: Vec<f64> = parts.into_iter().flatten().collect();
    let mut total = KahanSum::default();
    phis.iter().for_each(|&v| total.add(v));
    let total = total.value();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateSystem(format!("S_{n}({s}) = {total}")));
    }
    let c_prime = 1.0 / total;
    let weights: Vec<f64> = phis.iter().map(|v| v * c_prime).collect();
    let mut acc = KahanSum::default();
    let cumulative = weights
        .iter()
        .map(|&w| {
            acc.add(w);
            acc.value()
        })
        .collect();
    Ok(WordMeasure { n, s, num_maps: spec.num_maps(), c_prime, weights, cumulative })
}

/// How word prefixes are drawn for a point cloud.
#[derive(Debug, Clone)]
pub enum WordSampler {
    /// Every symbol uniform and independent.
    Uniform,
    /// The first `n` symbols from the measure, uniform afterwards.
    Measure(WordMeasure),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplerInfo {
    Uniform,
    WordMeasure { s: f64, n: usize },
}

impl WordSampler {
    pub fn info(&self) -> SamplerInfo {
        match self {
            WordSampler::Uniform => SamplerInfo::Uniform,
            WordSampler::Measure(m) => SamplerInfo::WordMeasure { s: m.s, n: m.n },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudMeta {
    pub dim: usize,
    pub spec_digest: String,
    pub field: PerturbationField,
    pub projection: ProjectionConfig,
    pub count: usize,
    pub sampler: SamplerInfo,
    pub sample_seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint {
    pub coords: Vec<f64>,
    pub word: Word,
    pub trunc_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub dim: usize,
    pub points: Vec<CloudPoint>,
    pub meta: Option<CloudMeta>,
}

/// Hex SHA-256 of the maps' dimensions, matrices and translations.
pub fn spec_digest(spec: &IfsSpec) -> String {
    let mut h = Sha256::new();
    h.update(b"affdim/ifs/v1");
    h.update((spec.dim() as u64).to_le_bytes());
    h.update((spec.num_maps() as u64).to_le_bytes());
    for map in spec.maps() {
        map.matrix.as_slice().iter().for_each(|v| h.update(v.to_le_bytes()));
        map.translation.iter().for_each(|v| h.update(v.to_le_bytes()));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Draws `count` points of `Λ^y`. Point `k` reads its symbols from its own
/// random stream `(seed, k)`, so the cloud does not depend on scheduling.
pub fn generate_cloud(
    spec: &IfsSpec,
    field: &PerturbationField,
    cfg: &ProjectionConfig,
    count: usize,
    sampler: &WordSampler,
    seed: u64,
) -> Result<PointCloud> {
    cfg.validate(spec)?;
    if field.dist.dim != spec.dim() {
        return Err(Error::Input("distribution and IFS dimensions differ".into()));
    }
    if !field.dist.tail_admissible() {
        return Err(Error::Inadmissible(
            field.dist.name().into(),
            "point generation needs super-polynomial tails".into(),
        ));
    }
    if let WordSampler::Measure(mu) = sampler {
        if mu.num_maps != spec.num_maps() || mu.is_empty() {
            return Err(Error::Input("word measure does not match the IFS".into()));
        }
    }
    let m = spec.num_maps();
    let points = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k as u64);
            let prefix = match sampler {
                WordSampler::Uniform => Word::empty(),
                WordSampler::Measure(mu) => mu.word(mu.sample_index(uniform_f64(&mut rng))),
            };
            let mut symbol = |r: usize| {
                if r < prefix.len() {
                    prefix[r]
                } else {
                    uniform_index(&mut rng, m) as u32
                }
            };
            let p = project(spec, field, &mut symbol, cfg)?;
            Ok(CloudPoint { coords: p.point, word: p.word, trunc_bound: p.truncation_bound })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud {
        dim: spec.dim(),
        points,
        meta: Some(CloudMeta {
            dim: spec.dim(),
            spec_digest: spec_digest(spec),
            field: *field,
            projection: *cfg,
            count,
            sampler: sampler.info(),
            sample_seed: seed,
            notes: Vec::new(),
        }),
    })
}

impl PointCloud {
    pub fn from_coords(dim: usize, coords: Vec<Vec<f64>>) -> Result<Self> {
        if coords.iter().any(|c| c.len() != dim) {
            return Err(Error::Input(format!("every point needs {dim} coordinates")));
        }
        let points = coords
            .into_iter()
            .map(|c| CloudPoint { coords: c, word: Word::empty(), trunc_bound: 0.0 })
            .collect();
        Ok(Self { dim, points, meta: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Per-coordinate minimum and maximum; `None` for an empty cloud.
    pub fn bounding_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let first = self.points.first()?;
        let mut lo = first.coords.clone();
        let mut hi = first.coords.clone();
        for p in &self.points[1..] {
            for k in 0..self.dim {
                lo[k] = lo[k].min(p.coords[k]);
                hi[k] = hi[k].max(p.coords[k]);
            }
        }
        Some((lo, hi))
    }

    /// Length of the bounding-box diagonal.
    pub fn diameter(&self) -> f64 {
        self.bounding_box()
            .map(|(lo, hi)| lo.iter().zip(&hi).map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt())
            .unwrap_or(0.0)
    }

    /// CSV with header `x1,…,xd,word,trunc_bound`. Floats are written in the
    /// shortest form that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        header.push("word".into());
        header.push("trunc_bound".into());
        writeln!(out, "{}", header.join(","))?;
        let mut line = String::new();
        for p in &self.points {
            line.clear();
            for v in &p.coords {
                line.push_str(&format!("{v:?},"));
            }
            line.push_str(&p.word.to_string());
            line.push_str(&format!(",{:?}", p.trunc_bound));
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = match lines.next() {
            Some(h) => h.map_err(|e| Error::Input(format!("reading cloud: {e}")))?,
            None => return Err(Error::Input("cloud file is empty".into())),
        };
        let cols: Vec<&str> = header.trim().split(',').collect();
        let dim = cols.len().saturating_sub(2);
        let expected: Vec<String> = (1..=dim)
            .map(|k| format!("x{k}"))
            .chain(["word".to_string(), "trunc_bound".to_string()])
            .collect();
        if dim == 0 || cols != expected {
            return Err(Error::Input(format!("bad cloud header {header:?}")));
        }
        let mut points = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Input(format!("reading cloud: {e}")))?;
            if line.trim().is_empty() {
                continue;
            }
            let row = i + 2;
            let fields: Vec<&str> = line.trim().split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Input(format!("line {row}: expected {} fields", dim + 2)));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Input(format!("line {row}: bad number {s:?}")))
            };
            let coords = fields[..dim].iter().map(|s| num(s)).collect::<Result<Vec<_>>>()?;
            let word: Word = fields[dim]
                .parse()
                .map_err(|e| Error::Input(format!("line {row}: {e}")))?;
            let trunc_bound = num(fields[dim + 1])?;
            points.push(CloudPoint { coords, word, trunc_bound });
        }
        Ok(Self { dim, points, meta: None })
    }

    pub fn meta_json(&self) -> Option<String> {
        self.meta.as_ref().map(|m| serde_json::to_string_pretty(m).expect("meta serialises"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ifs::AffineMap;
    use crate::linalg::Matrix;
    use crate::randomness::{DistributionSpec, FieldModel, NullField, ShiftedField};

    fn point_mass(d: usize) -> PerturbationField {
        PerturbationField::new(0, DistributionSpec::uniform_ball(0.0, d).unwrap(), FieldModel::FullWordIid)
    }

    fn sim3() -> IfsSpec {
        IfsSpec::similarity(2, 0.5, vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap()
    }

    #[test]
    fn single_map_fixed_point() {
        let spec = IfsSpec::new(vec![AffineMap::new(Matrix::diag(&[0.5, 0.5]).unwrap(), vec![1.0, 0.0])])
            .unwrap();
        let cfg = ProjectionConfig::new(&spec, 1e-12, 0.75).unwrap();
        let p = project(&spec, &point_mass(2), &mut |_| 0, &cfg).unwrap();
        assert!((p.point[0] - 2.0).abs() <= 1e-12 && p.point[1].abs() <= 1e-12);
        assert!(p.truncation_bound <= 1e-12);
        let b: Vec<f64> = [5, 10, 20].iter().map(|&n| truncation_bound(&spec, 0.75, n, 0.0)).collect();
        assert!((b[1] / b[0] - 0.5f64.powi(5)).abs() < 1e-15);
        assert!((b[2] / b[1] - 0.5f64.powi(10)).abs() < 1e-15);
    }

    #[test]
    fn unperturbed_points_in_unit_interval() {
        let spec = IfsSpec::similarity(2, 0.5, vec![vec![0.0, 0.0], vec![0.5, 0.0]]).unwrap();
        let cfg = ProjectionConfig::new(&spec, 1e-9, 0.8).unwrap();
        let cloud = generate_cloud(&spec, &point_mass(2), &cfg, 500, &WordSampler::Uniform, 1).unwrap();
        for p in &cloud.points {
            assert!(p.coords[0] >= -1e-9 && p.coords[0] <= 1.0 + 1e-9);
            assert!(p.coords[1].abs() <= 1e-9);
        }
    }

    #[test]
    fn field_projection_is_deterministic() {
        let spec = sim3();
        let field = PerturbationField::new(9, DistributionSpec::gaussian(0.05, 2).unwrap(), FieldModel::FullWordIid);
        let cfg = ProjectionConfig::new(&spec, 1e-9, 0.8).unwrap();
        let a = project(&spec, &field, &mut |r| (r % 3) as u32, &cfg).unwrap();
        let b = project(&spec, &field, &mut |r| (r % 3) as u32, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_cloud() {
        let spec = sim3();
        let cfg = ProjectionConfig::new(&spec, 1e-9, 0.8).unwrap();
        let c = generate_cloud(&spec, &point_mass(2), &cfg, 0, &WordSampler::Uniform, 1).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn student_t_generation_refused() {
        let spec = sim3();
        let cfg = ProjectionConfig::new(&spec, 1e-9, 0.8).unwrap();
        let field = PerturbationField::new(1, DistributionSpec::student_t(3.0, 1.0, 2).unwrap(), FieldModel::FullWordIid);
        let err = generate_cloud(&spec, &field, &cfg, 1, &WordSampler::Uniform, 1).unwrap_err();
        assert_eq!(err.kind(), "inadmissible-distribution");
    }

    #[test]
    fn theta_must_exceed_norm() {
        let spec = sim3();
        assert!(matches!(ProjectionConfig::new(&spec, 1e-9, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn cap_violation_inflates_bound() {
        let spec = sim3();
        let field = PerturbationField::new(2, DistributionSpec::gaussian(5.0, 2).unwrap(), FieldModel::FullWordIid);
        let cfg = ProjectionConfig::new(&spec, 1e-6, 0.9).unwrap();
        let p = project(&spec, &field, &mut |_| 1, &cfg).unwrap();
        assert!(p.truncation_bound <= 1e-6);
        let base = depth_for(&spec, &cfg, 1.0, 1).unwrap();
        assert!(p.word.len() > base);
    }

    #[test]
    fn truncation_not_achieved() {
        let spec = sim3();
        let cfg = ProjectionConfig { truncation_tol: 1e-12, max_depth: 5, theta: 0.8 };
        let field = PerturbationField::new(2, DistributionSpec::gaussian(0.1, 2).unwrap(), FieldModel::FullWordIid);
        let err = project(&spec, &field, &mut |_| 0, &cfg).unwrap_err();
        assert!(matches!(err, Error::TruncationNotAchieved { depth: 5, .. }));
    }

    #[test]
    fn fixed_point_relation_unperturbed() {
        let spec = sim3();
        let null = NullField { dim: 2 };
        let cfg = ProjectionConfig::new(&spec, 1e-10, 0.8).unwrap();
        let tail = |r: usize| ((r * 7 + 3) % 3) as u32;
        let inner = project(&spec, &null, &mut |r| tail(r), &cfg).unwrap();
        let outer = project(&spec, &null, &mut |r| if r == 0 { 2 } else { tail(r - 1) }, &cfg).unwrap();
        let mapped = spec.maps()[2].apply(&inner.point);
        for k in 0..2 {
            assert!((outer.point[k] - mapped[k]).abs() <= inner.truncation_bound + outer.truncation_bound);
        }
    }

    #[test]
    fn perturbed_recursion() {
        let spec = sim3();
        let field = PerturbationField::new(4, DistributionSpec::gaussian(0.1, 2).unwrap(), FieldModel::FullWordIid);
        let w: Vec<u32> = (0..40).map(|r| ((r * 5 + 1) % 3) as u32).collect();
        let mut iw = vec![1u32];
        iw.extend_from_slice(&w);
        let lhs = partial_sum(&spec, &field, &iw).unwrap();
        let shifted = ShiftedField::new(&field, &[1]);
        let inner = partial_sum(&spec, &shifted, &w).unwrap();
        let y1 = field.perturbation(&[1]).unwrap();
        let rhs = spec.maps()[1].apply(&inner);
        for k in 0..2 {
            assert!((lhs[k] - (rhs[k] + y1[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn falconer_examples() {
        let mu = falconer_weights(&sim3(), 1.3, 2).unwrap();
        assert_eq!(mu.len(), 9);
        assert!(mu.weights.iter().all(|w| (w - 1.0 / 9.0).abs() < 1e-15));

        let spec = IfsSpec::new(vec![
            AffineMap::new(Matrix::diag(&[0.5, 0.5]).unwrap(), vec![0.0, 0.0]),
            AffineMap::new(Matrix::diag(&[0.3, 0.3]).unwrap(), vec![1.0, 0.0]),
        ])
        .unwrap();
        let mu = falconer_weights(&spec, 1.0, 1).unwrap();
        assert!((mu.weights[0] - 0.625).abs() < 1e-15);
        assert!((mu.weights[1] - 0.375).abs() < 1e-15);
        assert!((mu.c_prime - 1.25).abs() < 1e-12);
        let sum: f64 = mu.weights.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn measure_sampling_respects_zero_mass() {
        let spec = sim3();
        let mut mu = falconer_weights(&spec, 1.0, 1).unwrap();
        mu.weights = vec![0.0, 1.0, 0.0];
        mu.cumulative = vec![0.0, 1.0, 1.0];
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(mu.sample_index(u), 1);
        }
    }

    #[test]
    fn cylinder_examples() {
        let spec = IfsSpec::new(vec![AffineMap::new(Matrix::diag(&[0.5, 0.5]).unwrap(), vec![0.0, 0.0])])
            .unwrap();
        let c = cylinder_constant(&spec, default_eps0(&spec));
        assert!((cylinder_diameter_bound(&spec, 0.9, &[]).unwrap() - 2.0 * c).abs() < 1e-12);
        let b3 = cylinder_diameter_bound(&spec, 0.9, &[0, 0, 0]).unwrap();
        let b4 = cylinder_diameter_bound(&spec, 0.9, &[0, 0, 0, 0]).unwrap();
        assert!((b4 / b3 - 5.0 / 9.0).abs() < 1e-12);
        assert!(cylinder_diameter_bound(&spec, 0.52, &[0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let spec = sim3();
        let field = PerturbationField::new(3, DistributionSpec::gaussian(0.05, 2).unwrap(), FieldModel::FullWordIid);
        let cfg = ProjectionConfig::new(&spec, 1e-9, 0.8).unwrap();
        let cloud = generate_cloud(&spec, &field, &cfg, 50, &WordSampler::Uniform, 5).unwrap();
        let mut buf = Vec::new();
        cloud.write_csv(&mut buf).unwrap();
        let back = PointCloud::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.points, cloud.points);
        let meta: CloudMeta = serde_json::from_str(&cloud.meta_json().unwrap()).unwrap();
        assert_eq!(Some(meta), cloud.meta);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(PointCloud::read_csv("".as_bytes()).is_err());
        assert!(PointCloud::read_csv("x1,x2,word\n".as_bytes()).is_err());
        assert!(PointCloud::read_csv("x1,word,trunc_bound\nabc,1,0\n".as_bytes()).is_err());
        let ok = PointCloud::read_csv("x1,word,trunc_bound\n".as_bytes()).unwrap();
        assert!(ok.is_empty());
    }
}
