//! Empirical estimators on point clouds and numerical checks of the
//! collision, energy and covering bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attractor::{cylinder_constant, default_eps0, project, PointCloud, ProjectionConfig, WordMeasure};
use crate::error::{Error, Result};
use crate::ifs::{common_prefix, pressure_sum_exact, IfsSpec, KahanSum, Word};
use crate::linalg::{phi_of, SingularSpectrum};
use crate::randomness::{stream_rng, uniform_f64, uniform_index, DistributionSpec, FieldModel, PerturbationField};
use rand_core::RngCore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScalePolicy {
    /// Minimum number of consecutive scales in the fitted window.
    pub min_window: usize,
    /// Finest scale is `diam / 2^max_halvings`.
    pub max_halvings: u32,
    /// Number of grid offsets averaged per scale (1 = corner-anchored only).
    pub offsets: usize,
}

impl Default for ScalePolicy {
    fn default() -> Self {
        Self { min_window: 5, max_halvings: 14, offsets: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Inclusive index range into `scales`.
    pub window: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCountResult {
    pub scales: Vec<f64>,
    pub counts: Vec<f64>,
    pub starvation_scale: f64,
    pub fit: LinearFit,
    pub estimate: f64,
}

/// `diam / points^{1/d}`, below which boxes hold about one point each.
pub fn starvation_scale(cloud: &PointCloud) -> f64 {
    cloud.diameter() / (cloud.len() as f64).powf(1.0 / cloud.dim as f64)
}

/// Number of grid cells of side `eps` hit by the cloud, for a grid anchored at
/// `origin`.
fn occupied(cloud: &PointCloud, origin: &[f64], eps: f64) -> Result<u64> {
    let d = cloud.dim;
    let bits = 128 / d as u32;
    if bits < 8 {
        return Err(Error::Input(format!("grid counting supports d <= 16, got {d}")));
    }
    let limit = (1u128 << bits) - 1;
    let mut keys: Vec<u128> = cloud
        .points
        .par_iter()
        .map(|p| {
            let mut key = 0u128;
            for k in 0..d {
                let cell = ((p.coords[k] - origin[k]) / eps).floor().max(0.0) as u128;
                key = (key << bits) | cell.min(limit);
            }
            key
        })
        .collect();
    keys.par_sort_unstable();
    keys.dedup();
    Ok(keys.len() as u64)
}

fn scale_grid(cloud: &PointCloud, halvings: u32) -> (f64, Vec<f64>) {
    let diam = cloud.diameter();
    let reference = if diam > 0.0 { diam } else { 1.0 };
    (reference, (1..=halvings).map(|j| reference / 2f64.powi(j as i32)).collect())
}

fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    (slope, intercept, r2)
}

/// Box-counting dimension: occupied cells at `ε = diam/2^j`, down to the
/// starvation scale, and the best-`r²` contiguous log-log window.
pub fn box_count(cloud: &PointCloud, policy: &ScalePolicy) -> Result<BoxCountResult> {
    if cloud.is_empty() {
        return Err(Error::Input("box counting needs a non-empty cloud".into()));
    }
    let needed = policy.min_window.max(2);
    let (lo, _) = cloud.bounding_box().expect("non-empty");
    let starve = starvation_scale(cloud);
    let (_, grid) = scale_grid(cloud, policy.max_halvings);
    let scales: Vec<f64> = grid.into_iter().filter(|&e| e >= starve).collect();
    if scales.len() < needed {
        return Err(Error::InsufficientScales { usable: scales.len(), needed });
    }
    let offsets = policy.offsets.max(1);
    let mut counts = Vec::with_capacity(scales.len());
    for &eps in &scales {
        let mut total = 0.0;
        for o in 0..offsets {
            let shift = eps * o as f64 / offsets as f64;
            let origin: Vec<f64> = lo.iter().map(|v| v - shift).collect();
            total += occupied(cloud, &origin, eps)? as f64;
        }
        counts.push(total / offsets as f64);
    }
    let x: Vec<f64> = scales.iter().map(|e| (1.0 / e).ln()).collect();
    let y: Vec<f64> = counts.iter().map(|c| c.ln()).collect();
    let mut best: Option<LinearFit> = None;
    for start in 0..scales.len() {
        for end in (start + needed - 1)..scales.len() {
            let (slope, intercept, r2) = least_squares(&x[start..=end], &y[start..=end]);
            let better = match &best {
                None => true,
                Some(b) => r2 > b.r2 + 1e-12 || ((r2 - b.r2).abs() <= 1e-12 && end - start > b.window.1 - b.window.0),
            };
            if better {
                best = Some(LinearFit { slope, intercept, r2, window: (start, end) });
            }
        }
    }
    let fit = best.expect("at least one window");
    Ok(BoxCountResult { estimate: fit.slope, scales, counts, starvation_scale: starve, fit })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyRow {
    pub eps: f64,
    pub count: u64,
    pub volume: f64,
    pub starved: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyReport {
    pub rows: Vec<OccupancyRow>,
    pub starvation_scale: f64,
    pub bounding_box_volume: f64,
    /// `0.1 ×` the bounding-box volume.
    pub floor: f64,
    /// Scales inspected for a plateau: the three finest non-starved ones.
    pub plateau_scales: Vec<f64>,
    pub plateau_volume: Option<f64>,
    /// Volume stays above the floor at every plateau scale.
    pub positive_measure: bool,
}

/// Occupied grid volume `count · ε^d` per scale. `eps_list = None` uses the
/// dyadic scales `diam/2^j`, `j = 1..=14`.
pub fn occupancy(cloud: &PointCloud, eps_list: Option<&[f64]>) -> Result<OccupancyReport> {
    if cloud.is_empty() {
        return Err(Error::Input("occupancy needs a non-empty cloud".into()));
    }
    let (lo, hi) = cloud.bounding_box().expect("non-empty");
    let starve = starvation_scale(cloud);
    let eps: Vec<f64> = match eps_list {
        Some(list) => {
            if let Some(e) = list.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
                return Err(Error::Input(format!("scales must be positive, got {e}")));
            }
            let mut v = list.to_vec();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        }
        None => scale_grid(cloud, 14).1,
    };
    let d = cloud.dim as i32;
    let rows = eps
        .iter()
        .map(|&e| {
            let count = occupied(cloud, &lo, e)?;
            Ok(OccupancyRow { eps: e, count, volume: count as f64 * e.powi(d), starved: e < starve })
        })
        .collect::<Result<Vec<_>>>()?;
    let bbox: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
    let floor = 0.1 * bbox;
    let fresh: Vec<&OccupancyRow> = rows.iter().filter(|r| !r.starved).collect();
    let plateau: Vec<&OccupancyRow> = fresh.iter().rev().take(3).rev().copied().collect();
    let plateau_volume = (plateau.len() == 3).then(|| plateau.iter().map(|r| r.volume).fold(f64::INFINITY, f64::min));
    Ok(OccupancyReport {
        starvation_scale: starve,
        bounding_box_volume: bbox,
        floor,
        plateau_scales: plateau.iter().map(|r| r.eps).collect(),
        positive_measure: plateau_volume.is_some_and(|v| bbox > 0.0 && v > floor),
        plateau_volume,
        rows,
    })
}

/// `Z(ρ) = Π_k min(ρ, α_k)/α_k`.
pub fn transversality_z(spectrum: &SingularSpectrum, rho: f64) -> f64 {
    spectrum.values().iter().map(|&a| rho.min(a) / a).product()
}

/// `1/((k − t)(t + 1 − k))` for `k − 1 < t < k`.
pub fn energy_constant_factor(t: f64) -> Result<f64> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("energy exponent must be positive, got {t}")));
    }
    if t.fract() == 0.0 {
        return Err(Error::IntegralExponent(t));
    }
    let k = t.ceil();
    Ok(1.0 / ((k - t) * (t + 1.0 - k)))
}

/// How the fields behind collision and energy samples are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldFamily {
    pub dist: DistributionSpec,
    pub model: FieldModel,
}

impl FieldFamily {
    pub fn member(&self, seed: u64) -> PerturbationField {
        PerturbationField::new(seed, self.dist, self.model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrefixLevelStat {
    pub level: usize,
    pub pairs: usize,
    /// Sum of `|x − y|^{−t}` over these pairs divided by the total pair count.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyEstimate {
    pub t: f64,
    pub pairs: usize,
    pub mean_inverse_power: f64,
    pub stderr: f64,
    pub zero_distance_pairs: usize,
    /// `c = 2^d K t / ((k − t)(t + 1 − k))`.
    pub constant: f64,
    /// `c Σ_ω μ([ω])² / φ^t(T_ω)` over all finite words; `∞` if the tail diverges.
    pub bound: f64,
    /// Ratio of the geometric tail used beyond the measure's level.
    pub tail_ratio: f64,
    pub by_prefix_level: Vec<PrefixLevelStat>,
}

/// `Σ_ω μ([ω])² / φ^t(T_ω)` for `μ` = `measure` at its level and uniform
/// continuation below. Beyond the measure's level the terms are bounded with
/// `φ^t(T_{νu}) ≥ φ^t(T_ν) Π α_d(T_{u_i})^t`, a geometric series of ratio
/// `q = m^{−2} Σ_i α_d(T_i)^{−t}`. Exact for similarities.
pub fn energy_aggregate(spec: &IfsSpec, measure: &WordMeasure, t: f64) -> Result<(f64, f64)> {
    let m = spec.num_maps();
    if measure.num_maps != m {
        return Err(Error::Input("word measure does not match the IFS".into()));
    }
    let q = spec
        .maps()
        .iter()
        .enumerate()
        .map(|(i, _)| spec.spectrum(i).smallest().powf(-t))
        .sum::<f64>()
        / (m * m) as f64;
    // Masses of all cylinders of length ≤ n, built upward from the leaves.
    let mut level_mass = measure.weights.clone();
    let mut sum = KahanSum::default();
    let mut leaf_term = KahanSum::default();
    for level in (0..=measure.n).rev() {
        for (idx, &mass) in level_mass.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let word = nth_word(idx, m, level);
            let phi = phi_of(spec.word_spectrum(&word)?.values(), t);
            let term = mass * mass / phi;
            sum.add(term);
            if level == measure.n {
                leaf_term.add(term);
            }
        }
        if level > 0 {
            level_mass = level_mass.chunks(m).map(|c| c.iter().sum()).collect();
        }
    }
    let tail = if q < 1.0 { leaf_term.value() * q / (1.0 - q) } else { f64::INFINITY };
    Ok((sum.value() + tail, q))
}

fn nth_word(mut index: usize, m: usize, len: usize) -> Vec<u32> {
    let mut w = vec![0u32; len];
    for slot in w.iter_mut().rev() {
        *slot = (index % m) as u32;
        index /= m;
    }
    w
}

/// Monte Carlo `E|Π^y(i) − Π^y(j)|^{−t}` over pairs `(i, j)` from
/// `measure × measure` (uniform continuations) and one fresh field per pair,
/// alongside the analytic aggregate bound.
pub fn energy_estimate(
    spec: &IfsSpec,
    family: &FieldFamily,
    measure: &WordMeasure,
    t: f64,
    pairs: usize,
    seed: u64,
    cfg: &ProjectionConfig,
) -> Result<EnergyEstimate> {
    let factor = energy_constant_factor(t)?;
    let d = spec.dim();
    if t >= d as f64 {
        return Err(Error::Domain(format!("energy exponent must lie in (0, {d}), got {t}")));
    }
    if !family.dist.tail_admissible() {
        return Err(Error::Inadmissible(family.dist.name().into(), "energy bound needs super-polynomial tails".into()));
    }
    if pairs == 0 {
        return Err(Error::Input("energy estimate needs at least one pair".into()));
    }
    cfg.validate(spec)?;
    let m = spec.num_maps();
    let samples = (0..pairs)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, p as u64);
            let field = family.member(rng.next_u64());
            let wi = measure.word(measure.sample_index(uniform_f64(&mut rng)));
            let wj = measure.word(measure.sample_index(uniform_f64(&mut rng)));
            let mut ri = stream_rng(seed ^ 0x5bd1_e995, 2 * p as u64);
            let mut rj = stream_rng(seed ^ 0x5bd1_e995, 2 * p as u64 + 1);
            let a = project(spec, &field, &mut |r| if r < wi.len() { wi[r] } else { uniform_index(&mut ri, m) as u32 }, cfg)?;
            let b = project(spec, &field, &mut |r| if r < wj.len() { wj[r] } else { uniform_index(&mut rj, m) as u32 }, cfg)?;
            let dist = a.point.iter().zip(&b.point).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let level = common_prefix(&a.word, &b.word).len();
            Ok((dist, level))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sum = KahanSum::default();
    let mut sq = KahanSum::default();
    let mut zero = 0;
    let mut levels: Vec<(usize, KahanSum)> = Vec::new();
    for &(dist, level) in &samples {
        if dist == 0.0 {
            zero += 1;
            continue;
        }
        let v = dist.powf(-t);
        sum.add(v);
        sq.add(v * v);
        if levels.len() <= level {
            levels.resize(level + 1, (0, KahanSum::default()));
        }
        levels[level].0 += 1;
        levels[level].1.add(v);
    }
    let used = (pairs - zero) as f64;
    let mean = if used > 0.0 { sum.value() / used } else { 0.0 };
    let var = if used > 1.0 { ((sq.value() - used * mean * mean) / (used - 1.0)).max(0.0) } else { 0.0 };
    let constant = 2f64.powi(d as i32) * family.dist.projection_bound() * t * factor;
    let (aggregate, q) = energy_aggregate(spec, measure, t)?;
    Ok(EnergyEstimate {
        t,
        pairs,
        mean_inverse_power: mean,
        stderr: if used > 0.0 { (var / used).sqrt() } else { 0.0 },
        zero_distance_pairs: zero,
        constant,
        bound: constant * aggregate,
        tail_ratio: q,
        by_prefix_level: levels
            .into_iter()
            .enumerate()
            .filter(|(_, (n, _))| *n > 0)
            .map(|(level, (n, s))| PrefixLevelStat { level, pairs: n, contribution: s.value() / pairs as f64 })
            .collect(),
    })
}

/// Whether the continuations after `i` and `j` stay fixed across field seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Continuations {
    /// One pair of continuations drawn from `seed` and reused for every field.
    Frozen { seed: u64 },
    /// Fresh continuations for every field seed.
    #[default]
    PerSeed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransversalityCell {
    pub rho: f64,
    /// Sample mean of `Z` over the observed common prefixes.
    pub z: f64,
    /// `C · z`.
    pub bound: f64,
    pub frequency: f64,
    /// Standard error of `frequency − bound`.
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransversalityReport {
    pub i: String,
    pub j: String,
    /// `C = 2^d K`.
    pub constant: f64,
    pub samples: usize,
    /// Shortest and longest common prefix of the evaluated infinite words.
    pub common_prefix_len: (usize, usize),
    pub cells: Vec<TransversalityCell>,
    pub pass: bool,
}

/// Empirical `P{|Π^y(i·u) − Π^y(j·u′)| < ρ}` over the field seeds, against
/// `C · Z_{i·u ∧ j·u′}(ρ)` averaged over the same samples. A cell passes when
/// the mean of `1{dist < ρ} − C·Z` is at most three standard errors above 0.
#[allow(clippy::too_many_arguments)]
pub fn transversality_check(
    spec: &IfsSpec,
    dist: &DistributionSpec,
    model: FieldModel,
    i: &Word,
    j: &Word,
    rho_list: &[f64],
    seeds: &[u64],
    continuations: Continuations,
    cfg: &ProjectionConfig,
) -> Result<TransversalityReport> {
    if i == j {
        return Err(Error::DegeneratePair(format!("i and j are both {i}")));
    }
    spec.check_word(i)?;
    spec.check_word(j)?;
    if !dist.tail_admissible() {
        return Err(Error::Inadmissible(dist.name().into(), "transversality needs super-polynomial tails".into()));
    }
    let k = dist.projection_bound();
    if !k.is_finite() {
        return Err(Error::Inadmissible(dist.name().into(), "projection density constant K is infinite".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Input("transversality check needs at least one seed".into()));
    }
    if let Some(r) = rho_list.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::Input(format!("rho values must be positive, got {r}")));
    }
    cfg.validate(spec)?;
    let m = spec.num_maps();
    let d = spec.dim();
    let constant = 2f64.powi(d as i32) * k;
    let family = FieldFamily { dist: *dist, model };
    let sample = |s: usize, seed: u64| -> Result<(f64, Word)> {
        let cont_seed = match continuations {
            Continuations::Frozen { seed } => (seed, 0),
            Continuations::PerSeed => (seeds[s], 1 + s as u64),
        };
        let mut ru = stream_rng(cont_seed.0, 2 * cont_seed.1);
        let mut rv = stream_rng(cont_seed.0, 2 * cont_seed.1 + 1);
        let field = family.member(seed);
        let a = project(spec, &field, &mut |r| if r < i.len() { i[r] } else { uniform_index(&mut ru, m) as u32 }, cfg)?;
        let b = project(spec, &field, &mut |r| if r < j.len() { j[r] } else { uniform_index(&mut rv, m) as u32 }, cfg)?;
        let dist = a.point.iter().zip(&b.point).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let prefix = common_prefix(&a.word, &b.word);
        if prefix.len() == a.word.len().min(b.word.len()) {
            return Err(Error::DegeneratePair(format!(
                "the continuations of {i} and {j} agree to the truncation depth"
            )));
        }
        Ok((dist, prefix))
    };
    let results = seeds
        .par_iter()
        .enumerate()
        .map(|(s, &seed)| sample(s, seed))
        .collect::<Result<Vec<_>>>()?;
    // The prefix differs between samples only when one word is a prefix of
    // the other; each sample is then held to the bound for its own prefix.
    let mut spectra: Vec<(Word, SingularSpectrum)> = Vec::new();
    let mut which = Vec::with_capacity(results.len());
    for (_, p) in &results {
        let k = match spectra.iter().position(|(w, _)| w == p) {
            Some(k) => k,
            None => {
                spectra.push((p.clone(), spec.word_spectrum(p)?));
                spectra.len() - 1
            }
        };
        which.push(k);
    }
    let n = seeds.len() as f64;
    let cells: Vec<TransversalityCell> = rho_list
        .iter()
        .map(|&rho| {
            let zs: Vec<f64> = spectra.iter().map(|(_, sp)| transversality_z(sp, rho)).collect();
            let (mut hits, mut z_sum, mut d_sum, mut d_sq) = (0.0, 0.0, 0.0, 0.0);
            for ((dist, _), &k) in results.iter().zip(&which) {
                let hit = if *dist < rho { 1.0 } else { 0.0 };
                let diff = hit - constant * zs[k];
                hits += hit;
                z_sum += zs[k];
                d_sum += diff;
                d_sq += diff * diff;
            }
            let mean_diff = d_sum / n;
            let stderr = ((d_sq / n - mean_diff * mean_diff).max(0.0) / n).sqrt();
            let z = z_sum / n;
            let bound = constant * z;
            let frequency = hits / n;
            TransversalityCell { rho, z, bound, frequency, stderr, pass: mean_diff <= 3.0 * stderr }
        })
        .collect();
    let lens = results.iter().map(|(_, p)| p.len());
    let common_prefix_len = (lens.clone().min().unwrap_or(0), lens.max().unwrap_or(0));
    Ok(TransversalityReport {
        i: i.to_string(),
        j: j.to_string(),
        constant,
        samples: seeds.len(),
        common_prefix_len,
        pass: cells.iter().all(|c| c.pass),
        cells,
    })
}

/// `(4C)^{s_k} θ_k^{−nd} S_n(s_k)`, the cover-sum bound on the
/// `δ_n`-approximate `s_k`-dimensional Hausdorff pre-measure.
pub fn covering_sum(spec: &IfsSpec, theta_k: f64, s_k: f64, n: usize) -> Result<f64> {
    let eps0 = default_eps0(spec);
    if !(theta_k > spec.norm_t() + eps0 && theta_k <= 1.0) {
        return Err(Error::Domain(format!(
            "theta must lie in (‖T‖ + ε₀, 1] = ({}, 1], got {theta_k}",
            spec.norm_t() + eps0
        )));
    }
    let c = cylinder_constant(spec, eps0);
    let sn = pressure_sum_exact(spec, s_k, n)?.value;
    let d = spec.dim() as f64;
    Ok((4.0 * c).powf(s_k) * (-(n as f64) * d * theta_k.ln()).exp() * sn)
}
