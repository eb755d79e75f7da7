//! Affine IFS specifications, words, and the level-`n` pressure sums
//! `S_n(s) = Σ_{|w| = n} φ^s(T_w)`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, PhiWeights, SingularSpectrum};
use crate::randomness::{stream_rng, uniform_index};

/// Largest number of level-`n` words the exact enumerator will visit.
pub const ENUMERATION_CAP: u64 = 1 << 24;

/// Hard limit on the level for single-map systems, where `m^n` never grows.
pub const LEVEL_LIMIT: usize = 64;

/// One affine map `x ↦ T x + a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub matrix: Matrix,
    pub translation: Vec<f64>,
}

impl AffineMap {
    pub fn new(matrix: Matrix, translation: Vec<f64>) -> Self {
        Self { matrix, translation }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.matrix.apply(x);
        y.iter_mut().zip(&self.translation).for_each(|(v, a)| *v += a);
        y
    }
}

/// A validated iterated function system of contracting invertible affine maps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IfsSpec {
    dim: usize,
    maps: Vec<AffineMap>,
    norm_t: f64,
    norm_a: f64,
    #[serde(skip)]
    spectra: Vec<SingularSpectrum>,
    #[serde(skip)]
    abs_dets: Vec<f64>,
    #[serde(skip)]
    log_dets: Vec<f64>,
}

/// Checks contraction and invertibility and computes `‖T‖` and `‖a‖`.
pub fn validate(maps: Vec<AffineMap>) -> Result<IfsSpec> {
    IfsSpec::new(maps)
}

impl IfsSpec {
    pub fn new(maps: Vec<AffineMap>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Input("an IFS needs at least one map".into()))?;
        let dim = first.matrix.dim();
        let mut spectra = Vec::with_capacity(maps.len());
        let mut abs_dets = Vec::with_capacity(maps.len());
        let mut norm_t: f64 = 0.0;
        let mut norm_a: f64 = 0.0;
        for (index, map) in maps.iter().enumerate() {
            if map.matrix.dim() != dim || map.translation.len() != dim {
                return Err(Error::Input(format!(
                    "map {index}: expected dimension {dim} for matrix and translation"
                )));
            }
            if map.translation.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("map {index}: translation is not finite")));
            }
            let sp = linalg::singular_values(&map.matrix)?;
            if sp.largest() >= 1.0 {
                return Err(Error::NotContracting { index, norm: sp.largest() });
            }
            if sp.smallest() <= 0.0 {
                return Err(Error::SingularMap { index });
            }
            norm_t = norm_t.max(sp.largest());
            norm_a = norm_a.max(map.translation.iter().map(|v| v * v).sum::<f64>().sqrt());
            abs_dets.push(map.matrix.determinant().abs());
            spectra.push(sp);
        }
        let log_dets = abs_dets.iter().map(|d| d.ln()).collect();
        Ok(Self { dim, maps, norm_t, norm_a, spectra, abs_dets, log_dets })
    }

    /// `m` maps sharing the matrix `r·I_d`, translated by `translations`.
    pub fn similarity(dim: usize, r: f64, translations: Vec<Vec<f64>>) -> Result<Self> {
        let maps = translations
            .into_iter()
            .map(|a| Ok(AffineMap::new(Matrix::scaled_identity(dim, r)?, a)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(maps)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_maps(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[AffineMap] {
        &self.maps
    }

    pub fn matrices(&self) -> Vec<Matrix> {
        self.maps.iter().map(|m| m.matrix.clone()).collect()
    }

    /// `‖T‖ = max_i α_1(T_i)`.
    pub fn norm_t(&self) -> f64 {
        self.norm_t
    }

    /// `‖a‖ = max_i |a_i|`.
    pub fn norm_a(&self) -> f64 {
        self.norm_a
    }

    pub fn spectrum(&self, i: usize) -> &SingularSpectrum {
        &self.spectra[i]
    }

    /// Smallest singular value over all maps.
    pub fn min_singular_value(&self) -> f64 {
        self.spectra.iter().map(SingularSpectrum::smallest).fold(f64::INFINITY, f64::min)
    }

    pub fn word_product(&self, word: &[u32]) -> Result<Matrix> {
        self.check_word(word)?;
        let mut acc = Matrix::identity(self.dim);
        for &i in word {
            acc = acc.mul(&self.maps[i as usize].matrix);
        }
        Ok(acc)
    }

    /// Singular spectrum of `T_w`, using the product of determinants for `α_d`.
    pub fn word_spectrum(&self, word: &[u32]) -> Result<SingularSpectrum> {
        let p = self.word_product(word)?;
        let det: f64 = word.iter().map(|&i| self.abs_dets[i as usize]).product();
        let mut out = vec![0.0; self.dim];
        linalg::spectrum_into(p.as_slice(), self.dim, Some(det), &mut out);
        SingularSpectrum::new(out)
    }

    pub fn check_word(&self, word: &[u32]) -> Result<()> {
        match word.iter().find(|&&i| i as usize >= self.maps.len()) {
            Some(bad) => Err(Error::InvalidWord(format!(
                "symbol {} out of range for {} maps",
                bad + 1,
                self.maps.len()
            ))),
            None => Ok(()),
        }
    }

    /// Number of words of length `n`, as a float so it cannot overflow.
    pub fn word_count(&self, n: usize) -> f64 {
        (self.maps.len() as f64).powi(n as i32)
    }

    /// Largest level whose full enumeration fits under [`ENUMERATION_CAP`].
    pub fn max_exact_level(&self) -> usize {
        let m = self.maps.len() as u64;
        if m == 1 {
            return LEVEL_LIMIT;
        }
        let mut n = 0;
        let mut count: u64 = 1;
        while let Some(next) = count.checked_mul(m) {
            if next > ENUMERATION_CAP {
                break;
            }
            count = next;
            n += 1;
        }
        n
    }

    pub fn exact_feasible(&self, n: usize) -> bool {
        n <= self.max_exact_level()
    }

    pub(crate) fn log_det(&self, i: usize) -> f64 {
        self.log_dets[i]
    }
}

/// A finite word over the 0-based alphabet `{0, …, m−1}`.
///
/// Displayed and parsed 1-based and dash-separated (`"1-3-2"`), with `"-"`
/// standing for the empty word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Word(pub Vec<u32>);

impl Word {
    pub fn new(symbols: Vec<u32>) -> Self {
        Self(symbols)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn concat(&self, tail: &[u32]) -> Word {
        let mut v = self.0.clone();
        v.extend_from_slice(tail);
        Word(v)
    }
}

impl From<Vec<u32>> for Word {
    fn from(v: Vec<u32>) -> Self {
        Word(v)
    }
}

impl std::ops::Deref for Word {
    type Target = [u32];
    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("-");
        }
        for (k, s) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str("-")?;
            }
            write!(f, "{}", s + 1)?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim();
        if text == "-" || text.is_empty() {
            return Ok(Word::empty());
        }
        text.split('-')
            .map(|tok| match tok.parse::<u32>() {
                Ok(v) if v >= 1 => Ok(v - 1),
                _ => Err(Error::InvalidWord(format!("bad symbol {tok:?} in {text:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Word)
    }
}

/// Longest common prefix `i ∧ j`.
pub fn common_prefix(i: &[u32], j: &[u32]) -> Word {
    let len = i.iter().zip(j).take_while(|(a, b)| a == b).count();
    Word(i[..len].to_vec())
}

/// One evaluation of `S_n(s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureSum {
    pub n: usize,
    pub s: f64,
    pub value: f64,
    pub root: f64,
    pub exact: bool,
    pub stderr: f64,
}

impl PressureSum {
    pub(crate) fn new(n: usize, s: f64, value: f64, exact: bool, stderr: f64) -> Self {
        let root = if n == 0 { value } else { value.powf(1.0 / n as f64) };
        Self { n, s, value, root, exact, stderr }
    }

    /// Standard error of `root` by the delta method; 0 for exact sums.
    pub fn root_stderr(&self) -> f64 {
        if self.exact || self.value <= 0.0 || self.n == 0 {
            0.0
        } else {
            self.root * self.stderr / (self.n as f64 * self.value)
        }
    }
}

/// Compensated (Neumaier) running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn merge(&mut self, other: &KahanSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Exact sums at levels `n` and `n − 1` for several exponents from one enumeration.
#[derive(Debug, Clone)]
pub(crate) struct LevelSums {
    pub(crate) at_n: Vec<f64>,
    pub(crate) at_prev: Vec<f64>,
}

/// Depth at which the word tree is cut into independent subtrees. Fixed, so
/// the reduction order (and therefore every bit of the result) does not
/// depend on the number of worker threads.
const SPLIT_TARGET: u64 = 256;

fn split_depth(m: usize, n: usize) -> usize {
    if m <= 1 || n <= 1 {
        return 0;
    }
    let mut k = 0;
    let mut count = 1u64;
    while count < SPLIT_TARGET && k < n - 1 {
        count *= m as u64;
        k += 1;
    }
    k
}

fn nth_word(mut index: u64, m: usize, len: usize) -> Vec<u32> {
    let mut w = vec![0u32; len];
    for slot in w.iter_mut().rev() {
        *slot = (index % m as u64) as u32;
        index /= m as u64;
    }
    w
}

/// Depth-first traversal of the subtree below `prefix`, calling `visit` for
/// every node whose depth lies in `min_depth..=max_depth` with the word, the
/// product `T_word` and `ln |det T_word|`. One matrix multiply per node:
/// partial products are kept per depth.
pub(crate) fn walk_subtree<F>(
    spec: &IfsSpec,
    prefix: &[u32],
    min_depth: usize,
    max_depth: usize,
    mut visit: F,
) where
    F: FnMut(&[u32], &[f64], f64),
{
    let d = spec.dim;
    let dd = d * d;
    let m = spec.maps.len();
    let k = prefix.len();
    debug_assert!(k <= max_depth);
    let levels = max_depth - k + 1;
    let mut prods = vec![0.0; dd * levels];
    let mut dets = vec![0.0; levels];
    let mut word: Vec<u32> = prefix.to_vec();

    let root = spec.word_product(prefix).expect("prefix symbols are in range");
    prods[..dd].copy_from_slice(root.as_slice());
    dets[0] = prefix.iter().map(|&i| spec.log_dets[i as usize]).sum();
    if k >= min_depth {
        visit(&word, &prods[..dd], dets[0]);
    }
    if k == max_depth {
        return;
    }
    // counters[l] is the next symbol to try below the node at relative depth l.
    let mut counters = vec![0u32; levels];
    let mut level = 0usize;
    loop {
        if counters[level] as usize == m {
            if level == 0 {
                break;
            }
            counters[level] = 0;
            level -= 1;
            word.pop();
            continue;
        }
        let sym = counters[level];
        counters[level] += 1;
        let (head, tail) = prods.split_at_mut((level + 1) * dd);
        let parent = &head[level * dd..];
        let child = &mut tail[..dd];
        linalg::mul_into(parent, spec.maps[sym as usize].matrix.as_slice(), child, d);
        dets[level + 1] = dets[level] + spec.log_dets[sym as usize];
        word.push(sym);
        let depth = k + level + 1;
        if depth >= min_depth {
            visit(&word, child, dets[level + 1]);
        }
        if depth == max_depth {
            word.pop();
        } else {
            level += 1;
        }
    }
}

/// Partitions the level-`n` tree into fixed subtrees and runs `work` on each,
/// in parallel, returning the per-subtree results in lexicographic order.
pub(crate) fn map_subtrees<R, F>(spec: &IfsSpec, n: usize, work: F) -> Vec<R>
where
    R: Send,
    F: Fn(&[u32]) -> R + Sync,
{
    let m = spec.maps.len();
    let k = split_depth(m, n);
    let count = (m as u64).pow(k as u32);
    (0..count)
        .into_par_iter()
        .map(|idx| work(&nth_word(idx, m, k)))
        .collect()
}

fn check_enumeration(spec: &IfsSpec, n: usize) -> Result<()> {
    if !spec.exact_feasible(n) {
        return Err(Error::EnumerationTooLarge { words: spec.word_count(n), cap: ENUMERATION_CAP });
    }
    Ok(())
}

pub(crate) fn level_sums_exact(spec: &IfsSpec, s_values: &[f64], n: usize) -> Result<LevelSums> {
    if n == 0 {
        return Err(Error::Input("pressure level n must be at least 1".into()));
    }
    if let Some(s) = s_values.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Domain(format!("exponent s must be >= 0, got {s}")));
    }
    check_enumeration(spec, n)?;
    let d = spec.dim;
    let weights: Vec<PhiWeights> = s_values.iter().map(|&s| PhiWeights::new(d, s)).collect();
    let ns = s_values.len();
    let parts = map_subtrees(spec, n, |prefix| {
        let mut at_n = vec![KahanSum::default(); ns];
        let mut at_prev = vec![KahanSum::default(); ns];
        let mut logs = vec![0.0; d];
        walk_subtree(spec, prefix, n - 1, n, |word, prod, log_det| {
            linalg::log_spectrum_into(prod, d, log_det, &mut logs);
            let acc = if word.len() == n { &mut at_n } else { &mut at_prev };
            for (sum, w) in acc.iter_mut().zip(&weights) {
                sum.add(w.phi_from_logs(&logs));
            }
        });
        (at_n, at_prev)
    });
    let mut at_n = vec![KahanSum::default(); ns];
    let mut at_prev = vec![KahanSum::default(); ns];
    for (pn, pp) in &parts {
        for j in 0..ns {
            at_n[j].merge(&pn[j]);
            at_prev[j].merge(&pp[j]);
        }
    }
    Ok(LevelSums {
        at_n: at_n.iter().map(KahanSum::value).collect(),
        at_prev: at_prev.iter().map(KahanSum::value).collect(),
    })
}

/// `S_n(s)` by full enumeration of the `m^n` words.
pub fn pressure_sum_exact(spec: &IfsSpec, s: f64, n: usize) -> Result<PressureSum> {
    let sums = level_sums_exact(spec, &[s], n)?;
    Ok(PressureSum::new(n, s, sums.at_n[0], true, 0.0))
}

/// Samples are processed in blocks of this size, each with its own random
/// stream, so results are independent of scheduling.
const MC_BLOCK: usize = 1024;

/// Monte Carlo estimates of `S_n(s)` for several exponents, sharing samples.
pub(crate) fn level_sums_mc(
    spec: &IfsSpec,
    s_values: &[f64],
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<PressureSum>> {
    if samples == 0 {
        return Err(Error::Input("Monte Carlo pressure needs at least one sample".into()));
    }
    if n == 0 {
        return Err(Error::Input("pressure level n must be at least 1".into()));
    }
    if let Some(s) = s_values.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Domain(format!("exponent s must be >= 0, got {s}")));
    }
    let d = spec.dim;
    let m = spec.maps.len();
    let ns = s_values.len();
    let weights: Vec<PhiWeights> = s_values.iter().map(|&s| PhiWeights::new(d, s)).collect();
    let blocks = samples.div_ceil(MC_BLOCK);
    let parts: Vec<(Vec<KahanSum>, Vec<KahanSum>)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, b as u64);
            let mut sum = vec![KahanSum::default(); ns];
            let mut sq = vec![KahanSum::default(); ns];
            let mut prod = vec![0.0; d * d];
            let mut tmp = vec![0.0; d * d];
            let mut logs = vec![0.0; d];
            let count = MC_BLOCK.min(samples - b * MC_BLOCK);
            for _ in 0..count {
                prod.copy_from_slice(Matrix::identity(d).as_slice());
                let mut log_det = 0.0;
                for _ in 0..n {
                    let sym = uniform_index(&mut rng, m);
                    linalg::mul_into(&prod, spec.maps[sym].matrix.as_slice(), &mut tmp, d);
                    std::mem::swap(&mut prod, &mut tmp);
                    log_det += spec.log_dets[sym];
                }
                linalg::log_spectrum_into(&prod, d, log_det, &mut logs);
                for j in 0..ns {
                    let v = weights[j].phi_from_logs(&logs);
                    sum[j].add(v);
                    sq[j].add(v * v);
                }
            }
            (sum, sq)
        })
        .collect();
    let mut sum = vec![KahanSum::default(); ns];
    let mut sq = vec![KahanSum::default(); ns];
    for (ps, pq) in &parts {
        for j in 0..ns {
            sum[j].merge(&ps[j]);
            sq[j].merge(&pq[j]);
        }
    }
    let total = spec.word_count(n);
    let k = samples as f64;
    Ok((0..ns)
        .map(|j| {
            let mean = sum[j].value() / k;
            let var = if samples > 1 {
                ((sq[j].value() - k * mean * mean) / (k - 1.0)).max(0.0)
            } else {
                0.0
            };
            PressureSum::new(n, s_values[j], total * mean, false, total * (var / k).sqrt())
        })
        .collect())
}

/// Unbiased Monte Carlo estimate `m^n · E[φ^s(T_W)]` over uniform words `W` of length `n`.
pub fn pressure_sum_mc(
    spec: &IfsSpec,
    s: f64,
    n: usize,
    samples: usize,
    seed: u64,
) -> Result<PressureSum> {
    Ok(level_sums_mc(spec, &[s], n, samples, seed)?[0])
}
