//! Affinity dimension and pressure inversion.
//!
//! The solver brackets the exponent `s` at which the level-`n` pressure root
//! `S_n(s)^{1/n}` crosses a target. By submultiplicativity the limit is at most
//! any exact `root_n`, so an exact `root_n(s) < 1` certifies that `s` bounds the
//! dimension from above. A finite-level `root_n(s) > 1` certifies nothing on its
//! own and the lower end of the bracket is flagged as heuristic.
//!
//! For `s ≥ d` the singular value function is `|det|^{s/d}`, which is
//! multiplicative, so `S_n(s)^{1/n} = Σ_i |det T_i|^{s/d}` at every level. Those
//! exponents are evaluated in closed form and are exact limits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ifs::{level_sums_exact, level_sums_mc, IfsSpec, PressureSum};

/// Default bracket width for [`affinity_dimension`].
pub const DEFAULT_TOL: f64 = 1e-3;

/// Roots within this distance of 1 are assigned to the upper side.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// The coarse warm-start stage enumerates at most this many words.
const COARSE_WORDS: u64 = 1 << 12;

/// Interior points per multisection pass. Each exact pass costs one
/// enumeration however many exponents it carries.
const PROBES_PER_PASS: usize = 15;

const MAX_EXTENSIONS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

/// One pressure evaluation at a given level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub root: f64,
    pub exact: bool,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub s: f64,
    pub evaluations: Vec<Evaluation>,
    /// Minimum exact root over the recorded levels, an upper bound for the limit.
    pub cert_upper: Option<f64>,
}

/// Every pressure evaluation made while solving, sorted by `s`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PressureCurve {
    n_levels: Vec<usize>,
    points: Vec<CurvePoint>,
}

impl PressureCurve {
    pub fn n_levels(&self) -> &[usize] {
        &self.n_levels
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn evaluations(&self, s: f64) -> Option<&[Evaluation]> {
        self.find(s).map(|i| self.points[i].evaluations.as_slice())
    }

    pub fn cert_upper(&self, s: f64) -> Option<f64> {
        self.find(s).and_then(|i| self.points[i].cert_upper)
    }

    fn find(&self, s: f64) -> Option<usize> {
        self.points.binary_search_by(|p| p.s.total_cmp(&s)).ok()
    }

    fn record(&mut self, s: f64, e: Evaluation) {
        if let Err(pos) = self.n_levels.binary_search(&e.n) {
            self.n_levels.insert(pos, e.n);
        }
        let idx = match self.points.binary_search_by(|p| p.s.total_cmp(&s)) {
            Ok(i) => i,
            Err(i) => {
                self.points.insert(i, CurvePoint { s, evaluations: Vec::new(), cert_upper: None });
                i
            }
        };
        let point = &mut self.points[idx];
        if point.evaluations.iter().any(|old| old.n == e.n && old.exact == e.exact) {
            return;
        }
        point.evaluations.push(e);
        point.evaluations.sort_by_key(|x| x.n);
        if e.exact {
            point.cert_upper = Some(point.cert_upper.map_or(e.root, |c| c.min(e.root)));
        }
    }
}

/// Roots at the two largest levels used, at the upper end of the bracket.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelGap {
    pub s: f64,
    pub n: usize,
    pub root_n: f64,
    pub root_prev: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionResult {
    pub value: f64,
    pub bracket: (f64, f64),
    pub n_used: usize,
    pub method: Method,
    /// The upper end was established by an exact pressure sum.
    pub upper_certified: bool,
    /// The lower end was established by an exact, level-independent root.
    /// Otherwise it is finite-level evidence only.
    pub lower_certified: bool,
    pub level_gap: Option<LevelGap>,
    pub diagnostics: PressureCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    /// Working level. Exact runs clamp it to the enumeration cap; `None`
    /// means the largest exact level.
    pub n_max: Option<usize>,
    pub monte_carlo: Option<MonteCarloOptions>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, n_max: None, monte_carlo: None }
    }
}

#[derive(Debug, Clone, Copy)]
struct Side {
    s: f64,
    root: f64,
    exact: bool,
    analytic: bool,
}

struct Evaluator<'a> {
    spec: &'a IfsSpec,
    mc: Option<MonteCarloOptions>,
    curve: PressureCurve,
}

impl<'a> Evaluator<'a> {
    fn new(spec: &'a IfsSpec, mc: Option<MonteCarloOptions>) -> Self {
        Self { spec, mc, curve: PressureCurve::default() }
    }

    fn analytic_root(&self, s: f64) -> f64 {
        let d = self.spec.dim() as f64;
        (0..self.spec.num_maps()).map(|i| (self.spec.log_det(i) * s / d).exp()).sum()
    }

    fn analytic(&mut self, s: f64, n: usize) -> Side {
        let root = if s == 0.0 { self.spec.num_maps() as f64 } else { self.analytic_root(s) };
        self.curve.record(s, Evaluation { n, root, exact: true, stderr: 0.0 });
        Side { s, root, exact: true, analytic: true }
    }

    /// Roots at level `n`, by enumeration (`exact`) or by the configured
    /// Monte Carlo estimator. Exponents `≥ d` are always closed-form.
    fn eval(&mut self, s_values: &[f64], n: usize, exact: bool) -> Result<Vec<(Side, f64)>> {
        let d = self.spec.dim() as f64;
        let mut out: Vec<Option<(Side, f64)>> = vec![None; s_values.len()];
        let mut idx = Vec::new();
        let mut enumerate = Vec::new();
        for (i, &s) in s_values.iter().enumerate() {
            if s >= d || s == 0.0 {
                out[i] = Some((self.analytic(s, n), 0.0));
            } else {
                idx.push(i);
                enumerate.push(s);
            }
        }
        if !enumerate.is_empty() {
            let sums: Vec<(PressureSum, Option<PressureSum>)> = match (exact, self.mc) {
                (false, Some(mc)) => level_sums_mc(self.spec, &enumerate, n, mc.samples, mc.seed)?
                    .into_iter()
                    .map(|p| (p, None))
                    .collect(),
                _ => {
                    let sums = level_sums_exact(self.spec, &enumerate, n)?;
                    enumerate
                        .iter()
                        .enumerate()
                        .map(|(j, &s)| {
                            let prev = (n > 1)
                                .then(|| PressureSum::new(n - 1, s, sums.at_prev[j], true, 0.0));
                            (PressureSum::new(n, s, sums.at_n[j], true, 0.0), prev)
                        })
                        .collect()
                }
            };
            for (k, (p, prev)) in sums.into_iter().enumerate() {
                let se = p.root_stderr();
                self.curve.record(p.s, Evaluation { n, root: p.root, exact: p.exact, stderr: se });
                if let Some(q) = prev {
                    self.curve.record(q.s, Evaluation { n: q.n, root: q.root, exact: true, stderr: 0.0 });
                }
                out[idx[k]] = Some((Side { s: p.s, root: p.root, exact: p.exact, analytic: false }, se));
            }
        }
        Ok(out.into_iter().map(|o| o.expect("every exponent evaluated")).collect())
    }

    /// Repeatedly evaluates interior points of `[lo, hi]` at level `n`, keeping
    /// `root(lo) > target ≥ root(hi)` (up to `tie`), until `done` holds or the
    /// bracket cannot be split further. `probes` seeds the first pass.
    #[allow(clippy::too_many_arguments)]
    fn multisection(
        &mut self,
        target: f64,
        tie: f64,
        n: usize,
        exact: bool,
        mut lo: Side,
        mut hi: Side,
        mut probes: Vec<f64>,
        done: &dyn Fn(&Side, &Side) -> bool,
    ) -> Result<(Side, Side)> {
        loop {
            if done(&lo, &hi) {
                return Ok((lo, hi));
            }
            if probes.is_empty() {
                let w = hi.s - lo.s;
                probes = (1..=PROBES_PER_PASS)
                    .map(|j| lo.s + w * j as f64 / (PROBES_PER_PASS + 1) as f64)
                    .collect();
            }
            probes.retain(|&s| s > lo.s && s < hi.s);
            probes.sort_by(f64::total_cmp);
            probes.dedup();
            if probes.is_empty() {
                return Ok((lo, hi));
            }
            let sums = self.eval(&probes, n, exact)?;
            let mut unclassified = Vec::new();
            for (side, se) in sums {
                if !side.exact && (side.root - target).abs() <= 2.0 * se {
                    unclassified.push((side, se));
                } else if side.root > target + tie {
                    if side.s > lo.s {
                        lo = side;
                    }
                } else if side.s < hi.s {
                    hi = side;
                }
            }
            if !done(&lo, &hi) {
                if let Some((p, se)) = unclassified.iter().find(|(p, _)| p.s > lo.s && p.s < hi.s) {
                    return Err(Error::Inconclusive { n, s: p.s, root: p.root, stderr: *se });
                }
            }
            probes.clear();
        }
    }
}

/// Level at which the coarse warm-start stage runs, if it is cheaper than `n`.
fn coarse_level(spec: &IfsSpec, n: usize) -> Option<usize> {
    let m = spec.num_maps() as f64;
    let by_words = ((COARSE_WORDS as f64).ln() / m.ln()).floor() as usize;
    let nc = by_words.min(n / 2).max(1);
    (nc < n).then_some(nc)
}

/// Geometric probe set `center ± w·4^k` used to re-bracket at a finer level.
fn probes_around(center: f64, w: f64) -> Vec<f64> {
    let mut v = vec![center];
    let mut step = w;
    for _ in 0..6 {
        v.push(center - step);
        v.push(center + step);
        step *= 4.0;
    }
    v
}

/// Zero of the linear interpolant of `ln root − ln target` across the bracket.
fn interpolate(lo: &Side, hi: &Side, target: f64) -> f64 {
    if hi.s <= lo.s {
        return hi.s;
    }
    let (a, b) = ((lo.root / target).ln(), (hi.root / target).ln());
    if !(a.is_finite() && b.is_finite()) || a <= b {
        return 0.5 * (lo.s + hi.s);
    }
    (lo.s + (hi.s - lo.s) * a / (a - b)).clamp(lo.s, hi.s)
}

fn working_level(spec: &IfsSpec, n_max: Option<usize>, mc: bool) -> Result<usize> {
    let n = match n_max {
        Some(0) => return Err(Error::Input("n_max must be at least 1".into())),
        Some(n) if mc => n,
        Some(n) => n.min(spec.max_exact_level()),
        None => spec.max_exact_level(),
    };
    Ok(n.max(1))
}

/// Affinity dimension by exact enumeration at the largest affordable level `≤ n_max`.
pub fn affinity_dimension(spec: &IfsSpec, tol: f64, n_max: usize) -> Result<DimensionResult> {
    affinity_dimension_with(spec, &SolverOptions { tol, n_max: Some(n_max), monte_carlo: None })
}

pub fn affinity_dimension_with(spec: &IfsSpec, opts: &SolverOptions) -> Result<DimensionResult> {
    let tol = opts.tol;
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    if let Some(mc) = opts.monte_carlo {
        if mc.samples == 0 {
            return Err(Error::Input("Monte Carlo solver needs at least one sample".into()));
        }
    }
    let exact = opts.monte_carlo.is_none();
    let method = if exact { Method::Exact } else { Method::MonteCarlo };
    let n = working_level(spec, opts.n_max, !exact)?;
    let mut ev = Evaluator::new(spec, opts.monte_carlo);

    let lo = ev.analytic(0.0, n);
    if lo.root <= 1.0 + TIE_TOLERANCE {
        return Ok(DimensionResult {
            value: 0.0,
            bracket: (0.0, 0.0),
            n_used: n,
            method,
            upper_certified: true,
            lower_certified: true,
            level_gap: None,
            diagnostics: ev.curve,
        });
    }
    let mut hi = ev.analytic(2.0 * spec.dim() as f64, n);
    let mut lo = lo;
    let mut extensions = 0;
    while hi.root > 1.0 + TIE_TOLERANCE {
        extensions += 1;
        if extensions > MAX_EXTENSIONS {
            return Err(Error::DegenerateSystem(format!(
                "pressure root stays above 1 up to s = {}",
                hi.s
            )));
        }
        lo = hi;
        hi = ev.analytic(hi.s * 2.0, n);
    }

    let mut probes = Vec::new();
    if let Some(nc) = coarse_level(spec, n) {
        let quarter = 0.25 * tol;
        let (clo, chi) = ev.multisection(1.0, TIE_TOLERANCE, nc, true, lo, hi, Vec::new(), &|a, b| {
            b.s - a.s <= quarter
        })?;
        probes = probes_around(interpolate(&clo, &chi, 1.0), 0.5 * tol);
    }
    let (lo, hi) = ev.multisection(1.0, TIE_TOLERANCE, n, exact, lo, hi, probes, &|a, b| {
        b.s - a.s <= tol
    })?;

    let level_gap = level_gap(&mut ev, &hi, n, exact)?;
    Ok(DimensionResult {
        value: interpolate(&lo, &hi, 1.0),
        bracket: (lo.s, hi.s),
        n_used: n,
        method,
        upper_certified: hi.exact,
        lower_certified: lo.analytic,
        level_gap,
        diagnostics: ev.curve,
    })
}

fn level_gap(ev: &mut Evaluator, hi: &Side, n: usize, exact: bool) -> Result<Option<LevelGap>> {
    if n < 2 {
        return Ok(None);
    }
    let prev = match ev.curve.evaluations(hi.s).and_then(|es| es.iter().find(|e| e.n == n - 1)) {
        Some(e) => e.root,
        None => ev.eval(&[hi.s], n - 1, exact)?[0].0.root,
    };
    let prev = if hi.analytic { hi.root } else { prev };
    Ok(Some(LevelGap { s: hi.s, n, root_n: hi.root, root_prev: prev, gap: (prev - hi.root).abs() }))
}

/// Solves `root_n(s) = target` for `s ∈ [0, 2d]` at the working level, to
/// `|root_n(s) − target| ≤ tol` (or to floating-point resolution in `s`).
pub fn pressure_inverse(spec: &IfsSpec, target: f64, tol: f64, n_max: usize) -> Result<f64> {
    if !(target > 0.0) || target > 1.0 {
        return Err(Error::Domain(format!("pressure target must lie in (0, 1], got {target}")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let n = working_level(spec, Some(n_max), false)?;
    let mut ev = Evaluator::new(spec, None);
    let lo = ev.analytic(0.0, n);
    let hi = ev.analytic(2.0 * spec.dim() as f64, n);
    if (lo.root - target).abs() <= tol {
        return Ok(0.0);
    }
    if (hi.root - target).abs() <= tol {
        return Ok(hi.s);
    }
    if lo.root < target || hi.root > target {
        return Err(Error::NoSolution { target, lo: hi.root, hi: lo.root.min(1.0) });
    }
    let done = |a: &Side, b: &Side| {
        (a.root - target).abs() <= tol
            || (b.root - target).abs() <= tol
            || b.s - a.s <= 4.0 * f64::EPSILON * b.s
    };
    let mut probes = Vec::new();
    if let Some(nc) = coarse_level(spec, n) {
        let (clo, chi) =
            ev.multisection(target, 0.0, nc, true, lo, hi, Vec::new(), &|a, b| b.s - a.s <= 1e-6)?;
        let slope = ((clo.root / chi.root).ln() / (chi.s - clo.s)).abs();
        let w = if slope.is_finite() && slope > 0.0 { tol / (target * slope) } else { 1e-6 };
        probes = probes_around(interpolate(&clo, &chi, target), w.max(1e-14));
    }
    let (lo, hi) = ev.multisection(target, 0.0, n, true, lo, hi, probes, &done)?;
    let (dl, dh) = ((lo.root - target).abs(), (hi.root - target).abs());
    Ok(if dh <= dl { hi.s } else { lo.s })
}

/// `s_k = pressure_inverse(θ_k^d)` for a strictly increasing list of `θ_k ∈ (‖T‖, 1]`.
pub fn sk_sequence(spec: &IfsSpec, thetas: &[f64], tol: f64, n_max: usize) -> Result<Vec<f64>> {
    if thetas.is_empty() {
        return Err(Error::Input("theta list is empty".into()));
    }
    if thetas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Input("theta list must be strictly increasing".into()));
    }
    if let Some(t) = thetas.iter().find(|&&t| !(t > spec.norm_t() && t <= 1.0)) {
        return Err(Error::Domain(format!(
            "theta {t} must lie in ({}, 1]",
            spec.norm_t()
        )));
    }
    let d = spec.dim() as i32;
    thetas.iter().map(|&t| pressure_inverse(spec, t.powi(d), tol, n_max)).collect()
}
