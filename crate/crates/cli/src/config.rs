//! JSON run configuration shared by every subcommand.

use std::path::PathBuf;

use affdim_core::attractor::{ProjectionConfig, DEFAULT_TRUNCATION_TOL};
use affdim_core::dimension::{MonteCarloOptions, SolverOptions};
use affdim_core::estimators::{energy_constant_factor, Continuations, ScalePolicy};
use affdim_core::ifs::{AffineMap, IfsSpec, Word};
use affdim_core::linalg::Matrix;
use affdim_core::randomness::{DistributionKind, DistributionSpec, FieldModel};
use affdim_core::Error;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ifs: IfsConfig,
    /// Perturbation law. Absent means the unperturbed system.
    #[serde(default)]
    pub distribution: Option<DistributionKind>,
    #[serde(default)]
    pub field_model: FieldModel,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfsConfig {
    pub maps: Vec<MapConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    /// Row-major rows.
    pub matrix: Vec<Vec<f64>>,
    pub translation: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub n_max: Option<usize>,
    pub monte_carlo: Option<MonteCarloConfig>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-3, n_max: None, monte_carlo: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub samples: usize,
    /// Defaults to the first run seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub count: usize,
    pub truncation_tol: f64,
    /// Defaults to `(‖T‖ + 1) / 2`.
    pub theta: Option<f64>,
    pub max_depth: Option<usize>,
    pub sampler: SamplerConfig,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self { count: 10_000, truncation_tol: DEFAULT_TRUNCATION_TOL, theta: None, max_depth: None, sampler: SamplerConfig::Uniform }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerConfig {
    #[default]
    Uniform,
    /// Prefixes of length `n` from the equilibrium word measure at exponent
    /// `s` (the affinity dimension when absent).
    WordMeasure { n: usize, #[serde(default)] s: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub cloud: Option<PathBuf>,
    pub scale_policy: ScalePolicy,
    pub occupancy_eps: Option<Vec<f64>>,
    pub t_list: Vec<f64>,
    pub rho_list: Vec<f64>,
    pub energy: EnergyConfig,
    pub transversality: TransversalityConfig,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            cloud: None,
            scale_policy: ScalePolicy::default(),
            occupancy_eps: None,
            t_list: Vec::new(),
            rho_list: (0..8).map(|k| 1e-3 * 3f64.powi(k)).collect(),
            energy: EnergyConfig::default(),
            transversality: TransversalityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConfig {
    pub pairs: usize,
    /// Level of the word measure the pairs are drawn from.
    pub level: usize,
    /// Measure exponent; the affinity dimension when absent.
    pub s: Option<f64>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self { pairs: 10_000, level: 4, s: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransversalityConfig {
    /// Word pairs with 1-based symbols, e.g. `["1-2", "2-1"]`.
    pub pairs: Vec<(String, String)>,
    pub samples: usize,
    pub continuations: Continuations,
}

impl Default for TransversalityConfig {
    fn default() -> Self {
        Self { pairs: Vec::new(), samples: 1_000, continuations: Continuations::PerSeed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Tail,
    Transversality,
    Energy,
    Covering,
}

impl Check {
    /// Checks that need an admissible field.
    pub fn needs_admissible(self) -> bool {
        matches!(self, Check::Transversality | Check::Energy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// All checks when absent; only the admissibility-free ones for
    /// heavy-tailed fields.
    pub checks: Option<Vec<Check>>,
    pub tail: TailConfig,
    pub covering: CoveringConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TailConfig {
    pub theta: Option<f64>,
    pub max_level: usize,
    pub samples_per_level: usize,
    /// Sampled exceedances must vanish from this level on.
    pub quiet_from: usize,
    pub cauchy_tol: f64,
}

impl Default for TailConfig {
    fn default() -> Self {
        Self { theta: None, max_level: 40, samples_per_level: 10_000, quiet_from: 5, cauchy_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoveringConfig {
    pub theta_k: Option<f64>,
    pub levels: Vec<usize>,
}

impl Default for CoveringConfig {
    fn default() -> Self {
        Self { theta_k: None, levels: (1..=6).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    /// Report file `<command>.json` in the output directory.
    Json,
    Csv,
    Svg,
    /// Box-count curve `box_curve.csv`.
    Curve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, formats: vec![Format::Json, Format::Csv, Format::Svg] }
    }
}

/// A parsed config together with the validated objects derived from it.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub raw: RunConfig,
    pub spec: IfsSpec,
    pub dist: DistributionSpec,
    /// Hex SHA-256 of the config bytes.
    pub digest: String,
}

impl Loaded {
    pub fn seed(&self) -> u64 {
        self.raw.seeds[0]
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.raw.solver;
        SolverOptions {
            tol: s.tol,
            n_max: s.n_max,
            monte_carlo: s
                .monte_carlo
                .map(|mc| MonteCarloOptions { samples: mc.samples, seed: mc.seed.unwrap_or(self.seed()) }),
        }
    }

    pub fn theta(&self) -> f64 {
        self.raw.generation.theta.unwrap_or(0.5 * (self.spec.norm_t() + 1.0))
    }

    pub fn projection(&self) -> Result<ProjectionConfig, CliError> {
        let g = &self.raw.generation;
        let mut cfg = ProjectionConfig::new(&self.spec, g.truncation_tol, self.theta())?;
        if let Some(depth) = g.max_depth {
            cfg.max_depth = depth;
        }
        cfg.validate(&self.spec)?;
        Ok(cfg)
    }

    pub fn word_pairs(&self) -> Result<Vec<(Word, Word)>, CliError> {
        let parse = |s: &str| -> Result<Word, CliError> {
            let w: Word = s.parse()?;
            self.spec.check_word(&w)?;
            Ok(w)
        };
        self.raw
            .estimation
            .transversality
            .pairs
            .iter()
            .map(|(i, j)| Ok((parse(i)?, parse(j)?)))
            .collect()
    }
}

/// Parses `bytes` strictly and re-checks the cross-field constraints.
pub fn load(bytes: &[u8], seed_override: Option<u64>) -> Result<Loaded, CliError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    let mut raw: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::new("schema", format!("{path}: {}", e.into_inner()))
    })?;
    if let Some(seed) = seed_override {
        raw.seeds = vec![seed];
    }
    let digest = crate::report::sha256_hex(bytes);
    let spec = build_spec(&raw.ifs)?;
    let dist = match raw.distribution {
        Some(kind) => DistributionSpec::new(kind, spec.dim())?,
        None => DistributionSpec::uniform_ball(0.0, spec.dim())?,
    };
    let loaded = Loaded { raw, spec, dist, digest };
    validate(&loaded)?;
    Ok(loaded)
}

fn build_spec(cfg: &IfsConfig) -> Result<IfsSpec, CliError> {
    let maps = cfg
        .maps
        .iter()
        .map(|m| Ok(AffineMap::new(Matrix::from_rows(&m.matrix)?, m.translation.clone())))
        .collect::<Result<Vec<_>, Error>>()?;
    Ok(IfsSpec::new(maps)?)
}

fn validate(l: &Loaded) -> Result<(), CliError> {
    let c = &l.raw;
    let bad = |msg: String| Err(CliError::new("input", msg));
    if c.seeds.is_empty() {
        return bad("seeds must not be empty".into());
    }
    if !(c.solver.tol > 0.0 && c.solver.tol.is_finite()) {
        return bad(format!("solver.tol must be positive, got {}", c.solver.tol));
    }
    if c.generation.count == 0 {
        return bad("generation.count must be positive".into());
    }
    let norm = l.spec.norm_t();
    for (name, theta) in [
        ("generation.theta", c.generation.theta),
        ("verify.tail.theta", c.verify.tail.theta),
        ("verify.covering.theta_k", c.verify.covering.theta_k),
    ] {
        if let Some(t) = theta {
            if !(t > norm && t <= 1.0) {
                return Err(Error::Domain(format!("{name} = {t} must lie in (‖T‖, 1] = ({norm}, 1]")).into());
            }
        }
    }
    l.projection()?;
    for &t in &c.estimation.t_list {
        energy_constant_factor(t)?;
        if !(t > 0.0 && t < l.spec.dim() as f64) {
            return Err(Error::Domain(format!("t = {t} must lie in (0, {})", l.spec.dim())).into());
        }
    }
    if let Some(r) = c.estimation.rho_list.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return bad(format!("rho values must be positive, got {r}"));
    }
    if let Some(eps) = &c.estimation.occupancy_eps {
        if let Some(e) = eps.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return bad(format!("occupancy scales must be positive, got {e}"));
        }
    }
    for (i, j) in l.word_pairs()? {
        if i == j {
            return Err(Error::DegeneratePair(format!("i and j are both {i}")).into());
        }
    }
    if let SamplerConfig::WordMeasure { s: Some(s), .. } = c.generation.sampler {
        if !(s >= 0.0 && s.is_finite()) {
            return bad(format!("sampler exponent must be non-negative, got {s}"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GASKET: &str = r#"{"ifs":{"maps":[
        {"matrix":[[0.5,0],[0,0.5]],"translation":[0,0]},
        {"matrix":[[0.5,0],[0,0.5]],"translation":[0.5,0]},
        {"matrix":[[0.5,0],[0,0.5]],"translation":[0,0.5]}]}}"#;

    fn with(extra: &str) -> String {
        format!("{},{extra}}}", GASKET.trim_end().strip_suffix('}').unwrap())
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let l = load(GASKET.as_bytes(), None).unwrap();
        assert_eq!(l.spec.num_maps(), 3);
        assert_eq!(l.raw.seeds, vec![0]);
        assert!(l.dist.is_degenerate());
        assert_eq!(l.theta(), 0.75);
    }

    #[test]
    fn unknown_field_names_its_path() {
        let text = GASKET.replacen("\"translation\":[0,0]", "\"translation\":[0,0],\"shift\":1", 1);
        let err = load(text.as_bytes(), None).unwrap_err();
        assert_eq!(err.kind, "schema");
        assert!(err.message.contains("ifs.maps[0]"), "{}", err.message);
    }

    #[test]
    fn seed_override_replaces_list() {
        let l = load(GASKET.as_bytes(), Some(9)).unwrap();
        assert_eq!(l.raw.seeds, vec![9]);
    }

    #[test]
    fn theta_below_norm_rejected() {
        let text = with("\"generation\":{\"theta\":0.4}");
        assert_eq!(load(text.as_bytes(), None).unwrap_err().kind, "domain");
    }

    #[test]
    fn integral_t_rejected() {
        let text = with("\"estimation\":{\"t_list\":[1.0]}");
        assert_eq!(load(text.as_bytes(), None).unwrap_err().kind, "integral-exponent");
    }

    #[test]
    fn words_are_one_based() {
        let text = with("\"estimation\":{\"transversality\":{\"pairs\":[[\"1-2\",\"3\"]]}}");
        let l = load(text.as_bytes(), None).unwrap();
        let pairs = l.word_pairs().unwrap();
        assert_eq!(pairs[0].0.as_slice(), &[0, 1]);
        assert_eq!(pairs[0].1.as_slice(), &[2]);
        let text = with("\"estimation\":{\"transversality\":{\"pairs\":[[\"1-4\",\"3\"]]}}");
        assert!(load(text.as_bytes(), None).is_err());
    }
}
