//! Batch front end for `affdim-core`: config parsing, orchestration and
//! report, CSV and SVG output.

pub mod config;
pub mod report;
pub mod svg;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use affdim_core::attractor::{falconer_weights, generate_cloud, PointCloud, WordSampler};
use affdim_core::dimension::{affinity_dimension_with, sk_sequence, DimensionResult};
use affdim_core::estimators::{
    box_count, covering_sum, energy_estimate, occupancy, transversality_check, BoxCountResult, EnergyEstimate,
    FieldFamily, OccupancyReport, TransversalityReport,
};
use affdim_core::ifs::Word;
use affdim_core::randomness::{borel_cantelli_check, BorelCantelliReport, PerturbationField};
use affdim_core::Error;
use serde::Serialize;

use config::{Check, Format, Loaded, SamplerConfig};
pub use report::CliError;
use report::{render, status_for, Envelope, SCHEMA_VERSION, TOOL_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Dim,
    Generate,
    Estimate,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Dim => "dim",
            Command::Generate => "generate",
            Command::Estimate => "estimate",
            Command::Verify => "verify",
        }
    }
}

/// Command-line arguments shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub cloud: Option<PathBuf>,
}

/// Exit code and the rendered JSON report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub exit_code: i32,
    pub report: String,
}

/// Reads the config, runs `cmd` on a pool of the requested size and writes
/// the report to the output directory when one is configured.
pub fn run(cmd: Command, inv: &Invocation) -> Outcome {
    let bytes = match fs::read(&inv.config) {
        Ok(b) => b,
        Err(e) => {
            let err = CliError::new("io", format!("{}: {e}", inv.config.display()));
            return failure(cmd, None, &[], &err);
        }
    };
    let loaded = match config::load(&bytes, inv.seed) {
        Ok(l) => l,
        Err(err) => return failure(cmd, Some(&report::sha256_hex(&bytes)), &[], &err),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(inv.threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => return failure(cmd, Some(&loaded.digest), &loaded.raw.seeds, &CliError::new("io", e.to_string())),
    };
    let out_dir = inv.out.clone().or_else(|| loaded.raw.output.dir.clone());
    pool.install(|| match cmd {
        Command::Dim => cmd_dim(&loaded, out_dir.as_deref()),
        Command::Generate => cmd_generate(&loaded, out_dir.as_deref()),
        Command::Estimate => {
            let cloud = inv.cloud.clone().or_else(|| loaded.raw.estimation.cloud.clone());
            cmd_estimate(&loaded, cloud.as_deref(), out_dir.as_deref())
        }
        Command::Verify => cmd_verify(&loaded, out_dir.as_deref()),
    })
}

fn failure(cmd: Command, digest: Option<&str>, seeds: &[u64], err: &CliError) -> Outcome {
    let env: Envelope<'_, ()> = Envelope {
        schema_version: SCHEMA_VERSION,
        tool: "affdim",
        version: TOOL_VERSION,
        command: cmd.name(),
        config_digest: digest,
        seeds,
        status: status_for(err.exit_code),
        warnings: &[],
        result: None,
        error: Some(err),
    };
    Outcome { exit_code: err.exit_code, report: render(&env) }
}

fn finish<T: Serialize>(
    cmd: Command,
    l: &Loaded,
    out_dir: Option<&Path>,
    result: Result<(T, Vec<String>), CliError>,
) -> Outcome {
    let outcome = match &result {
        Ok((value, warnings)) => {
            let env = Envelope {
                schema_version: SCHEMA_VERSION,
                tool: "affdim",
                version: TOOL_VERSION,
                command: cmd.name(),
                config_digest: Some(&l.digest),
                seeds: &l.raw.seeds,
                status: "ok",
                warnings,
                result: Some(value),
                error: None,
            };
            Outcome { exit_code: 0, report: render(&env) }
        }
        Err(err) => failure(cmd, Some(&l.digest), &l.raw.seeds, err),
    };
    if let Some(dir) = out_dir.filter(|_| l.raw.output.formats.contains(&Format::Json)) {
        let name = format!("{}.json", cmd.name());
        if let Err(e) = write_file(dir, &name, outcome.report.as_bytes()) {
            return failure(cmd, Some(&l.digest), &l.raw.seeds, &e);
        }
    }
    outcome
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), bytes).map_err(|e| CliError::new("io", format!("{}: {e}", dir.join(name).display())))
}

fn dimension(l: &Loaded) -> Result<DimensionResult, CliError> {
    Ok(affinity_dimension_with(&l.spec, &l.solver_options())?)
}

fn field(l: &Loaded) -> PerturbationField {
    PerturbationField::new(l.seed(), l.dist, l.raw.field_model)
}

/// Affinity dimension report.
pub fn cmd_dim(l: &Loaded, out_dir: Option<&Path>) -> Outcome {
    finish(Command::Dim, l, out_dir, dimension(l).map(|r| (r, Vec::new())))
}

#[derive(Debug, Serialize)]
pub struct GenerateSummary {
    pub count: usize,
    pub dim: usize,
    pub spec_digest: String,
    pub bounding_box: Option<(Vec<f64>, Vec<f64>)>,
    pub max_trunc_bound: f64,
    /// File names inside the output directory.
    pub files: Vec<String>,
}

/// Point cloud as CSV, its metadata and an optional SVG scatter plot.
pub fn cmd_generate(l: &Loaded, out_dir: Option<&Path>) -> Outcome {
    finish(Command::Generate, l, out_dir, generate(l, out_dir))
}

fn generate(l: &Loaded, out_dir: Option<&Path>) -> Result<(GenerateSummary, Vec<String>), CliError> {
    let dir = out_dir.ok_or_else(|| CliError::new("input", "generate needs --out or output.dir"))?;
    let g = &l.raw.generation;
    let sampler = match g.sampler {
        SamplerConfig::Uniform => WordSampler::Uniform,
        SamplerConfig::WordMeasure { n, s } => {
            let s = match s {
                Some(s) => s,
                None => dimension(l)?.value,
            };
            WordSampler::Measure(falconer_weights(&l.spec, s, n)?)
        }
    };
    let mut cloud = generate_cloud(&l.spec, &field(l), &l.projection()?, g.count, &sampler, l.seed())?;
    let formats = &l.raw.output.formats;
    let mut files = Vec::new();
    if formats.contains(&Format::Csv) {
        let mut buf = Vec::new();
        cloud.write_csv(&mut buf)?;
        write_file(dir, "cloud.csv", &buf)?;
        files.push("cloud.csv".to_string());
    }
    if formats.contains(&Format::Svg) {
        if l.spec.dim() > 2 {
            if let Some(meta) = cloud.meta.as_mut() {
                meta.notes.push("svg shows the projection onto coordinates (x1, x2)".into());
            }
        }
        write_file(dir, "cloud.svg", svg::scatter(&cloud).as_bytes())?;
        files.push("cloud.svg".to_string());
    }
    let meta = cloud.meta_json().unwrap_or_default();
    write_file(dir, "cloud.meta.json", format!("{meta}\n").as_bytes())?;
    files.push("cloud.meta.json".to_string());
    let summary = GenerateSummary {
        count: cloud.len(),
        dim: cloud.dim,
        spec_digest: affdim_core::attractor::spec_digest(&l.spec),
        bounding_box: cloud.bounding_box(),
        max_trunc_bound: cloud.points.iter().map(|p| p.trunc_bound).fold(0.0, f64::max),
        files,
    };
    Ok((summary, Vec::new()))
}

#[derive(Debug, Serialize)]
pub struct EstimateReport {
    pub points: usize,
    pub box_count: BoxCountResult,
    pub occupancy: OccupancyReport,
    pub energy: Vec<EnergyEstimate>,
    pub transversality: Vec<TransversalityReport>,
    pub affinity_dimension: DimensionResult,
    /// `|box-count estimate − affinity dimension|`.
    pub gap: f64,
}

/// Box counting, occupancy and the configured energy and transversality
/// estimates for a stored cloud.
pub fn cmd_estimate(l: &Loaded, cloud: Option<&Path>, out_dir: Option<&Path>) -> Outcome {
    finish(Command::Estimate, l, out_dir, estimate(l, cloud, out_dir))
}

fn read_cloud(path: &Path) -> Result<PointCloud, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    let cloud = PointCloud::read_csv(BufReader::new(file))?;
    if cloud.is_empty() {
        return Err(Error::Input(format!("{} holds no points", path.display())).into());
    }
    Ok(cloud)
}

fn estimate(l: &Loaded, cloud: Option<&Path>, out_dir: Option<&Path>) -> Result<(EstimateReport, Vec<String>), CliError> {
    let path = cloud.ok_or_else(|| CliError::new("input", "estimate needs --cloud or estimation.cloud"))?;
    let cloud = read_cloud(path)?;
    if cloud.dim != l.spec.dim() {
        return Err(Error::Input(format!("cloud has {} coordinates, the IFS {}", cloud.dim, l.spec.dim())).into());
    }
    let e = &l.raw.estimation;
    let bc = box_count(&cloud, &e.scale_policy)?;
    let occ = occupancy(&cloud, e.occupancy_eps.as_deref())?;
    if let Some(dir) = out_dir.filter(|_| l.raw.output.formats.contains(&Format::Curve)) {
        let mut csv = String::from("eps,count\n");
        for (eps, count) in bc.scales.iter().zip(&bc.counts) {
            csv.push_str(&format!("{eps:?},{count}\n"));
        }
        write_file(dir, "box_curve.csv", csv.as_bytes())?;
    }
    let dim = dimension(l)?;
    let energy = energies(l, &e.t_list, dim.value)?;
    let transversality = transversality(l)?;
    let gap = (bc.estimate - dim.value).abs();
    let report = EstimateReport {
        points: cloud.len(),
        box_count: bc,
        occupancy: occ,
        energy,
        transversality,
        affinity_dimension: dim,
        gap,
    };
    Ok((report, Vec::new()))
}

fn energies(l: &Loaded, t_list: &[f64], dim_value: f64) -> Result<Vec<EnergyEstimate>, CliError> {
    if t_list.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = &l.raw.estimation.energy;
    let s = cfg.s.unwrap_or(dim_value.min(l.spec.dim() as f64));
    let measure = falconer_weights(&l.spec, s, cfg.level)?;
    let family = FieldFamily { dist: l.dist, model: l.raw.field_model };
    let projection = l.projection()?;
    t_list
        .iter()
        .map(|&t| Ok(energy_estimate(&l.spec, &family, &measure, t, cfg.pairs, l.seed(), &projection)?))
        .collect()
}

fn transversality_seeds(l: &Loaded) -> Vec<u64> {
    let base = l.seed();
    (0..l.raw.estimation.transversality.samples as u64).map(|k| base.wrapping_add(k)).collect()
}

fn transversality(l: &Loaded) -> Result<Vec<TransversalityReport>, CliError> {
    transversality_for(l, &l.word_pairs()?)
}

fn transversality_for(l: &Loaded, pairs: &[(Word, Word)]) -> Result<Vec<TransversalityReport>, CliError> {
    let cfg = l.projection()?;
    let seeds = transversality_seeds(l);
    let t = &l.raw.estimation.transversality;
    pairs
        .iter()
        .map(|(i, j)| {
            Ok(transversality_check(
                &l.spec,
                &l.dist,
                l.raw.field_model,
                i,
                j,
                &l.raw.estimation.rho_list,
                &seeds,
                t.continuations,
                &cfg,
            )?)
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct TailCheck {
    pub pass: bool,
    /// Heavy-tailed fields are reported, not rejected.
    pub negative_control: bool,
    pub quiet_from: usize,
    pub report: BorelCantelliReport,
}

#[derive(Debug, Serialize)]
pub struct EnergyCheck {
    pub t: f64,
    pub pass: bool,
    pub estimate: EnergyEstimate,
}

#[derive(Debug, Serialize)]
pub struct CoveringCheck {
    pub pass: bool,
    pub theta_k: f64,
    pub s_k: f64,
    pub levels: Vec<usize>,
    pub sums: Vec<f64>,
    /// `max / min − 1` over the levels.
    pub relative_spread: f64,
}

#[derive(Debug, Default, Serialize)]
pub struct VerifyReport {
    pub all_pass: bool,
    pub tail: Option<TailCheck>,
    pub transversality: Option<Vec<TransversalityReport>>,
    pub energy: Option<Vec<EnergyCheck>>,
    pub covering: Option<CoveringCheck>,
}

/// Tail, transversality, energy and covering checks with a pass flag each.
pub fn cmd_verify(l: &Loaded, out_dir: Option<&Path>) -> Outcome {
    finish(Command::Verify, l, out_dir, verify(l))
}

fn verify(l: &Loaded) -> Result<(VerifyReport, Vec<String>), CliError> {
    let admissible = l.dist.tail_admissible();
    let mut warnings = Vec::new();
    let checks = match &l.raw.verify.checks {
        Some(list) => {
            if let Some(c) = list.iter().find(|c| c.needs_admissible() && !admissible) {
                return Err(Error::Inadmissible(
                    l.dist.name().into(),
                    format!("the {c:?} check needs super-polynomial tails"),
                )
                .into());
            }
            list.clone()
        }
        None if admissible => vec![Check::Tail, Check::Transversality, Check::Energy, Check::Covering],
        None => {
            warnings.push(format!(
                "{} is not admissible: transversality and energy checks skipped",
                l.dist.name()
            ));
            vec![Check::Tail, Check::Covering]
        }
    };
    let mut rep = VerifyReport::default();
    for check in checks {
        match check {
            Check::Tail => {
                let tail = tail_check(l)?;
                if tail.negative_control {
                    warnings.push(format!("negative control: {} has polynomial tails", l.dist.name()));
                }
                rep.tail = Some(tail);
            }
            Check::Transversality => {
                let mut pairs = l.word_pairs()?;
                if pairs.is_empty() {
                    if l.spec.num_maps() < 2 {
                        warnings.push("transversality needs at least two maps; skipped".into());
                        continue;
                    }
                    pairs = vec![(Word::new(vec![0]), Word::new(vec![1])), (Word::new(vec![0, 0]), Word::new(vec![0, 1]))];
                }
                rep.transversality = Some(transversality_for(l, &pairs)?);
            }
            Check::Energy => {
                if l.raw.estimation.t_list.is_empty() {
                    warnings.push("energy check needs estimation.t_list; skipped".into());
                    continue;
                }
                let dim = dimension(l)?;
                let list = energies(l, &l.raw.estimation.t_list, dim.value)?
                    .into_iter()
                    .map(|e| EnergyCheck { t: e.t, pass: e.mean_inverse_power <= e.bound + 3.0 * e.stderr, estimate: e })
                    .collect();
                rep.energy = Some(list);
            }
            Check::Covering => rep.covering = Some(covering_check(l)?),
        }
    }
    rep.all_pass = rep.tail.as_ref().is_none_or(|t| t.pass)
        && rep.transversality.as_ref().is_none_or(|v| v.iter().all(|r| r.pass))
        && rep.energy.as_ref().is_none_or(|v| v.iter().all(|e| e.pass))
        && rep.covering.as_ref().is_none_or(|c| c.pass);
    Ok((rep, warnings))
}

fn tail_check(l: &Loaded) -> Result<TailCheck, CliError> {
    let cfg = &l.raw.verify.tail;
    let theta = cfg.theta.unwrap_or_else(|| l.theta());
    let report =
        borel_cantelli_check(&field(l), &l.spec, theta, 1..=cfg.max_level, cfg.samples_per_level, l.seed())?;
    let quiet = report.levels.iter().filter(|lv| lv.n >= cfg.quiet_from).all(|lv| lv.exceedances == 0);
    let pass = report.admissible && report.converges && report.cauchy_increment <= cfg.cauchy_tol && quiet;
    Ok(TailCheck { pass, negative_control: !report.admissible, quiet_from: cfg.quiet_from, report })
}

fn covering_check(l: &Loaded) -> Result<CoveringCheck, CliError> {
    let cfg = &l.raw.verify.covering;
    let theta_k = cfg.theta_k.unwrap_or_else(|| l.theta());
    let n_max = l.raw.solver.n_max.unwrap_or_else(|| l.spec.max_exact_level());
    let s_k = sk_sequence(&l.spec, &[theta_k], l.raw.solver.tol, n_max)?[0];
    let sums = cfg.levels.iter().map(|&n| covering_sum(&l.spec, theta_k, s_k, n)).collect::<Result<Vec<_>, _>>()?;
    let (lo, hi) = sums.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let pass = !sums.is_empty() && sums.iter().all(|v| v.is_finite() && *v > 0.0);
    let relative_spread = if sums.is_empty() { 0.0 } else { hi / lo - 1.0 };
    Ok(CoveringCheck { pass, theta_k, s_k, levels: cfg.levels.clone(), sums, relative_spread })
}
