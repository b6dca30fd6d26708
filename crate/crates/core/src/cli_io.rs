//! Command-line surface, file formats and configuration.
//!
//! Datasets are headed CSV files (`x1,...,xp`) with the center stored in a
//! sidecar `<file>.meta.json`; without a sidecar the center is the origin.
//! All floating-point output uses 17 significant digits, which round-trips
//! every `f64` exactly. Files are written once through a temporary file in the
//! target directory followed by a rename.
//!
//! Random data come from `ChaCha8Rng::seed_from_u64(seed)`, the same stream
//! definition used by the contamination generators.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::breakdown::{self, ClassId, SweepResult};
use crate::contamination::ContaminationSpec;
use crate::error::{Error, Result};
use crate::estimator::{solve_scatter, Init, SolverOptions};
use crate::geometry;
use crate::model::{Dataset, ScatterEstimate, Status, WeightFamily, WeightSpec};
use crate::spectral::{self, ReportOptions};

/// Exact header of sweep tables.
pub const SWEEP_HEADER: &str = "m,epsilon,magnitude,seed,bias,lambda_min,lambda_max,status";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NONEXISTENT: i32 = 2;

/// Number of fresh samples `gen` draws before giving up on general position.
const GEN_ATTEMPTS: usize = 100;

// ---------------------------------------------------------------- formatting

/// 17 significant digits; `inf`, `-inf` and `nan` for non-finite values.
pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
}

/// JSON with 17-digit floats; non-finite numbers become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

// ------------------------------------------------------------------ datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub p: usize,
    pub center: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub fn meta_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn dataset_csv(data: &Dataset) -> String {
    let p = data.dim();
    let mut out = (1..=p).map(|i| format!("x{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for x in data.points() {
        out.push_str(&x.iter().map(|v| format_f64(*v)).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

/// Writes the CSV and its sidecar.
pub fn write_dataset(path: &Path, data: &Dataset, dist: Option<&str>, seed: Option<u64>) -> Result<()> {
    write_atomic(path, dataset_csv(data).as_bytes())?;
    let meta = DatasetMeta {
        n: data.len(),
        p: data.dim(),
        center: data.center().iter().copied().collect(),
        dist: dist.map(str::to_owned),
        seed,
    };
    write_atomic(&meta_path(path), to_json(&meta)?.as_bytes())
}

/// Reads a dataset; `center` overrides the sidecar.
pub fn read_dataset(path: &Path, center: Option<&[f64]>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::InvalidDataset(format!("non-numeric value on data row {i}")));
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = rows[0].len();
    let center = match center {
        Some(c) => c.to_vec(),
        None => {
            let meta = meta_path(path);
            if meta.exists() {
                let m: DatasetMeta = serde_json::from_str(&fs::read_to_string(meta)?)?;
                m.center
            } else {
                vec![0.0; p]
            }
        }
    };
    Dataset::from_rows(&rows, &center)
}

/// Seeded sample of `n` points in general position about the origin.
pub fn generate_dataset(n: usize, p: usize, dist: Dist, seed: u64) -> Result<Dataset> {
    if p == 0 || n == 0 {
        return Err(Error::BadParams("n and p must be positive".into()));
    }
    if n <= p * (p - 1) {
        return Err(Error::BadParams(format!("n = {n} must exceed p(p-1) = {}", p * (p - 1))));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..GEN_ATTEMPTS {
        let points: Vec<DVector<f64>> = (0..n)
            .map(|_| {
                let v = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
                match dist {
                    Dist::Gaussian => v,
                    Dist::Sphere => {
                        let norm = v.norm();
                        if norm > 0.0 { v / norm } else { v }
                    }
                }
            })
            .collect();
        let data = Dataset::about_origin(points)?;
        if geometry::is_general_position(&data) {
            return Ok(data);
        }
    }
    Err(Error::RejectionFailed { attempts: GEN_ATTEMPTS })
}

// -------------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub weight: WeightConfig,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub thresholds: Thresholds,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightConfig {
    pub family: FamilyName,
    /// Defaults to `p`, which gives `K = 2p`.
    pub nu: Option<f64>,
    pub c: Option<f64>,
    pub s0: Option<f64>,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self {
            family: FamilyName::T,
            nu: None,
            c: None,
            s0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FamilyName {
    T,
    Huber,
}

impl WeightConfig {
    pub fn spec(&self, p: usize) -> Result<WeightSpec> {
        match self.family {
            FamilyName::T => WeightSpec::t(p, self.nu.unwrap_or(p as f64)),
            FamilyName::Huber => {
                let c = self.c.ok_or_else(|| Error::Config("huber needs c".into()))?;
                let s0 = self.s0.ok_or_else(|| Error::Config("huber needs s0".into()))?;
                WeightSpec::new(WeightFamily::Huber { c, s0 }, p)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol_rel_change: f64,
    pub tol_residual: f64,
    pub max_iter: usize,
    pub init: Init,
    pub cond_limit: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self {
            tol_rel_change: d.tol_rel_change,
            tol_residual: d.tol_residual,
            max_iter: d.max_iter,
            init: d.init,
            cond_limit: d.cond_limit,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> SolverOptions {
        SolverOptions {
            tol_rel_change: self.tol_rel_change,
            tol_residual: self.tol_residual,
            max_iter: self.max_iter,
            init: self.init,
            cond_limit: self.cond_limit,
            ..SolverOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Defaults to every `m` from 0 to `3n`.
    pub m: Option<Vec<usize>>,
    /// Defaults depend on the contamination class.
    pub magnitudes: Option<Vec<f64>>,
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            m: None,
            magnitudes: None,
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub divergence: f64,
    pub collapse_ratio: f64,
    pub angle_tol_deg: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            divergence: breakdown::DEFAULT_DIVERGENCE_THRESHOLD,
            collapse_ratio: spectral::DEFAULT_COLLAPSE_RATIO,
            angle_tol_deg: spectral::DEFAULT_ANGLE_TOL_DEG,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub out: Option<PathBuf>,
    pub summary: Option<PathBuf>,
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => toml::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string())),
    }
}

// --------------------------------------------------------------- list flags

/// Comma-separated values, where `a..b` and `a..=b` expand to ranges.
pub fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Config(format!("bad list element '{part}'"));
        if let Some((a, b)) = part.split_once("..") {
            let (b, inclusive) = match b.strip_prefix('=') {
                Some(b) => (b, true),
                None => (b, false),
            };
            let a: usize = a.trim().parse().map_err(|_| bad())?;
            let b: usize = b.trim().parse().map_err(|_| bad())?;
            if inclusive {
                out.extend(a..=b);
            } else {
                out.extend(a..b);
            }
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    Ok(out)
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| Error::Config(format!("bad number '{p}'"))))
        .collect()
}

pub fn parse_u64_list(s: &str) -> Result<Vec<u64>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<u64>().map_err(|_| Error::Config(format!("bad seed '{p}'"))))
        .collect()
}

// ----------------------------------------------------------------------- CLI

#[derive(Debug, Parser)]
#[command(name = "scatter-breakdown", version, about = "M-estimators of scatter and their breakdown under contamination")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset in general position.
    Gen(GenArgs),
    /// Solve for the scatter matrix of a dataset.
    Estimate(EstimateArgs),
    /// Run a contamination sweep.
    Sweep(SweepArgs),
    /// Spectral curves and the coplanarity report.
    Spectral(SpectralArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Dist {
    Gaussian,
    Sphere,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub dist: Dist,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Center recorded in the sidecar, comma separated.
    #[arg(long)]
    pub center: Option<String>,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the sidecar center, comma separated.
    #[arg(long)]
    pub center: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyName>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub s0: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol_rel_change: Option<f64>,
    #[arg(long)]
    pub tol_residual: Option<f64>,
    #[arg(long)]
    pub cond_limit: Option<f64>,
    #[arg(long, value_enum)]
    pub init: Option<InitName>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitName {
    Identity,
    SecondMoment,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepClass {
    CenterMass,
    CoplanarOutlier,
    GpCloud,
    CoplanarBounded,
    NearReplicates,
}

impl SweepClass {
    pub fn class_id(&self) -> ClassId {
        match self {
            SweepClass::CenterMass => ClassId::C3Only,
            SweepClass::CoplanarOutlier => ClassId::Unrestricted,
            SweepClass::GpCloud => ClassId::C1C2,
            SweepClass::CoplanarBounded | SweepClass::NearReplicates => ClassId::C2C3,
        }
    }

    pub fn default_magnitudes(&self) -> Vec<f64> {
        match self {
            SweepClass::CenterMass => vec![0.0],
            SweepClass::CoplanarOutlier | SweepClass::GpCloud => vec![1e2, 1e4, 1e6, 1e8],
            SweepClass::CoplanarBounded => vec![100.0],
            SweepClass::NearReplicates => vec![1.0, 0.1, 0.01, 0.001],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            SweepClass::CenterMass => "center-mass",
            SweepClass::CoplanarOutlier => "coplanar-outlier",
            SweepClass::GpCloud => "gp-cloud",
            SweepClass::CoplanarBounded => "coplanar-bounded",
            SweepClass::NearReplicates => "near-replicates",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub class: SweepClass,
    /// Contamination sizes, e.g. `0..=120` or `0,10,20`.
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub magnitudes: Option<String>,
    #[arg(long)]
    pub seeds: Option<String>,
    /// Single seed; shorthand for `--seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Point-mass direction, comma separated; defaults to the first axis.
    #[arg(long)]
    pub direction: Option<String>,
    /// Lower distance bound for clouds (a radius) and bounded contamination
    /// (a squared radius).
    #[arg(long, default_value_t = 1.0)]
    pub r_min: f64,
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Summary JSON; defaults to `<out>.summary.json`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpectralMode {
    Collapse,
    Range,
    Report,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum)]
    pub mode: SpectralMode,
    #[arg(long, default_value_t = 0)]
    pub m: usize,
    #[arg(long, default_value = "1e2,1e4,1e6")]
    pub radii: String,
    #[arg(long)]
    pub theta: Option<String>,
    #[arg(long)]
    pub probe: Option<String>,
    #[arg(long, default_value = "1,0.1,0.01,0.001")]
    pub offsets: String,
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
    /// Skip the upper side of the range window.
    #[arg(long)]
    pub no_upper_window: bool,
    /// Window and report JSON for curve modes; defaults to `<out>.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

struct Resolved {
    data: Dataset,
    spec: WeightSpec,
    opts: SolverOptions,
    config: RunConfig,
}

fn parse_center(s: &Option<String>) -> Result<Option<Vec<f64>>> {
    s.as_deref().map(parse_f64_list).transpose()
}

fn resolve(common: &CommonArgs) -> Result<Resolved> {
    let mut config = load_config(common.config.as_deref())?;
    let center = parse_center(&common.center)?;
    let data = read_dataset(&common.data, center.as_deref())?;
    if let Some(f) = common.family {
        config.weight.family = f;
    }
    if common.nu.is_some() {
        config.weight.nu = common.nu;
    }
    if common.c.is_some() {
        config.weight.c = common.c;
    }
    if common.s0.is_some() {
        config.weight.s0 = common.s0;
    }
    let s = &mut config.solver;
    if let Some(v) = common.max_iter {
        s.max_iter = v;
    }
    if let Some(v) = common.tol_rel_change {
        s.tol_rel_change = v;
    }
    if let Some(v) = common.tol_residual {
        s.tol_residual = v;
    }
    if let Some(v) = common.cond_limit {
        s.cond_limit = v;
    }
    if let Some(v) = common.init {
        s.init = match v {
            InitName::Identity => Init::Identity,
            InitName::SecondMoment => Init::SecondMoment,
        };
    }
    if common.out.is_some() {
        config.output.out = common.out.clone();
    }
    let spec = config.weight.spec(data.dim())?;
    let opts = config.solver.options();
    opts.validate()?;
    Ok(Resolved {
        data,
        spec,
        opts,
        config,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn error_code(e: &Error) -> &'static str {
    match e {
        Error::DegenerateInput(_) => "DEGENERATE_INPUT",
        Error::Io(_) => "IO",
        Error::Csv(c) if c.is_io_error() => "IO",
        Error::Csv(_) => "CSV",
        Error::Json(_) => "JSON",
        Error::InvalidDataset(_) | Error::EmptyDataset | Error::DimensionMismatch { .. } => "INVALID_DATASET",
        Error::Config(_) => "CONFIG",
        Error::NotPositiveDefinite => "NOT_PD",
        Error::GoodDataDegenerate(_) => "GOOD_DATA_DEGENERATE",
        Error::BadParams(_) => "BAD_PARAMS",
        Error::NoBreakdownObserved => "NO_BREAKDOWN_OBSERVED",
        Error::RejectionFailed { .. } => "REJECTION_FAILED",
        _ => "ERROR",
    }
}

#[derive(Serialize)]
struct ErrorDoc<'a> {
    error: &'a str,
    message: String,
}

/// Machine-readable error document.
pub fn error_json(e: &Error) -> String {
    to_json(&ErrorDoc {
        error: error_code(e),
        message: e.to_string(),
    })
    .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}\n", error_code(e)))
}

#[derive(Serialize)]
pub struct EstimateDoc<'a> {
    pub status: Status,
    pub v: Vec<Vec<f64>>,
    pub residual: f64,
    pub trace_gap: f64,
    pub iterations: usize,
    pub distances: &'a [f64],
    pub weights: &'a [f64],
    pub k: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub existence: Option<&'a geometry::ExistenceReport>,
}

impl<'a> EstimateDoc<'a> {
    pub fn new(est: &'a ScatterEstimate, spec: &WeightSpec) -> Self {
        Self {
            status: est.status,
            v: est.v.to_rows(),
            residual: est.residual,
            trace_gap: est.trace_gap,
            iterations: est.iterations,
            distances: &est.distances,
            weights: &est.weights,
            k: spec.k(),
            existence: est.existence.as_ref(),
        }
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<i32> {
    let mut data = generate_dataset(args.n, args.p, args.dist, args.seed)?;
    if let Some(c) = parse_center(&args.center)? {
        data = Dataset::new(data.points().to_vec(), DVector::from_vec(c))?;
    }
    let dist = match args.dist {
        Dist::Gaussian => "gaussian",
        Dist::Sphere => "sphere",
    };
    write_dataset(&args.out, &data, Some(dist), Some(args.seed))?;
    Ok(EXIT_OK)
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<i32> {
    let r = resolve(&args.common)?;
    let out = r.config.output.out.as_deref();
    match solve_scatter(&r.data, &r.spec, &r.opts) {
        Ok(est) => {
            emit(out, &to_json(&EstimateDoc::new(&est, &r.spec))?)?;
            Ok(if est.status == Status::Nonexistent { EXIT_NONEXISTENT } else { EXIT_OK })
        }
        Err(e @ Error::DegenerateInput(_)) => {
            emit(out, &error_json(&e))?;
            Ok(EXIT_FAILURE)
        }
        Err(e) => Err(e),
    }
}

#[derive(Serialize)]
struct EstimateSummary {
    epsilon_hat: Option<f64>,
    grid_resolution: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'static str>,
}

#[derive(Serialize)]
struct SweepSummary {
    class: &'static str,
    n: usize,
    p: usize,
    k: f64,
    divergence_threshold: f64,
    theoretical_delta_star: breakdown::BreakdownTheory,
    epsilon_star_bounds: [f64; 2],
    estimate_delta_star: EstimateSummary,
}

pub fn sweep_csv(result: &SweepResult) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in &result.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.m,
            format_f64(r.epsilon),
            format_f64(r.magnitude),
            r.seed,
            format_f64(r.bias),
            format_f64(r.lambda_min),
            format_f64(r.lambda_max),
            r.status
        ));
    }
    out
}

fn template_for(args: &SweepArgs, p: usize) -> Result<ContaminationSpec> {
    let seed = 0;
    Ok(match args.class {
        SweepClass::CenterMass => ContaminationSpec::center_mass(1),
        SweepClass::CoplanarOutlier => {
            let dir = match &args.direction {
                Some(d) => parse_f64_list(d)?,
                None => {
                    let mut e = vec![0.0; p];
                    e[0] = 1.0;
                    e
                }
            };
            ContaminationSpec::coplanar_point_mass(&dir, 1.0, 1)
        }
        SweepClass::GpCloud => ContaminationSpec::general_position_cloud(args.r_min, seed, 1),
        SweepClass::CoplanarBounded => {
            ContaminationSpec::coplanar_bounded(vec![], args.r_min, args.r_min.max(100.0), seed, 1)
        }
        SweepClass::NearReplicates => ContaminationSpec::near_point_replicates(args.anchor, 1.0, seed, 1),
    })
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<i32> {
    let r = resolve(&args.common)?;
    let n = r.data.len();
    let p = r.data.dim();
    let m_values = match (&args.m, &r.config.sweep.m) {
        (Some(s), _) => parse_usize_list(s)?,
        (None, Some(v)) => v.clone(),
        (None, None) => breakdown::default_m_grid(n),
    };
    if m_values.is_empty() {
        return Err(Error::Config("empty m list".into()));
    }
    let magnitudes = match (&args.magnitudes, &r.config.sweep.magnitudes) {
        (Some(s), _) => parse_f64_list(s)?,
        (None, Some(v)) => v.clone(),
        (None, None) => args.class.default_magnitudes(),
    };
    let seeds = match (&args.seeds, args.seed) {
        (Some(s), _) => parse_u64_list(s)?,
        (None, Some(s)) => vec![s],
        (None, None) => r.config.sweep.seeds.clone(),
    };
    let threshold = args.threshold.unwrap_or(r.config.thresholds.divergence);
    let template = template_for(args, p)?;
    let result = breakdown::run_sweep(&r.data, &r.spec, &template, &m_values, &magnitudes, &seeds, &r.opts)?;
    let theory = breakdown::theoretical_delta_star(p, r.spec.k(), n, args.class.class_id())?;
    let (lo, hi) = breakdown::epsilon_star_bounds(theory.delta_star_lower, n);
    let estimate = match breakdown::estimate_delta_star(&result, threshold) {
        Ok((eps, res)) => EstimateSummary {
            epsilon_hat: Some(eps),
            grid_resolution: Some(res),
            error: None,
        },
        Err(Error::NoBreakdownObserved) => EstimateSummary {
            epsilon_hat: None,
            grid_resolution: None,
            error: Some("NO_BREAKDOWN_OBSERVED"),
        },
        Err(e) => return Err(e),
    };
    let summary = SweepSummary {
        class: args.class.name(),
        n,
        p,
        k: r.spec.k(),
        divergence_threshold: threshold,
        theoretical_delta_star: theory,
        epsilon_star_bounds: [lo, hi],
        estimate_delta_star: estimate,
    };
    let out = r.config.output.out.as_deref();
    emit(out, &sweep_csv(&result))?;
    let summary_path = args
        .summary
        .clone()
        .or(r.config.output.summary.clone())
        .or_else(|| out.map(|o| sibling(o, ".summary.json")));
    match summary_path {
        Some(path) => write_atomic(&path, to_json(&summary)?.as_bytes())?,
        None => eprint!("{}", to_json(&summary)?),
    }
    Ok(EXIT_OK)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn axis(p: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; p];
    e[i.min(p - 1)] = 1.0;
    e
}

pub fn cmd_spectral(args: &SpectralArgs) -> Result<i32> {
    let r = resolve(&args.common)?;
    let p = r.data.dim();
    let out = r.config.output.out.as_deref();
    let report_path = args.report.clone().or_else(|| out.map(|o| sibling(o, ".json")));
    let write_report = |text: String| -> Result<()> {
        match &report_path {
            Some(path) => write_atomic(path, text.as_bytes()),
            None => {
                eprint!("{text}");
                Ok(())
            }
        }
    };
    match args.mode {
        SpectralMode::Collapse => {
            let theta = match &args.theta {
                Some(s) => parse_f64_list(s)?,
                None => axis(p, 0),
            };
            let probe = match &args.probe {
                Some(s) => parse_f64_list(s)?,
                None => axis(p, 1),
            };
            let radii = parse_f64_list(&args.radii)?;
            let curve = spectral::direction_collapse_curve(&r.data, &r.spec, &theta, args.m, &radii, &probe, &r.opts)?;
            let mut csv = String::from("r,theta_form,probe_form,status\n");
            for row in &curve.rows {
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    format_f64(row.r),
                    format_f64(row.theta_form),
                    format_f64(row.probe_form),
                    row.status
                ));
            }
            emit(out, &csv)?;
            write_report(to_json(&curve)?)?;
        }
        SpectralMode::Range => {
            let offsets = parse_f64_list(&args.offsets)?;
            let seeds = parse_u64_list(&args.seeds)?;
            let curve = spectral::range_alignment_curve(
                &r.data,
                &r.spec,
                args.anchor,
                args.m,
                &offsets,
                &seeds,
                &r.opts,
                !args.no_upper_window,
            )?;
            let mut csv = String::from("w,seed,anchor_form,orthogonal_max,status\n");
            for row in &curve.rows {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    format_f64(row.w),
                    row.seed,
                    format_f64(row.anchor_form),
                    format_f64(row.orthogonal_max),
                    row.status
                ));
            }
            emit(out, &csv)?;
            write_report(to_json(&curve)?)?;
        }
        SpectralMode::Report => {
            let opts = ReportOptions {
                solver: r.opts,
                collapse_ratio: r.config.thresholds.collapse_ratio,
                angle_tol_deg: r.config.thresholds.angle_tol_deg,
            };
            let report = spectral::coplanarity_report(&r.data, &r.spec, &opts);
            emit(out, &to_json(&report)?)?;
        }
    }
    Ok(EXIT_OK)
}

/// Runs a parsed command and maps the outcome to an exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Spectral(a) => cmd_spectral(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprint!("{}", error_json(&e));
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02e23, f64::MIN_POSITIVE, 5e-324] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(format_f64(f64::INFINITY), "inf");
        assert_eq!(to_json(&vec![0.5, f64::INFINITY]).unwrap(), "[5.0000000000000000e-1,null]\n");
    }

    #[test]
    fn lists() {
        assert_eq!(parse_usize_list("0..3,7,9..=10").unwrap(), vec![0, 1, 2, 7, 9, 10]);
        assert!(parse_usize_list("").unwrap().is_empty());
        assert!(parse_usize_list("a").is_err());
        assert_eq!(parse_f64_list("1e2, 0.5").unwrap(), vec![100.0, 0.5]);
    }

    #[test]
    fn config_defaults_and_overrides() {
        let c: RunConfig = toml::from_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.solver.max_iter, 500);
        assert_eq!(c.thresholds.divergence, 1e6);
        let c: RunConfig = toml::from_str(
            "[weight]\nfamily = \"huber\"\nc = 2.0\ns0 = 3.0\n[solver]\nmax_iter = 9\ninit = \"second-moment\"\n[sweep]\nseeds = [1, 2]\n",
        )
        .unwrap();
        assert_eq!(c.weight.spec(2).unwrap().k(), 6.0);
        assert_eq!(c.solver.init, Init::SecondMoment);
        assert_eq!(c.sweep.seeds, vec![1, 2]);
        assert!(toml::from_str::<RunConfig>("[solver]\nbogus = 1\n").is_err());
    }

    #[test]
    fn generated_data_is_general_position() {
        let d = generate_dataset(40, 2, Dist::Gaussian, 7).unwrap();
        assert_eq!((d.len(), d.dim()), (40, 2));
        assert!(geometry::is_general_position(&d));
        assert_eq!(generate_dataset(1, 1, Dist::Sphere, 0).unwrap().len(), 1);
        assert!(generate_dataset(2, 3, Dist::Gaussian, 0).is_err());
    }
}
