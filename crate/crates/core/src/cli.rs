//! Command implementations behind the `lcap` binary.
//!
//! Exit codes: 0 on success, 1 for invalid arguments, configuration or
//! data, 2 for numerical failures.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{center_dataset, load_dataset, save_dataset, validate_dataset};
use crate::error::{LcapError, Result};
use crate::estimation::{fit_coefficients, fit_components, FitConfig, Shrinkage};
use crate::inference::{bootstrap_coefficients, confidence_interval, IntervalMethod};
use crate::panel::Panel;
use crate::simulation::{generate_dataset, run_experiment, ExperimentConfig, SimConfig};

/// Environment variable that overrides `--seed` (and config-file seeds).
pub const SEED_ENV: &str = "LCAP_SEED";

const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "lcap",
    version,
    about = "Longitudinal covariate-assisted principal regression"
)]
pub struct Cli {
    /// Worker threads for starts, replicates and grid cells (default: all
    /// available).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit projections, coefficients and the number of components.
    Fit(FitArgs),
    /// Bootstrap intervals for the coefficients of a fitted projection.
    Bootstrap(BootstrapArgs),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Run a replicated simulation grid.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Observations: subject_id,visit,y1..yp
    #[arg(long)]
    pub data: PathBuf,
    /// Covariates: subject_id,visit,x1..xq
    #[arg(long)]
    pub covariates: PathBuf,
    /// Treat the observations as mean-zero instead of centering each visit.
    #[arg(long)]
    pub no_center: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Use the sample covariances without shrinkage.
    #[arg(long)]
    pub no_shrinkage: bool,
    #[arg(long, default_value_t = 10)]
    pub starts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Maximum number of components.
    #[arg(long, default_value_t = 5)]
    pub components: usize,
    #[arg(long, default_value_t = 2.0)]
    pub dfd_threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CliIntervalMethod {
    Percentile,
    Bc,
}

impl From<CliIntervalMethod> for IntervalMethod {
    fn from(m: CliIntervalMethod) -> Self {
        match m {
            CliIntervalMethod::Percentile => IntervalMethod::Percentile,
            CliIntervalMethod::Bc => IntervalMethod::BiasCorrected,
        }
    }
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Projection file in the `components.csv` format written by `fit`.
    #[arg(long)]
    pub gamma: PathBuf,
    /// Row of the projection file to use (1-based).
    #[arg(long, default_value_t = 1)]
    pub component: usize,
    #[arg(short = 'B', long = "replicates", default_value_t = crate::inference::DEFAULT_REPLICATES)]
    pub b: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, value_enum, default_value_t = CliIntervalMethod::Percentile)]
    pub method: CliIntervalMethod,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON file with `seed` and `sim` (generator settings).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// JSON experiment grid.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Configuration file of `lcap simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub wall_clock_seconds: f64,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    /// The only field that varies between identical runs.
    pub timings: Timings,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return 1;
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::debug!("thread pool already configured: {e}");
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn resolve_seed(seed: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s.trim().parse().map_err(|_| {
            LcapError::Invalid(format!("{SEED_ENV}={s:?} is not an unsigned integer"))
        }),
        Err(_) => Ok(seed),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| LcapError::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

fn digests(dir: Option<&Path>, paths: &[PathBuf]) -> Result<Vec<FileDigest>> {
    paths
        .iter()
        .map(|p| {
            let full = dir.map_or_else(|| p.clone(), |d| d.join(p));
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_file(&full)?,
            })
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| LcapError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| LcapError::Invalid(format!("cannot serialize {}: {e}", path.display())))?;
    write_text(path, &(text + "\n"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| LcapError::io(dir, e))
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| LcapError::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        LcapError::Invalid(format!("{}: {field}: {}", path.display(), e.inner()))
    })
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    out: &Path,
    command: &str,
    seed: u64,
    config: serde_json::Value,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    started: Instant,
) -> Result<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config,
        inputs: digests(None, inputs)?,
        outputs: digests(Some(out), outputs)?,
        timings: Timings {
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        },
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)
}

fn load_panel(input: &InputArgs) -> Result<Panel> {
    let mut ds = load_dataset(&input.data, &input.covariates)?;
    if input.no_center {
        for s in &mut ds.subjects {
            for b in &mut s.visits {
                b.centered = true;
            }
        }
        ds.centered = true;
    } else {
        ds = center_dataset(ds);
    }
    for w in validate_dataset(&ds).into_result()? {
        log::warn!("{w}");
    }
    Panel::from_dataset(&ds)
}

fn fit_config(solver: &SolverArgs, seed: u64) -> FitConfig {
    FitConfig {
        max_outer_iters: solver.max_iters,
        tol: solver.tol,
        n_starts: solver.starts,
        seed,
        shrinkage: if solver.no_shrinkage {
            Shrinkage::SampleOnly
        } else {
            Shrinkage::On
        },
        ..FitConfig::default()
    }
}

fn fmt_row(values: impl IntoIterator<Item = String>) -> String {
    values.into_iter().collect::<Vec<_>>().join(",") + "\n"
}

#[derive(Serialize)]
struct ComponentCoefficients {
    component: usize,
    selected: bool,
    beta0: f64,
    beta1: Vec<f64>,
    sigma2: f64,
    objective: f64,
    converged: bool,
    iterations: usize,
    start_index: usize,
}

#[derive(Serialize)]
struct CoefficientsFile {
    manifest: &'static str,
    k_selected: usize,
    components: Vec<ComponentCoefficients>,
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let started = Instant::now();
    let seed = resolve_seed(a.solver.seed)?;
    let config = FitConfig {
        max_components: a.components,
        dfd_threshold: a.dfd_threshold,
        ..fit_config(&a.solver, seed)
    };
    config.validate()?;
    let panel = load_panel(&a.input)?;
    let set = fit_components(&panel, &config)?;
    create_dir(&a.out)?;

    let p = panel.p();
    let mut comp_csv = fmt_row(
        ["component".to_string(), "selected".to_string()]
            .into_iter()
            .chain((1..=p).map(|j| format!("gamma{j}"))),
    );
    for (k, c) in set.components.iter().enumerate() {
        comp_csv += &fmt_row(
            [(k + 1).to_string(), (k < set.k_selected).to_string()]
                .into_iter()
                .chain(c.params.gamma.iter().map(|g| g.to_string())),
        );
    }
    write_text(&a.out.join("components.csv"), &comp_csv)?;

    let mut dfd_csv = String::from("k,dfd,selected\n");
    for (k, v) in set.dfd_values.iter().enumerate() {
        dfd_csv += &format!("{},{},{}\n", k + 1, v, k < set.k_selected);
    }
    write_text(&a.out.join("dfd.csv"), &dfd_csv)?;

    let coefficients = CoefficientsFile {
        manifest: MANIFEST_FILE,
        k_selected: set.k_selected,
        components: set
            .components
            .iter()
            .enumerate()
            .map(|(k, c)| ComponentCoefficients {
                component: k + 1,
                selected: k < set.k_selected,
                beta0: c.params.beta0,
                beta1: c.params.beta1.iter().copied().collect(),
                sigma2: c.params.sigma2,
                objective: c.objective,
                converged: c.converged,
                iterations: c.iterations,
                start_index: c.start_index,
            })
            .collect(),
    };
    write_json(&a.out.join("coefficients.json"), &coefficients)?;

    let outputs = ["components.csv", "dfd.csv", "coefficients.json"].map(PathBuf::from);
    let mut config_json = serde_json::to_value(&config).expect("config serializes");
    config_json["center"] = (!a.input.no_center).into();
    write_manifest(
        &a.out,
        "fit",
        seed,
        config_json,
        &[a.input.data.clone(), a.input.covariates.clone()],
        &outputs,
        started,
    )
}

/// Reads row `component` (1-based) of a `components.csv` projection file.
pub fn read_gamma(path: &Path, component: usize) -> Result<DVector<f64>> {
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| LcapError::io(path, std::io::Error::other(e)))?;
    let headers = rdr
        .headers()
        .map_err(|e| LcapError::parse(path, 1, e.to_string()))?
        .clone();
    let first_gamma = headers
        .iter()
        .position(|h| h.starts_with("gamma"))
        .ok_or_else(|| LcapError::parse(path, 1, "no gamma columns in header"))?;
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx as u64 + 2;
        let rec = rec.map_err(|e| LcapError::parse(path, line, e.to_string()))?;
        let k: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| LcapError::parse(path, line, "bad component index"))?;
        if k != component {
            continue;
        }
        let values = rec
            .iter()
            .skip(first_gamma)
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| LcapError::parse(path, line, format!("not a number: {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok(DVector::from_vec(values));
    }
    Err(LcapError::Invalid(format!(
        "{}: no component {component}",
        path.display()
    )))
}

#[derive(Serialize)]
struct IntervalRecord {
    coefficient: String,
    estimate: f64,
    lower: f64,
    upper: f64,
    level: f64,
    method: IntervalMethod,
}

#[derive(Serialize)]
struct IntervalsFile {
    manifest: &'static str,
    b: usize,
    failures: usize,
    seed: u64,
    intervals: Vec<IntervalRecord>,
}

fn coefficient_name(index: usize) -> String {
    if index == 0 {
        "beta0".to_string()
    } else {
        format!("beta1_{index}")
    }
}

fn cmd_bootstrap(a: &BootstrapArgs) -> Result<()> {
    let started = Instant::now();
    let seed = resolve_seed(a.solver.seed)?;
    let config = fit_config(&a.solver, seed);
    config.validate()?;
    let panel = load_panel(&a.input)?;
    let gamma = read_gamma(&a.gamma, a.component)?;
    if gamma.len() != panel.p() {
        return Err(LcapError::Invalid(format!(
            "{}: projection has {} entries but the data have p = {}",
            a.gamma.display(),
            gamma.len(),
            panel.p()
        )));
    }
    let full = fit_coefficients(&panel, &gamma, &config)?;
    let estimate = full.params.coefficients();
    let dist = bootstrap_coefficients(&panel, &gamma, a.b, &config, seed)?;
    create_dir(&a.out)?;

    let names: Vec<String> = (0..estimate.len()).map(coefficient_name).collect();
    let mut csv = fmt_row(std::iter::once("replicate".to_string()).chain(names.iter().cloned()));
    for (r, row) in dist.replicates.iter().enumerate() {
        csv += &fmt_row(std::iter::once(r.to_string()).chain(row.iter().map(|v| v.to_string())));
    }
    write_text(&a.out.join("replicates.csv"), &csv)?;

    let method = IntervalMethod::from(a.method);
    let intervals = (0..estimate.len())
        .map(|k| {
            let ci = confidence_interval(&dist, k, a.level, method, estimate[k])?;
            Ok(IntervalRecord {
                coefficient: names[k].clone(),
                estimate: estimate[k],
                lower: ci.lower,
                upper: ci.upper,
                level: ci.level,
                method: ci.method,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(
        &a.out.join("intervals.json"),
        &IntervalsFile {
            manifest: MANIFEST_FILE,
            b: a.b,
            failures: dist.failures,
            seed,
            intervals,
        },
    )?;

    let outputs = ["replicates.csv", "intervals.json"].map(PathBuf::from);
    let mut config_json = serde_json::to_value(&config).expect("config serializes");
    config_json["center"] = (!a.input.no_center).into();
    config_json["component"] = a.component.into();
    config_json["replicates"] = a.b.into();
    config_json["level"] = a.level.into();
    config_json["method"] = serde_json::to_value(method).expect("method serializes");
    write_manifest(
        &a.out,
        "bootstrap",
        seed,
        config_json,
        &[
            a.input.data.clone(),
            a.input.covariates.clone(),
            a.gamma.clone(),
        ],
        &outputs,
        started,
    )
}

#[derive(Serialize)]
struct TruthFile {
    manifest: &'static str,
    /// Columns of the basis, one array per dimension.
    pi: Vec<Vec<f64>>,
    beta0: Vec<f64>,
    /// Covariate effects, one array per dimension.
    beta: Vec<Vec<f64>>,
    sigma2: f64,
    target_dim: usize,
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: SimulateConfig = read_config(&a.config)?;
    cfg.seed = resolve_seed(cfg.seed)?;
    cfg.sim
        .validate()
        .map_err(|e| e.in_field("sim").in_config(&a.config))?;
    let (ds, truth) = generate_dataset(&cfg.sim, cfg.seed)?;
    create_dir(&a.out)?;
    save_dataset(&ds, &a.out.join("data.csv"), &a.out.join("covariates.csv"))?;
    let p = truth.pi.ncols();
    write_json(
        &a.out.join("truth.json"),
        &TruthFile {
            manifest: MANIFEST_FILE,
            pi: (0..p)
                .map(|j| truth.pi.column(j).iter().copied().collect())
                .collect(),
            beta0: truth.beta0.iter().copied().collect(),
            beta: (0..p)
                .map(|j| truth.beta.row(j).iter().copied().collect())
                .collect(),
            sigma2: truth.sigma2,
            target_dim: truth.target_dim,
        },
    )?;
    let outputs = ["data.csv", "covariates.csv", "truth.json"].map(PathBuf::from);
    write_manifest(
        &a.out,
        "simulate",
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
        std::slice::from_ref(&a.config),
        &outputs,
        started,
    )
}

fn cmd_bench(a: &BenchArgs) -> Result<()> {
    let started = Instant::now();
    let mut cfg: ExperimentConfig = read_config(&a.config)?;
    cfg.seed = resolve_seed(cfg.seed)?;
    cfg.validate().map_err(|e| e.in_config(&a.config))?;
    let report = run_experiment(&cfg)?;
    report.write(&a.out)?;
    let outputs = ["metrics.csv", "replicates.csv", "summary.json"].map(PathBuf::from);
    write_manifest(
        &a.out,
        "bench",
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
        std::slice::from_ref(&a.config),
        &outputs,
        started,
    )
}
