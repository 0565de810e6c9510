mod config;
mod io;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use deconv_core::deconvolver::{run_fit, ModelKind};
use deconv_core::simulation::{generate_dataset, mise_estimate, ImportanceDensity, SimResult};
use deconv_core::stats::RngStream;
use deconv_core::Error;
use serde::Serialize;

use config::{EvaluateConfig, FitFile, ImportanceName, SimulateConfig};
use io::{DensityFile, TruthFile};

/// Failure classes with stable exit codes.
#[derive(Debug)]
pub enum AppError {
    Config(String),
    Data(String),
    Numerical(String),
}

impl AppError {
    fn code(&self) -> u8 {
        match self {
            AppError::Config(_) => 2,
            AppError::Data(_) => 3,
            AppError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "configuration error: {m}"),
            AppError::Data(m) => write!(f, "data error: {m}"),
            AppError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidConfig(_)
            | Error::UnknownStructure(_)
            | Error::InvalidKnots(_)
            | Error::InvalidDegreesOfFreedom { .. }
            | Error::NonPositiveConcentration { .. }
            | Error::TooFewCoefficients(_) => AppError::Config(msg),
            Error::Data(_)
            | Error::EmptyDataset
            | Error::DimensionMismatch { .. }
            | Error::InsufficientReplicates
            | Error::LabelOutOfRange { .. } => AppError::Data(msg),
            _ => AppError::Numerical(msg),
        }
    }
}

#[derive(Parser)]
#[command(name = "deconv", version, about = "Multivariate density deconvolution from replicated proxies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicated data and write the exact truth.
    Simulate(Common),
    /// Fit a model and write density grids, posterior draws and diagnostics.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Record wall-clock runtime in the summary (makes it non-reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Score fitted densities against the truth by importance sampling.
    Evaluate(Common),
}

fn prepare(c: &Common) -> Result<(), AppError> {
    if let Some(n) = c.jobs {
        if n == 0 {
            return Err(AppError::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| AppError::Config(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&c.out).map_err(|e| AppError::Data(format!("{}: {e}", c.out.display())))
}

fn simulate(c: &Common) -> Result<(), AppError> {
    let cfg: SimulateConfig = config::load(&c.config)?;
    let scenario = cfg.scenario.scenario();
    scenario.validate()?;
    if cfg.replications == 0 {
        return Err(AppError::Config("field `replications` must be positive".into()));
    }
    prepare(c)?;
    let root = RngStream::new(c.seed.unwrap_or(cfg.seed), 0);
    for b in 0..cfg.replications {
        let sim = generate_dataset(&scenario, &mut root.derive(b as u64).derive(0))?;
        let name = if cfg.replications == 1 { "data.csv".to_string() } else { format!("data_{}.csv", b + 1) };
        io::write_dataset(&c.out.join(name), &sim.data)?;
    }
    let truth = TruthFile { density: scenario.truth()?, scenario };
    io::write_json(&c.out.join("truth.json"), &truth)?;
    log::info!("wrote {} dataset(s) to {}", cfg.replications, c.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitSummary {
    model: ModelKind,
    heteroscedastic: bool,
    n_subjects: usize,
    n_observations: usize,
    dim: usize,
    seed: u64,
    iterations: usize,
    burn_in: usize,
    thin: usize,
    retained_draws: usize,
    grid_points: usize,
    k_x: usize,
    k_err: Option<usize>,
    modal_nonempty_x: usize,
    x_acceptance: Option<f64>,
    stage1_x_acceptance: Option<Vec<f64>>,
    nonempty_x: Vec<usize>,
    nonempty_err: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runtime_seconds: Option<f64>,
}

fn fit(c: &Common, timing: bool) -> Result<(), AppError> {
    let start = Instant::now();
    let file: FitFile = config::load(&c.config)?;
    let cfg = file.fit_config(c.seed.unwrap_or(file.seed));
    cfg.validate()?;
    let data = io::read_dataset(&config::resolve(&c.config, &file.data))?;
    prepare(c)?;
    let out = run_fit(&data, &cfg)?;
    io::write_grid(&c.out, &out.grid)?;
    io::write_json(&c.out.join("posterior.json"), &out.summary)?;
    let d = &out.diagnostics;
    let summary = FitSummary {
        model: cfg.model,
        heteroscedastic: cfg.heteroscedastic && cfg.model != ModelKind::Naive,
        n_subjects: data.n_subjects(),
        n_observations: data.n_observations(),
        dim: data.dim(),
        seed: cfg.seed,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        retained_draws: out.grid.draws,
        grid_points: cfg.grid_points,
        k_x: d.k_x,
        k_err: d.k_err,
        modal_nonempty_x: d.modal_nonempty_x(cfg.burn_in),
        x_acceptance: d.x_acceptance,
        stage1_x_acceptance: d.stage1_x_acceptance.clone(),
        nonempty_x: d.nonempty_x.clone(),
        nonempty_err: d.nonempty_err.clone(),
        runtime_seconds: timing.then(|| start.elapsed().as_secs_f64()),
    };
    io::write_json(&c.out.join("summary.json"), &summary)?;
    log::info!("fit finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport {
    m: usize,
    seed: u64,
    /// Model label → importance density → result.
    models: BTreeMap<String, BTreeMap<String, SimResult>>,
}

fn evaluate(c: &Common) -> Result<(), AppError> {
    let cfg: EvaluateConfig = config::load(&c.config)?;
    if cfg.m == 0 || cfg.importance.is_empty() || cfg.fits.is_empty() || cfg.fits.values().any(Vec::is_empty) {
        return Err(AppError::Config("`m`, `importance` and every `fits` entry must be nonempty".into()));
    }
    let truth: TruthFile = io::read_json(&config::resolve(&c.config, &cfg.truth))?;
    prepare(c)?;
    let p = truth.density.dim();
    let p0s: Vec<ImportanceDensity> = cfg
        .importance
        .iter()
        .map(|k| match k {
            ImportanceName::Truth => ImportanceDensity::Truth,
            ImportanceName::Uniform => ImportanceDensity::uniform_around(&truth.density),
        })
        .collect();
    let root = RngStream::new(c.seed.unwrap_or(cfg.seed), 0);
    let mut models = BTreeMap::new();
    for (mi, (label, paths)) in cfg.fits.iter().enumerate() {
        let mut evaluators = Vec::with_capacity(paths.len());
        for path in paths {
            let path = config::resolve(&c.config, path);
            let f: DensityFile = io::read_json(&path)?;
            if f.dim() != p {
                return Err(AppError::Data(format!("{}: dimension {} does not match the truth's {p}", path.display(), f.dim())));
            }
            evaluators.push(f.evaluator()?);
        }
        let fits: Vec<&(dyn Fn(&[f64]) -> f64 + Sync)> = evaluators.iter().map(|b| b.as_ref()).collect();
        let mut per_p0 = BTreeMap::new();
        for (j, p0) in p0s.iter().enumerate() {
            let r = mise_estimate(&truth.density, &fits, p0, cfg.m, &root.derive((mi * p0s.len() + j) as u64))?;
            per_p0.insert(p0.label().to_string(), r);
        }
        models.insert(label.clone(), per_p0);
    }
    io::write_json(&c.out.join("report.json"), &EvaluateReport { m: cfg.m, seed: root.seed(), models })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DECONV_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Fit { common, timing } => fit(common, *timing),
        Command::Evaluate(c) => evaluate(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("deconv: {e}");
            ExitCode::from(e.code())
        }
    }
}
