//! Command implementations behind the `wishart-deconv` binary: simulate the
//! convolution protocol, estimate a mixing density from a dataset, and run
//! the price-ingestion pipeline. Every run writes plot-ready CSV/JSON plus a
//! manifest (config digest, seeds, library version, κ₂, timings) from which
//! the outputs are reproducible.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use wishart_deconv::estimator::{deconvolve, CutoffChoice, EstimatorConfig};
use wishart_deconv::finance::{self, FinanceError};
use wishart_deconv::sampling::{self, ProtocolConfig};
use wishart_deconv::spd::SpdMatrix;
use wishart_deconv::specfn::KAPPA2;

/// Name of the environment variable supplying the default worker count.
pub const WORKERS_ENV: &str = "WISHART_DECONV_WORKERS";

/// CLI failures, split by exit code: validation errors exit 2, runtime
/// numerical errors exit 3.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),

    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<FinanceError> for CliError {
    fn from(e: FinanceError) -> Self {
        match &e {
            FinanceError::Estimator(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<wishart_deconv::estimator::EstimatorError> for CliError {
    fn from(e: wishart_deconv::estimator::EstimatorError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<wishart_deconv::sampling::SamplingError> for CliError {
    fn from(e: wishart_deconv::sampling::SamplingError) -> Self {
        match &e {
            wishart_deconv::sampling::SamplingError::Estimator(_) => {
                CliError::Numeric(e.to_string())
            }
            _ => CliError::Validation(e.to_string()),
        }
    }
}

/// Run manifest emitted next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 of the effective (post-override) config JSON.
    pub config_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub library_version: String,
    pub kappa2: f64,
    pub rng_algorithm: String,
    pub workers: usize,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_df: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded_nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active_nodes: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate_weeks: Option<usize>,
    /// Wall-clock timings; informational, not part of reproducibility.
    pub timings_ms: BTreeMap<String, u128>,
}

impl RunManifest {
    fn new(command: &str, config_digest: String, workers: usize) -> Self {
        Self {
            command: command.to_string(),
            config_digest,
            seed: None,
            library_version: env!("CARGO_PKG_VERSION").to_string(),
            kappa2: KAPPA2,
            rng_algorithm: "ChaCha12 with SplitMix64-derived per-task seeds".to_string(),
            workers,
            outputs: Vec::new(),
            noise_df: None,
            selected_t: None,
            excluded_nodes: None,
            active_nodes: None,
            degenerate_weeks: None,
            timings_ms: BTreeMap::new(),
        }
    }
}

/// Shared command options (flag overrides).
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub t: Option<f64>,
    pub select_t: bool,
    pub df: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

fn digest_of<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Validation(format!("config {}: {} (at {}:{})", path.display(), e, e.line(), e.column()))
    })
}

fn resolve_workers(opt: Option<usize>) -> usize {
    opt.or_else(|| {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|w| *w > 0)
    })
    .unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    })
}

fn in_pool<R: Send>(workers: usize, job: impl FnOnce() -> R + Send) -> Result<R, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Validation(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(job))
}

fn write_output(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn finish_manifest(dir: &Path, mut manifest: RunManifest, name: &str) -> Result<RunManifest, CliError> {
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = write_output(dir, name, &json)?;
    manifest.outputs.push(path.display().to_string());
    Ok(manifest)
}

/// `simulate`: draw a dataset from the convolution protocol and write it as
/// a `y11,y12,y22` CSV.
pub fn cmd_simulate(config_path: &Path, opts: &RunOptions) -> Result<RunManifest, CliError> {
    let mut cfg: ProtocolConfig = read_config(config_path)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;

    let workers = resolve_workers(opts.workers);
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut manifest = RunManifest::new("simulate", digest_of(&cfg), workers);
    manifest.seed = Some(cfg.seed);

    let start = Instant::now();
    let data = in_pool(workers, || sampling::run_protocol(&cfg))??;
    manifest
        .timings_ms
        .insert("simulate".into(), start.elapsed().as_millis());

    let mut csv = String::from("y11,y12,y22\n");
    for y in &data {
        csv.push_str(&format!("{},{},{}\n", y.x11(), y.x12(), y.x22()));
    }
    let path = write_output(&out_dir, "dataset.csv", &csv)?;
    manifest.outputs.push(path.display().to_string());
    finish_manifest(&out_dir, manifest, "manifest_simulate.json")
}

/// Parses a `y11,y12,y22` dataset CSV into SPD matrices.
pub fn read_dataset(path: &Path) -> Result<Vec<SpdMatrix>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read dataset {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "y11,y12,y22" => {}
        _ => {
            return Err(CliError::Validation(format!(
                "{}: expected header 'y11,y12,y22'",
                path.display()
            )))
        }
    }
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != 3 {
            return Err(CliError::Validation(format!(
                "{} line {line}: expected 3 fields",
                path.display()
            )));
        }
        let mut vals = [0.0f64; 3];
        for (k, f) in fields.iter().enumerate() {
            vals[k] = f.trim().parse::<f64>().map_err(|e| {
                CliError::Validation(format!("{} line {line}: bad number '{f}': {e}", path.display()))
            })?;
        }
        let y = SpdMatrix::new(vals[0], vals[1], vals[2]).map_err(|e| {
            CliError::Validation(format!("{} line {line}: {e}", path.display()))
        })?;
        out.push(y);
    }
    if out.is_empty() {
        return Err(CliError::Validation(format!(
            "{}: dataset has no rows",
            path.display()
        )));
    }
    Ok(out)
}

fn apply_estimator_overrides(cfg: &mut EstimatorConfig, opts: &RunOptions) {
    if let Some(df) = opts.df {
        cfg.noise_df = df;
    }
    if let Some(t) = opts.t {
        cfg.cutoff = CutoffChoice::Fixed(t);
    } else if opts.select_t {
        cfg.cutoff = CutoffChoice::Select {
            t_grid: CutoffChoice::default_selection_grid(),
        };
    }
}

/// `estimate`: deconvolve a dataset into a mixing-density grid (CSV + JSON).
pub fn cmd_estimate(
    config_path: &Path,
    dataset_path: &Path,
    opts: &RunOptions,
) -> Result<RunManifest, CliError> {
    let mut cfg: EstimatorConfig = read_config(config_path)?;
    apply_estimator_overrides(&mut cfg, opts);

    let data = read_dataset(dataset_path)?;
    let workers = resolve_workers(opts.workers);
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut manifest = RunManifest::new("estimate", digest_of(&cfg), workers);

    let start = Instant::now();
    let eigs = sampling::eigenvalues(&data);
    let out = in_pool(workers, || deconvolve(&eigs, &cfg))??;
    manifest
        .timings_ms
        .insert("estimate".into(), start.elapsed().as_millis());
    manifest.noise_df = Some(cfg.noise_df);
    manifest.selected_t = Some(out.t);
    manifest.excluded_nodes = Some(out.excluded_nodes);
    manifest.active_nodes = Some(out.active_nodes);

    let p1 = write_output(&out_dir, "density.csv", &out.grid.to_csv())?;
    let p2 = write_output(&out_dir, "density.json", &out.grid.to_json())?;
    manifest.outputs.push(p1.display().to_string());
    manifest.outputs.push(p2.display().to_string());
    finish_manifest(&out_dir, manifest, "manifest_estimate.json")
}

/// Finance command config: the estimator settings for the weekly-covariance
/// pipeline (noise defaults to four degrees of freedom).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinanceConfig {
    pub estimator: EstimatorConfig,
}

/// `finance`: weekly covariance table plus mixing-density grid from a
/// two-asset daily price CSV.
pub fn cmd_finance(
    config_path: &Path,
    prices_path: &Path,
    opts: &RunOptions,
) -> Result<RunManifest, CliError> {
    let mut cfg: FinanceConfig = read_config(config_path)?;
    apply_estimator_overrides(&mut cfg.estimator, opts);

    let series = finance::parse_prices(prices_path)?;
    let workers = resolve_workers(opts.workers);
    let out_dir = opts.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    let mut manifest = RunManifest::new("finance", digest_of(&cfg), workers);

    let start = Instant::now();
    let (weeks, out) = in_pool(workers, || {
        finance::estimate_from_prices(&series, &cfg.estimator)
    })??;
    manifest
        .timings_ms
        .insert("finance".into(), start.elapsed().as_millis());
    manifest.noise_df = Some(cfg.estimator.noise_df);
    manifest.selected_t = Some(out.t);
    manifest.excluded_nodes = Some(out.excluded_nodes);
    manifest.active_nodes = Some(out.active_nodes);
    manifest.degenerate_weeks = Some(weeks.iter().filter(|w| w.degenerate).count());

    let p0 = write_output(&out_dir, "weekly.csv", &finance::weekly_to_csv(&weeks))?;
    let p1 = write_output(&out_dir, "density.csv", &out.grid.to_csv())?;
    let p2 = write_output(&out_dir, "density.json", &out.grid.to_json())?;
    for p in [p0, p1, p2] {
        manifest.outputs.push(p.display().to_string());
    }
    finish_manifest(&out_dir, manifest, "manifest_finance.json")
}
