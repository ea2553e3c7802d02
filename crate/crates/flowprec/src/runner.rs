//! Per-cell experiment execution: warmup, sampling, diagnostics, and
//! artifact serialization for one (config, seed) pair.

use std::io::Write;
use std::path::{Path, PathBuf};

use flate2::write::GzEncoder;
use flate2::Compression;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::diagnostics::{ess_report, ksd_with, EssReport, KsdEstimate, KsdKernel};
use crate::error::{Error, Result};
use crate::flows::precond::{ParamSlice, Preconditioner};
use crate::warmup::{run_sampling, run_warmup, WarmupLogEntry};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct CellResult {
    pub metrics_row: String,
    pub ess: EssReport,
    pub ksd: KsdEstimate,
    pub gaussian_set_size: Option<usize>,
    pub warmup_log: Vec<WarmupLogEntry>,
    pub preconditioner: Preconditioner,
    /// Present only when the config asks for draw storage.
    pub draws: Option<Vec<Vec<Vec<f64>>>>,
}

pub const METRICS_HEADER: &str =
    "target,preconditioner,sampler,seed,min_bulk_ess,min_tail_ess,ksd,g_size";

/// Run warmup, sampling, and diagnostics for one seed.
pub fn run_cell(config: &ExperimentConfig, seed: u64) -> Result<CellResult> {
    let target = config.resolve_target()?;
    let wcfg = config.warmup_config();
    let (mut ensemble, precond, _reservoir, warmup_log) = run_warmup(target.as_ref(), &wcfg, seed)?;
    let draws = run_sampling(
        &mut ensemble,
        &precond,
        target.as_ref(),
        &wcfg,
        config.sampling.iterations,
    );

    let ess = ess_report(&draws)?;
    let flat: Vec<Vec<f64>> = draws.iter().flatten().cloned().collect();
    let score = |x: &[f64]| target.log_density_grad(x).1;
    let kernel = KsdKernel::parse(&config.diagnostics.ksd_kernel)?;
    let ksd = ksd_with(
        &flat,
        &score,
        kernel,
        config.diagnostics.ksd_trials,
        config.diagnostics.ksd_subsample,
        seed,
    )?;

    let gaussian_set_size = match &precond {
        Preconditioner::Factorized(fp) => Some(fp.report.gaussian_set.len()),
        _ => None,
    };
    let metrics_row = format!(
        "{},{},{},{},{},{},{},{}",
        config.target.name,
        config.preconditioner.kind,
        config.sampler.kind,
        seed,
        ess.min_bulk,
        ess.min_tail,
        ksd.value,
        gaussian_set_size.map_or(String::new(), |g| g.to_string()),
    );

    Ok(CellResult {
        metrics_row,
        ess,
        ksd,
        gaussian_set_size,
        warmup_log,
        preconditioner: precond,
        draws: config.sampling.store_draws.then_some(draws),
    })
}

pub fn cell_dir(config: &ExperimentConfig, out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!(
        "{}-{}-{}-seed{}",
        config.target.name, config.preconditioner.kind, config.sampler.kind, seed
    ))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn header(config_hash: &str) -> String {
    format!("# flowprec {VERSION} config {config_hash}\n")
}

#[derive(Serialize)]
struct PrecondArtifact<'a> {
    version: &'a str,
    config_hash: &'a str,
    kind: &'a str,
    dim: usize,
    params: Vec<ParamSlice>,
}

/// Write metrics.csv, warmup.jsonl, preconditioner.json, and (optionally)
/// draws.csv.gz into the cell directory. Rewrites any existing artifacts
/// so reruns are idempotent.
pub fn write_cell(
    config: &ExperimentConfig,
    config_hash: &str,
    out_dir: &Path,
    seed: u64,
    result: &CellResult,
) -> Result<PathBuf> {
    let dir = cell_dir(config, out_dir, seed);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let metrics_path = dir.join("metrics.csv");
    let contents = format!(
        "{}{}\n{}\n",
        header(config_hash),
        METRICS_HEADER,
        result.metrics_row
    );
    std::fs::write(&metrics_path, contents).map_err(io_err(&metrics_path))?;

    let log_path = dir.join("warmup.jsonl");
    let mut log = format!(
        "{{\"version\":\"{VERSION}\",\"config_hash\":\"{config_hash}\"}}\n"
    );
    for entry in &result.warmup_log {
        log.push_str(&serde_json::to_string(entry).expect("log entry serializes"));
        log.push('\n');
    }
    std::fs::write(&log_path, log).map_err(io_err(&log_path))?;

    let precond_path = dir.join("preconditioner.json");
    let artifact = PrecondArtifact {
        version: VERSION,
        config_hash,
        kind: result.preconditioner.kind().name(),
        dim: result.preconditioner.dim(),
        params: result.preconditioner.param_slices(),
    };
    std::fs::write(
        &precond_path,
        serde_json::to_string_pretty(&artifact).expect("artifact serializes"),
    )
    .map_err(io_err(&precond_path))?;

    if let Some(draws) = &result.draws {
        let draws_path = dir.join("draws.csv.gz");
        let file = std::fs::File::create(&draws_path).map_err(io_err(&draws_path))?;
        let mut gz = GzEncoder::new(file, Compression::default());
        let dim = draws[0][0].len();
        let cols: Vec<String> = (0..dim).map(|j| format!("x{j}")).collect();
        gz.write_all(header(config_hash).as_bytes())
            .map_err(io_err(&draws_path))?;
        gz.write_all(format!("chain,iteration,{}\n", cols.join(",")).as_bytes())
            .map_err(io_err(&draws_path))?;
        for (chain, rows) in draws.iter().enumerate() {
            for (iter, row) in rows.iter().enumerate() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                gz.write_all(format!("{chain},{iter},{}\n", vals.join(",")).as_bytes())
                    .map_err(io_err(&draws_path))?;
            }
        }
        gz.finish().map_err(io_err(&draws_path))?;
    }
    Ok(dir)
}
