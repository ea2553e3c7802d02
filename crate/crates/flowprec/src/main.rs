use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use flowprec::calibration::mixture_w2_curve;
use flowprec::config::ExperimentConfig;
use flowprec::error::{Error, Result};
use flowprec::gaussianity::{classify_dimensions, gaussianity_threshold};
use flowprec::runner::{run_cell, write_cell, VERSION};

#[derive(Parser)]
#[command(name = "flowprec", version, about = "Flow-preconditioned MCMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the warmup + sampling + diagnostics pipeline for every seed in
    /// a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed (must appear in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the columns of a CSV sample matrix as approximately
    /// Gaussian or not; prints a JSON report.
    GaussianityCheck {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        constant: f64,
    },
    /// Mean/std of the W2 distance for double-Gaussian mixtures over a
    /// (distance, sample size) grid, with threshold lines; prints CSV.
    ThresholdCurve {
        /// Component distances, comma-separated.
        #[arg(long, default_value = "2,4,10")]
        distances: String,
        /// Sample sizes, comma-separated.
        #[arg(long, default_value = "100,1000,10000")]
        sizes: String,
        #[arg(long, default_value_t = 150)]
        repeats: usize,
        /// Threshold constants C, comma-separated.
        #[arg(long, default_value = "0.1,0.3")]
        constants: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, field: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|tok| {
            tok.trim().parse::<T>().map_err(|_| Error::InvalidConfig {
                field: field.into(),
                msg: format!("cannot parse {tok:?}"),
            })
        })
        .collect()
}

fn read_csv_matrix(path: &PathBuf) -> Result<Vec<Vec<f64>>> {
    let raw = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => rows.push(row),
            // Tolerate one non-numeric header line.
            Err(_) if rows.is_empty() && idx == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: "non-numeric CSV entry".into(),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::DegenerateInput("empty CSV".into()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::DegenerateInput("ragged CSV rows".into()));
    }
    Ok(rows)
}

fn cmd_run(config_path: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<usize> {
    let (mut config, hash) = ExperimentConfig::load(&config_path)?;
    if let Some(dir) = out {
        config.output_dir = dir.display().to_string();
    }
    let seeds: Vec<u64> = match seed {
        Some(s) => {
            if !config.seeds.contains(&s) {
                return Err(Error::InvalidConfig {
                    field: "seed".into(),
                    msg: format!("seed {s} is not listed in the config"),
                });
            }
            vec![s]
        }
        None => config.seeds.clone(),
    };
    let out_dir = PathBuf::from(&config.output_dir);
    let mut failures = 0usize;
    for s in seeds {
        match run_cell(&config, s).and_then(|r| write_cell(&config, &hash, &out_dir, s, &r)) {
            Ok(dir) => println!("seed {s}: wrote {}", dir.display()),
            Err(e) => {
                eprintln!("seed {s}: failed: {e}");
                failures += 1;
            }
        }
    }
    Ok(failures)
}

fn cmd_gaussianity_check(input: PathBuf, constant: f64) -> Result<()> {
    let samples = read_csv_matrix(&input)?;
    let report = classify_dimensions(&samples, constant)?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

fn cmd_threshold_curve(
    distances: String,
    sizes: String,
    repeats: usize,
    constants: String,
    seed: u64,
) -> Result<()> {
    let distances: Vec<f64> = parse_list(&distances, "distances")?;
    let sizes: Vec<usize> = parse_list(&sizes, "sizes")?;
    let constants: Vec<f64> = parse_list(&constants, "constants")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    println!("# flowprec {VERSION} repeats {repeats} seed {seed}");
    println!("kind,param,n,value,std");
    for &d in &distances {
        for &n in &sizes {
            let (mean, std) = mixture_w2_curve(d, n, repeats, &mut rng)?;
            println!("w2,{d},{n},{mean},{std}");
        }
    }
    for &c in &constants {
        for &n in &sizes {
            println!("tau,{c},{n},{},", gaussianity_threshold(c, n));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, seed, out } => match cmd_run(config, seed, out) {
            Ok(0) => Ok(()),
            Ok(n) => {
                eprintln!("{n} grid cell(s) failed");
                return ExitCode::FAILURE;
            }
            Err(e) => Err(e),
        },
        Command::GaussianityCheck { input, constant } => cmd_gaussianity_check(input, constant),
        Command::ThresholdCurve {
            distances,
            sizes,
            repeats,
            constants,
            seed,
        } => cmd_threshold_curve(distances, sizes, repeats, constants, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
