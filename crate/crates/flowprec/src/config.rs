//! Experiment configuration: TOML schema, validation, and resolution of
//! target models and warmup settings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{KsdKernel, KSD_SUBSAMPLE, KSD_TRIALS};
use crate::error::{Error, Result};
use crate::flows::precond::PreconditionerKind;
use crate::samplers::{
    SamplerKind, DEFAULT_INITIAL_STEP, DEFAULT_MAX_DEPTH, DEFAULT_N_LEAPFROG,
    DEFAULT_TARGET_ACCEPT,
};
use crate::targets::{
    load_credit, load_radon, Banana, Funnel, RadonModel, RadonVariant, SgcModel, StdGaussian,
    Target,
};
use crate::training::TrainConfig;
use crate::warmup::WarmupConfig;

fn default_dim() -> usize {
    0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSection {
    pub name: String,
    /// Dimension override for funnel/banana/gaussian (0 = model default).
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// CSV path for data-backed targets (sgc, radon-*).
    #[serde(default)]
    pub dataset: Option<String>,
    /// Keep only the first `truncate` data rows.
    #[serde(default)]
    pub truncate: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerSection {
    pub kind: String,
    #[serde(default = "default_n_leapfrog")]
    pub n_leapfrog: usize,
    #[serde(default = "default_initial_step")]
    pub initial_step: f64,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
    #[serde(default = "default_target_accept")]
    pub target_accept: f64,
}

fn default_n_leapfrog() -> usize {
    DEFAULT_N_LEAPFROG
}
fn default_initial_step() -> f64 {
    DEFAULT_INITIAL_STEP
}
fn default_max_depth() -> usize {
    DEFAULT_MAX_DEPTH
}
fn default_target_accept() -> f64 {
    DEFAULT_TARGET_ACCEPT
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreconditionerSection {
    pub kind: String,
    #[serde(default = "default_constant")]
    pub constant: f64,
}

fn default_constant() -> f64 {
    0.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmupSection {
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default = "default_steps_per_cycle")]
    pub steps_per_cycle: usize,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_reservoir")]
    pub reservoir_capacity: usize,
}

fn default_cycles() -> usize {
    5
}
fn default_steps_per_cycle() -> usize {
    1000
}
fn default_chains() -> usize {
    100
}
fn default_reservoir() -> usize {
    15_000
}

impl Default for WarmupSection {
    fn default() -> Self {
        WarmupSection {
            cycles: default_cycles(),
            steps_per_cycle: default_steps_per_cycle(),
            chains: default_chains(),
            reservoir_capacity: default_reservoir(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingSection {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_full_batch")]
    pub full_batch_limit: usize,
}

fn default_epochs() -> usize {
    3500
}
fn default_lr() -> f64 {
    1e-3
}
fn default_wd() -> f64 {
    0.01
}
fn default_batch() -> usize {
    1024
}
fn default_full_batch() -> usize {
    4096
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            epochs: default_epochs(),
            learning_rate: default_lr(),
            weight_decay: default_wd(),
            batch_size: default_batch(),
            full_batch_limit: default_full_batch(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingSection {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default)]
    pub store_draws: bool,
}

fn default_iterations() -> usize {
    1000
}

impl Default for SamplingSection {
    fn default() -> Self {
        SamplingSection {
            iterations: default_iterations(),
            store_draws: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsSection {
    #[serde(default = "default_kernel")]
    pub ksd_kernel: String,
    #[serde(default = "default_trials")]
    pub ksd_trials: usize,
    #[serde(default = "default_subsample")]
    pub ksd_subsample: usize,
}

fn default_kernel() -> String {
    "imq".into()
}
fn default_trials() -> usize {
    KSD_TRIALS
}
fn default_subsample() -> usize {
    KSD_SUBSAMPLE
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            ksd_kernel: default_kernel(),
            ksd_trials: default_trials(),
            ksd_subsample: default_subsample(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub target: TargetSection,
    pub sampler: SamplerSection,
    pub preconditioner: PreconditionerSection,
    #[serde(default)]
    pub warmup: WarmupSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
}

fn default_output_dir() -> String {
    "out".into()
}

impl ExperimentConfig {
    /// Parse and validate a TOML config, returning it together with the
    /// SHA-256 hash of the raw file contents.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<(Self, String)> {
        let raw = std::fs::read_to_string(path.as_ref()).map_err(|source| Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        })?;
        let config: ExperimentConfig = toml::from_str(&raw).map_err(|e| Error::InvalidConfig {
            field: "toml".into(),
            msg: e.to_string(),
        })?;
        config.validate()?;
        let hash = format!("{:x}", Sha256::digest(raw.as_bytes()));
        Ok((config, hash))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| -> Error {
            Error::InvalidConfig {
                field: field.into(),
                msg,
            }
        };
        SamplerKind::parse(&self.sampler.kind)
            .map_err(|_| bad("sampler.kind", format!("unknown sampler {:?}", self.sampler.kind)))?;
        PreconditionerKind::parse(&self.preconditioner.kind).map_err(|_| {
            bad(
                "preconditioner.kind",
                format!("unknown preconditioner {:?}", self.preconditioner.kind),
            )
        })?;
        KsdKernel::parse(&self.diagnostics.ksd_kernel).map_err(|_| {
            bad(
                "diagnostics.ksd_kernel",
                format!("unknown kernel {:?}", self.diagnostics.ksd_kernel),
            )
        })?;
        if self.seeds.is_empty() {
            return Err(bad("seeds", "at least one seed is required".into()));
        }
        if self.warmup.cycles < 1 {
            return Err(bad("warmup.cycles", "must be >= 1".into()));
        }
        if self.warmup.steps_per_cycle < 2 {
            return Err(bad("warmup.steps_per_cycle", "must be >= 2".into()));
        }
        if self.warmup.chains < 1 {
            return Err(bad("warmup.chains", "must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.sampler.target_accept)
            || self.sampler.target_accept == 0.0
        {
            return Err(bad("sampler.target_accept", "must be in (0, 1)".into()));
        }
        if self.sampling.iterations < 4 {
            return Err(bad("sampling.iterations", "must be >= 4".into()));
        }
        self.resolve_target().map(|_| ())
    }

    pub fn resolve_target(&self) -> Result<Box<dyn Target>> {
        let dim = self.target.dim;
        let dataset = || -> Result<&str> {
            self.target.dataset.as_deref().ok_or(Error::InvalidConfig {
                field: "target.dataset".into(),
                msg: format!("target {:?} requires a dataset path", self.target.name),
            })
        };
        match self.target.name.as_str() {
            "funnel" => Ok(Box::new(if dim > 0 {
                Funnel::with_dim(dim)
            } else {
                Funnel::new()
            })),
            "banana" => Ok(Box::new(Banana::new())),
            "gaussian" => Ok(Box::new(StdGaussian::new(if dim > 0 { dim } else { 10 }))),
            "sgc" | "sgc-funnelized" => {
                let (data, raw) = load_credit(dataset()?)?;
                let data = match self.target.truncate {
                    Some(k) => data.truncate(k, &raw)?,
                    None => data,
                };
                Ok(Box::new(SgcModel::new(
                    data,
                    self.target.name == "sgc-funnelized",
                )))
            }
            name if name.starts_with("radon") => {
                let variant = RadonVariant::parse(name)?;
                let mut data = load_radon(dataset()?)?;
                if let Some(k) = self.target.truncate {
                    data = data.truncate(k);
                }
                Ok(Box::new(RadonModel::new(data, variant)))
            }
            other => Err(Error::UnknownVariant(format!("target {other}"))),
        }
    }

    pub fn warmup_config(&self) -> WarmupConfig {
        WarmupConfig {
            cycles: self.warmup.cycles,
            steps_per_cycle: self.warmup.steps_per_cycle,
            chains: self.warmup.chains,
            reservoir_capacity: self.warmup.reservoir_capacity,
            target_accept: self.sampler.target_accept,
            gaussianity_constant: self.preconditioner.constant,
            kind: PreconditionerKind::parse(&self.preconditioner.kind).unwrap(),
            sampler: SamplerKind::parse(&self.sampler.kind).unwrap(),
            n_leapfrog: self.sampler.n_leapfrog,
            initial_step: self.sampler.initial_step,
            max_depth: self.sampler.max_depth,
            train: TrainConfig {
                epochs: self.training.epochs,
                learning_rate: self.training.learning_rate,
                weight_decay: self.training.weight_decay,
                batch_size: self.training.batch_size,
                full_batch_limit: self.training.full_batch_limit,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_toml() -> String {
        r#"
seeds = [1]

[target]
name = "funnel"

[sampler]
kind = "hmc"

[preconditioner]
kind = "factorized"
"#
        .to_string()
    }

    fn write_config(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let f = write_config(&minimal_toml());
        let (config, hash) = ExperimentConfig::load(f.path()).unwrap();
        assert_eq!(config.warmup.cycles, 5);
        assert_eq!(config.warmup.chains, 100);
        assert_eq!(config.training.epochs, 3500);
        assert_eq!(config.sampling.iterations, 1000);
        assert!(!config.sampling.store_draws);
        assert_eq!(hash.len(), 64);
        assert_eq!(config.resolve_target().unwrap().dim(), 10);
    }

    #[test]
    fn unknown_preconditioner_is_a_usage_error() {
        let toml = minimal_toml().replace("factorized", "magic");
        let f = write_config(&toml);
        let err = ExperimentConfig::load(f.path()).unwrap_err();
        assert!(err.to_string().contains("preconditioner.kind"), "{err}");
    }

    #[test]
    fn empty_seeds_rejected() {
        let toml = minimal_toml().replace("seeds = [1]", "seeds = []");
        let f = write_config(&toml);
        let err = ExperimentConfig::load(f.path()).unwrap_err();
        assert!(err.to_string().contains("seeds"), "{err}");
    }

    #[test]
    fn hash_tracks_file_contents() {
        let f1 = write_config(&minimal_toml());
        let f2 = write_config(&(minimal_toml() + "\n# comment\n"));
        let (_, h1) = ExperimentConfig::load(f1.path()).unwrap();
        let (_, h2) = ExperimentConfig::load(f2.path()).unwrap();
        assert_ne!(h1, h2);
    }
}
