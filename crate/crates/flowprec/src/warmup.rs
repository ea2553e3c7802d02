//! Cycle-based warmup: per-chain dual-averaging step-size tuning in the
//! first half of each cycle, reservoir collection of target-space draws
//! in the second half, and a preconditioner refit between cycles on the
//! identity -> diagonal -> configured-kind schedule.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::flows::factorized::build_factorized;
use crate::flows::linear::{dense_fit, diagonal_fit};
use crate::flows::precond::{Preconditioner, PreconditionerKind};
use crate::flows::rnvp::rnvp_build;
use crate::samplers::{
    hmc_step, nuts_step, ChainState, DualAveraging, SamplerKind, DEFAULT_INITIAL_STEP,
    DEFAULT_MAX_DEPTH, DEFAULT_N_LEAPFROG, DEFAULT_TARGET_ACCEPT,
};
use crate::targets::Target;
use crate::training::{fit_flow, AdamW, TrainConfig};

/// Fixed-capacity uniform reservoir of target-space training points.
#[derive(Debug, Clone)]
pub struct Reservoir {
    pub capacity: usize,
    pub items: Vec<Vec<f64>>,
    pub seen: usize,
}

impl Reservoir {
    pub fn new(capacity: usize) -> Self {
        Reservoir {
            capacity,
            items: Vec::with_capacity(capacity),
            seen: 0,
        }
    }

    /// Classic reservoir rule: item number N is kept with probability
    /// r/N, overwriting a uniformly random slot, so every offered item is
    /// retained with probability exactly r/N.
    pub fn offer(&mut self, x: Vec<f64>, rng: &mut impl Rng) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(x);
        } else if rng.gen::<f64>() < self.capacity as f64 / self.seen as f64 {
            let slot = rng.gen_range(0..self.capacity);
            self.items[slot] = x;
        }
    }
}

#[derive(Debug, Clone)]
pub struct WarmupConfig {
    pub cycles: usize,
    pub steps_per_cycle: usize,
    pub chains: usize,
    pub reservoir_capacity: usize,
    pub target_accept: f64,
    pub gaussianity_constant: f64,
    /// Preconditioner refit kind from cycle 3 onward.
    pub kind: PreconditionerKind,
    pub sampler: SamplerKind,
    pub n_leapfrog: usize,
    pub initial_step: f64,
    pub max_depth: usize,
    pub train: TrainConfig,
}

impl Default for WarmupConfig {
    fn default() -> Self {
        WarmupConfig {
            cycles: 5,
            steps_per_cycle: 1000,
            chains: 100,
            reservoir_capacity: 15_000,
            target_accept: DEFAULT_TARGET_ACCEPT,
            gaussianity_constant: 0.1,
            kind: PreconditionerKind::Factorized,
            sampler: SamplerKind::Hmc,
            n_leapfrog: DEFAULT_N_LEAPFROG,
            initial_step: DEFAULT_INITIAL_STEP,
            max_depth: DEFAULT_MAX_DEPTH,
            train: TrainConfig::default(),
        }
    }
}

/// One JSON-lines record per warmup cycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmupLogEntry {
    pub cycle: usize,
    pub preconditioner: String,
    /// Frozen per-chain step sizes at the end of the cycle.
    pub epsilons: Vec<f64>,
    pub accept_rate_tuning: f64,
    pub accept_rate_collect: f64,
    pub reservoir_size: usize,
    /// Size of the Gaussian set after a factorized refit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gaussian_set_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

/// Parallel chains with per-chain RNG streams and dual-averaging state.
pub struct Ensemble {
    pub states: Vec<ChainState>,
    pub rngs: Vec<ChaCha8Rng>,
    pub dual: Vec<DualAveraging>,
}

/// Chains start at latent positions Uniform(-2, 2)^dim, each with an
/// independent RNG stream derived from the master seed.
pub fn init_ensemble(
    target: &dyn Target,
    precond: &Preconditioner,
    config: &WarmupConfig,
    master_seed: u64,
) -> Ensemble {
    let dim = target.dim();
    let mut states = Vec::with_capacity(config.chains);
    let mut rngs = Vec::with_capacity(config.chains);
    let mut dual = Vec::with_capacity(config.chains);
    for chain in 0..config.chains {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(chain as u64 + 1);
        let z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        states.push(ChainState::new(precond, target, z));
        rngs.push(rng);
        dual.push(DualAveraging::new(config.initial_step, config.target_accept));
    }
    Ensemble { states, rngs, dual }
}

fn advance_chain(
    target: &dyn Target,
    precond: &Preconditioner,
    config: &WarmupConfig,
    state: &mut ChainState,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> bool {
    match config.sampler {
        SamplerKind::Hmc => {
            hmc_step(precond, target, state, eps, config.n_leapfrog, rng).accept_flag
        }
        SamplerKind::Nuts => {
            nuts_step(precond, target, state, eps, config.max_depth, rng).accept_flag
        }
    }
}

/// Internal trainer state persisted across cycles for the plain-RNVP
/// schedule (parameters and optimizer moments carry over; the factorized
/// kind is rebuilt from scratch each cycle).
struct RnvpTrainer {
    flow: Option<crate::flows::rnvp::Rnvp>,
    opt: Option<AdamW>,
}

#[allow(clippy::too_many_arguments)]
fn refit(
    kind: PreconditionerKind,
    reservoir: &Reservoir,
    config: &WarmupConfig,
    trainer: &mut RnvpTrainer,
    train_rng: &mut ChaCha8Rng,
    g_size: &mut Option<usize>,
    fit_loss: &mut Option<f64>,
) -> Result<Preconditioner> {
    match kind {
        PreconditionerKind::Identity => Ok(Preconditioner::identity(
            reservoir.items.first().map_or(0, |x| x.len()),
        )),
        PreconditionerKind::Diagonal => Ok(Preconditioner::Linear {
            map: diagonal_fit(&reservoir.items)?,
            diagonal: true,
        }),
        PreconditionerKind::Dense => Ok(Preconditioner::Linear {
            map: dense_fit(&reservoir.items)?,
            diagonal: false,
        }),
        PreconditionerKind::Rnvp => {
            let dim = reservoir.items[0].len();
            if trainer.flow.is_none() {
                let flow = rnvp_build(dim, 0, 2)?;
                trainer.opt = Some(AdamW::new(
                    flow.n_params(),
                    config.train.learning_rate,
                    config.train.weight_decay,
                ));
                trainer.flow = Some(flow);
            }
            let flow = trainer.flow.as_mut().unwrap();
            let opt = trainer.opt.as_mut().unwrap();
            let report = fit_flow(flow, &reservoir.items, &[], &config.train, opt, train_rng)?;
            if report.diverged {
                eprintln!("warning: rnvp training diverged; keeping best parameters");
            }
            *fit_loss = Some(report.best_loss);
            Ok(Preconditioner::Rnvp(flow.clone()))
        }
        PreconditionerKind::Factorized => {
            let mut fp = build_factorized(&reservoir.items, config.gaussianity_constant)?;
            *g_size = Some(fp.report.gaussian_set.len());
            if let Some(flow) = fp.conditional.as_mut() {
                let (g_rows, h_rows) = {
                    let mut gs = Vec::with_capacity(reservoir.items.len());
                    let mut hs = Vec::with_capacity(reservoir.items.len());
                    for row in &reservoir.items {
                        gs.push(
                            fp.report
                                .gaussian_set
                                .iter()
                                .map(|&i| row[i])
                                .collect::<Vec<f64>>(),
                        );
                        hs.push(
                            fp.report
                                .complement_set
                                .iter()
                                .map(|&i| row[i])
                                .collect::<Vec<f64>>(),
                        );
                    }
                    (gs, hs)
                };
                let mut opt = AdamW::new(
                    flow.n_params(),
                    config.train.learning_rate,
                    config.train.weight_decay,
                );
                let report = fit_flow(flow, &h_rows, &g_rows, &config.train, &mut opt, train_rng)?;
                if report.diverged {
                    eprintln!("warning: conditional flow training diverged; keeping best parameters");
                }
                *fit_loss = Some(report.best_loss);
            }
            Ok(Preconditioner::Factorized(fp))
        }
    }
}

/// Algorithm-1 warmup. Returns the tuned ensemble, the final
/// preconditioner (never refit after the last cycle), the reservoir, and
/// one log entry per cycle.
pub fn run_warmup(
    target: &dyn Target,
    config: &WarmupConfig,
    master_seed: u64,
) -> Result<(Ensemble, Preconditioner, Reservoir, Vec<WarmupLogEntry>)> {
    assert!(config.cycles >= 1 && config.steps_per_cycle >= 2);
    let mut precond = Preconditioner::identity(target.dim());
    let mut ensemble = init_ensemble(target, &precond, config, master_seed);
    let mut reservoir = Reservoir::new(config.reservoir_capacity);
    let mut reservoir_rng = ChaCha8Rng::seed_from_u64(master_seed);
    // Streams above the chain range keep reservoir and training draws
    // independent of every chain stream.
    reservoir_rng.set_stream(u64::MAX);
    let mut train_rng = ChaCha8Rng::seed_from_u64(master_seed);
    train_rng.set_stream(u64::MAX - 1);
    let mut trainer = RnvpTrainer {
        flow: None,
        opt: None,
    };
    let mut log = Vec::with_capacity(config.cycles);

    let n = config.steps_per_cycle;
    let tune_steps = n.div_ceil(2);
    for cycle in 1..=config.cycles {
        let mut accepts_tune = 0usize;
        let mut accepts_collect = 0usize;
        for i in 1..=n {
            let tuning = i <= tune_steps;
            for chain in 0..config.chains {
                let eps = if tuning {
                    ensemble.dual[chain].current_eps()
                } else {
                    ensemble.dual[chain].frozen_eps()
                };
                let accepted = advance_chain(
                    target,
                    &precond,
                    config,
                    &mut ensemble.states[chain],
                    eps,
                    &mut ensemble.rngs[chain],
                );
                if tuning {
                    ensemble.dual[chain].update(accepted);
                    accepts_tune += accepted as usize;
                } else {
                    accepts_collect += accepted as usize;
                    reservoir.offer(ensemble.states[chain].x.clone(), &mut reservoir_rng);
                }
            }
        }

        let mut entry = WarmupLogEntry {
            cycle,
            preconditioner: precond.kind().name().to_string(),
            epsilons: ensemble.dual.iter().map(|d| d.frozen_eps()).collect(),
            accept_rate_tuning: accepts_tune as f64 / (tune_steps * config.chains) as f64,
            accept_rate_collect: accepts_collect as f64
                / ((n - tune_steps) * config.chains).max(1) as f64,
            reservoir_size: reservoir.items.len(),
            gaussian_set_size: None,
            fit_loss: None,
            fallback: None,
        };

        // Never refit after the last cycle.
        if cycle < config.cycles {
            let next_kind = if cycle == 1 {
                PreconditionerKind::Diagonal
            } else {
                config.kind
            };
            match refit(
                next_kind,
                &reservoir,
                config,
                &mut trainer,
                &mut train_rng,
                &mut entry.gaussian_set_size,
                &mut entry.fit_loss,
            ) {
                Ok(new_precond) => {
                    // Remap chain states: z_new = f_new(f_old^-1(z_old)),
                    // using the cached target-space point.
                    let mut ok = true;
                    let mut new_states = Vec::with_capacity(config.chains);
                    for state in &ensemble.states {
                        match new_precond.to_latent(&state.x) {
                            Ok(z) => {
                                new_states.push(ChainState::new(&new_precond, target, z))
                            }
                            Err(e) => {
                                entry.fallback =
                                    Some(format!("state remap failed: {e}; keeping previous"));
                                ok = false;
                                break;
                            }
                        }
                    }
                    if ok {
                        ensemble.states = new_states;
                        precond = new_precond;
                    }
                }
                Err(e) => {
                    entry.fallback = Some(format!("fit failed: {e}; keeping previous"));
                }
            }
        }
        log.push(entry);
    }
    Ok((ensemble, precond, reservoir, log))
}

/// Post-warmup sampling with frozen step sizes and preconditioner.
/// Returns target-space draws indexed [chain][iteration][dim], one per
/// visited state, no thinning.
pub fn run_sampling(
    ensemble: &mut Ensemble,
    precond: &Preconditioner,
    target: &dyn Target,
    config: &WarmupConfig,
    iterations: usize,
) -> Vec<Vec<Vec<f64>>> {
    let mut draws: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(iterations); ensemble.states.len()];
    for _ in 0..iterations {
        for chain in 0..ensemble.states.len() {
            let eps = ensemble.dual[chain].frozen_eps();
            advance_chain(
                target,
                precond,
                config,
                &mut ensemble.states[chain],
                eps,
                &mut ensemble.rngs[chain],
            );
            draws[chain].push(ensemble.states[chain].x.clone());
        }
    }
    draws
}
