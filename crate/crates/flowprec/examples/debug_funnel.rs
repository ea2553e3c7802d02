//! Scratch diagnostic: per-chain x0 behavior on the funnel per preconditioner.

use flowprec::config::ExperimentConfig;
use flowprec::warmup::{run_sampling, run_warmup};

fn main() {
    let kind = std::env::args().nth(1).unwrap_or_else(|| "diagonal".into());
    let epochs: usize = std::env::args()
        .nth(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(1500);
    let src = format!(
        r#"
seeds = [1]
[target]
name = "funnel"
[sampler]
kind = "hmc"
[preconditioner]
kind = "{kind}"
[warmup]
chains = 32
cycles = 5
steps_per_cycle = 1000
reservoir_capacity = 15000
[training]
epochs = {epochs}
[sampling]
iterations = 1000
"#
    );
    let config: ExperimentConfig = toml::from_str(&src).unwrap();
    let target = config.resolve_target().unwrap();
    let wcfg = config.warmup_config();
    let (mut ensemble, precond, _, log) = run_warmup(target.as_ref(), &wcfg, 1).unwrap();
    for entry in &log {
        println!(
            "cycle {} precond {} tune_acc {:.3} collect_acc {:.3}",
            entry.cycle, entry.preconditioner, entry.accept_rate_tuning, entry.accept_rate_collect
        );
    }
    let draws = run_sampling(&mut ensemble, &precond, target.as_ref(), &wcfg, 1000);
    let mut total_neg = 0usize;
    for (c, chain) in draws.iter().enumerate() {
        let xs: Vec<f64> = chain.iter().map(|x| x[0]).collect();
        let neg = xs.iter().filter(|&&v| v < 0.0).count();
        total_neg += neg;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "chain {c:2} eps {:.2e} x0 mean {mean:6.2} min {min:6.2} max {max:6.2} frac_neg {:.2}",
            ensemble.dual[c].frozen_eps(),
            neg as f64 / xs.len() as f64
        );
    }
    println!(
        "pooled frac_neg {:.3}",
        total_neg as f64 / (32.0 * 1000.0)
    );
}
