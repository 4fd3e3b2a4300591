//! Trains the predictor on the straggler-heavy scenario, then runs every
//! policy on the same trace and prints the comparison table.

use straggler_sim::config::SimConfig;
use straggler_sim::experiment::{self, LoadedConfig};
use straggler_sim::mitigation::PolicyId;

fn main() -> straggler_sim::Result<()> {
    let cfg = SimConfig::from_toml(include_str!("../configs/straggler_heavy.toml"))?;
    let loaded = LoadedConfig::from_config(cfg)?;
    let out = std::env::temp_dir().join("straggler_sim_compare");
    let trace = experiment::load_trace(&loaded.config)?;
    let ckpt = out.join("predictor.ckpt");
    let trained = experiment::cmd_train(&loaded, &trace, &out, Some(&ckpt))?;
    println!("trained on {} windows -> {}", trained.examples, trained.checkpoint.display());

    let rows = experiment::cmd_compare(&loaded, &PolicyId::ALL, &out, Some(&trained.checkpoint))?;
    println!("{:<10} {:>6} {:>12} {:>8} {:>12} {:>5}", "policy", "jobs", "completion", "sla", "energy", "mit");
    for r in &rows {
        println!(
            "{:<10} {:>6} {:>12.1} {:>8.3} {:>12.4e} {:>5}",
            r.policy,
            r.jobs_completed,
            r.mean_job_completion.unwrap_or(f64::NAN),
            r.sla_violation_rate.unwrap_or(f64::NAN),
            r.energy_total,
            r.mitigations
        );
    }
    println!("table -> {}", out.join("compare.csv").display());
    Ok(())
}
