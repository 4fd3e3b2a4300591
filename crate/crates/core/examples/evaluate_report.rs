//! Writes a report and its series CSV, then recomputes the aggregates from
//! the CSV and shows that a tampered series is caught.

use straggler_sim::config::SimConfig;
use straggler_sim::experiment::{self, LoadedConfig};
use straggler_sim::metrics;
use straggler_sim::mitigation::PolicyId;

fn main() -> straggler_sim::Result<()> {
    let mut cfg = SimConfig::from_toml(include_str!("../configs/desk.toml"))?;
    cfg.policy = PolicyId::Reactive;
    let loaded = LoadedConfig::from_config(cfg)?;
    let out = std::env::temp_dir().join("straggler_sim_evaluate");
    let sim = experiment::cmd_simulate(&loaded, &out, None)?;
    let agg = experiment::cmd_evaluate(&sim.report_path, Some(&sim.series_path))?;
    println!("recomputed from {}: {} jobs, energy {:.4e}", sim.series_path.display(), agg.jobs_completed, agg.energy_total);

    let mut series = metrics::read_series_csv(&sim.series_path)?;
    series[0].energy += 1.0;
    let tampered = out.join("tampered_series.csv");
    metrics::write_series_csv(&series, &tampered)?;
    match experiment::cmd_evaluate(&sim.report_path, Some(&tampered)) {
        Ok(_) => println!("tampered series was not detected"),
        Err(e) => println!("tampered series rejected: {}", e.to_string().lines().next().unwrap_or("")),
    }
    Ok(())
}
