//! One desk-scale run without mitigation, printing the per-interval series
//! head and the aggregate report.

use straggler_sim::config::SimConfig;
use straggler_sim::experiment;
use straggler_sim::mitigation::PolicyId;

fn main() -> straggler_sim::Result<()> {
    let cfg = SimConfig::from_toml(include_str!("../configs/desk.toml"))?;
    let trace = experiment::load_trace(&cfg)?;
    println!("{} tasks over {} intervals on {} hosts", trace.len(), cfg.horizon_intervals, cfg.n_vms);
    let (report, outcome) = experiment::run_policy(&cfg, &trace, PolicyId::None, None)?;
    println!("interval  energy(Ws)  cpu%   queued running online");
    for s in report.series.iter().take(8) {
        println!(
            "{:>8} {:>11.0} {:>5.1} {:>8} {:>7} {:>6}",
            s.interval_index, s.energy, s.cpu_util, s.queued, s.running, s.online_hosts
        );
    }
    println!("{} faults injected", outcome.faults.len());
    println!("{}", serde_json::to_string_pretty(&report.aggregates)?);
    Ok(())
}
