//! Generates a workload trace and shows the injected fault timeline. Host
//! faults come from their own random stream, so they are identical under
//! every policy.

use straggler_sim::config::SimConfig;
use straggler_sim::experiment;
use straggler_sim::mitigation::PolicyId;

fn main() -> straggler_sim::Result<()> {
    let cfg = SimConfig::from_toml(include_str!("../configs/straggler_heavy.toml"))?;
    let trace = experiment::load_trace(&cfg)?;
    let jobs = trace.iter().map(|r| r.job_id).collect::<std::collections::BTreeSet<_>>().len();
    let deadline = trace.iter().filter(|r| r.deadline_driven).count();
    println!("{} tasks in {jobs} jobs, {deadline} tasks in deadline-driven jobs", trace.len());

    let (_, none) = experiment::run_policy(&cfg, &trace, PolicyId::None, None)?;
    let (_, dolly) = experiment::run_policy(&cfg, &trace, PolicyId::Dolly, None)?;
    let hosts = |faults: &[straggler_sim::sim::FaultRecord]| {
        faults.iter().filter(|f| f.kind == "host").cloned().collect::<Vec<_>>()
    };
    for f in hosts(&none.faults).iter().take(10) {
        println!("{:>9.1} s  host fault on h{}", f.time, f.target);
    }
    println!(
        "host faults: none {}, dolly {}, same timeline: {}",
        hosts(&none.faults).len(),
        hosts(&dolly.faults).len(),
        hosts(&none.faults) == hosts(&dolly.faults)
    );
    for kind in ["task", "vm_creation"] {
        let n = |o: &straggler_sim::sim::SimOutcome| o.faults.iter().filter(|f| f.kind == kind).count();
        println!("{kind} faults: none {}, dolly {}", n(&none), n(&dolly));
    }
    Ok(())
}
