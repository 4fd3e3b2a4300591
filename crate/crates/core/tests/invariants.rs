use proptest::prelude::*;
use straggler_sim::config::SimConfig;
use straggler_sim::experiment;
use straggler_sim::model::TaskState;
use straggler_sim::mitigation::PolicyId;

fn small(seed: u64, faults: bool) -> SimConfig {
    let mut cfg = SimConfig {
        seed,
        n_vms: 6,
        horizon_intervals: 10,
        ..SimConfig::default()
    };
    cfg.faults.enabled = faults;
    cfg.faults.time_unit_intervals = 2.0;
    cfg
}

fn policy() -> impl Strategy<Value = PolicyId> {
    prop::sample::select(vec![
        PolicyId::None,
        PolicyId::Reactive,
        PolicyId::NearestFit,
        PolicyId::Dolly,
        PolicyId::Wrangler,
    ])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_task_ends_once_and_power_is_bounded(seed in 0u64..1_000, faults in any::<bool>(), p in policy()) {
        let cfg = small(seed, faults);
        let trace = experiment::load_trace(&cfg).unwrap();
        let (report, out) = experiment::run_policy(&cfg, &trace, p, None).unwrap();
        prop_assert_eq!(out.state.tasks.len(), trace.len());
        let completed = out.state.tasks.values().filter(|t| t.state == TaskState::Completed).count() as u64;
        // exactly one accepted result per completed task, even with copies
        prop_assert_eq!(report.aggregates.tasks_completed, completed);
        for t in out.state.tasks.values() {
            if let (Some(start), Some(done)) = (t.start_time, t.completion_time) {
                prop_assert!(done >= start && start >= t.submit_time);
            }
        }
        let hosts = cfg.hosts().unwrap();
        for interval in &out.host_energy {
            for (e, h) in interval.iter().zip(&hosts) {
                let w = e / cfg.interval_seconds;
                prop_assert!(w >= h.power_min - 1e-9 && w <= h.power_max + 1e-9, "{}", w);
            }
        }
        prop_assert_eq!(report.series.len() as u64, cfg.horizon_intervals);
        if let Some(rate) = report.aggregates.sla_violation_rate {
            prop_assert!((0.0..=1.0).contains(&rate));
        }
    }

    #[test]
    fn host_faults_do_not_depend_on_policy(seed in 0u64..1_000, p in policy()) {
        let cfg = small(seed, true);
        let trace = experiment::load_trace(&cfg).unwrap();
        let hosts = |p| {
            let (_, o) = experiment::run_policy(&cfg, &trace, p, None).unwrap();
            o.faults.into_iter().filter(|f| f.kind == "host").collect::<Vec<_>>()
        };
        prop_assert_eq!(hosts(PolicyId::None), hosts(p));
    }
}
