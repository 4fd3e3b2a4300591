//! Confidence-gated placement: hold back tasks headed for hosts whose
//! straggler moving average is near the fleet maximum.

use std::collections::BTreeMap;

use super::{Policy, PolicyId};
use crate::model::{ClusterState, HostId, TaskId};

pub struct WranglerPolicy {
    threshold: f64,
    max_delays: u32,
    delays: BTreeMap<TaskId, u32>,
}

impl WranglerPolicy {
    pub fn new(threshold: f64, max_delays: u32) -> Self {
        WranglerPolicy {
            threshold,
            max_delays,
            delays: BTreeMap::new(),
        }
    }

    pub fn delays(&self, task: TaskId) -> u32 {
        self.delays.get(&task).copied().unwrap_or(0)
    }

    /// Host EMA scaled by the fleet maximum; 0 when no host has stragglers.
    pub fn confidence(state: &ClusterState, host: HostId) -> f64 {
        let max = state.straggler_ema_per_host.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            state.straggler_ema_per_host[host.0] / max
        } else {
            0.0
        }
    }
}

impl Policy for WranglerPolicy {
    fn id(&self) -> PolicyId {
        PolicyId::Wrangler
    }

    fn admit(&mut self, state: &ClusterState, task: TaskId, host: HostId) -> bool {
        let used = self.delays.entry(task).or_insert(0);
        if *used < self.max_delays && Self::confidence(state, host) > self.threshold {
            *used += 1;
            log::debug!("wrangler: delaying {task} away from {host} ({used} so far)");
            return false;
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{add_job, cluster};

    #[test]
    fn delays_on_confident_hosts_up_to_the_cap() {
        let mut s = cluster(2, 10);
        let job = add_job(&mut s, 1, 1);
        let t = s.jobs[&job].tasks[0];
        let mut p = WranglerPolicy::new(0.7, 3);
        assert!(p.admit(&s, t, HostId(0)), "all confidences zero");

        s.straggler_ema_per_host = vec![0.9, 1.0];
        assert!((WranglerPolicy::confidence(&s, HostId(0)) - 0.9).abs() < 1e-12);
        for n in 1..=3 {
            assert!(!p.admit(&s, t, HostId(0)));
            assert_eq!(p.delays(t), n);
        }
        assert!(p.admit(&s, t, HostId(0)), "placed after three delays");

        s.straggler_ema_per_host = vec![0.5, 1.0];
        let mut fresh = WranglerPolicy::new(0.7, 3);
        assert!(fresh.admit(&s, t, HostId(0)));
    }
}
