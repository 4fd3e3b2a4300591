//! Detection-then-mitigation control: speculate a task once its running
//! time exceeds a multiple of the median run time of its finished siblings.

use std::collections::{BTreeMap, BTreeSet};

use super::{relocation_target, ActionKind, Directives, JobVerdict, MitigationAction, Policy, PolicyId};
use crate::model::{ClusterState, JobId, TaskId, TaskState};

pub struct ReactivePolicy {
    factor: f64,
    speculated: BTreeSet<TaskId>,
    /// Wake-up time already requested per task.
    armed: BTreeMap<TaskId, f64>,
}

impl ReactivePolicy {
    pub fn new(factor: f64) -> Self {
        ReactivePolicy {
            factor,
            speculated: BTreeSet::new(),
            armed: BTreeMap::new(),
        }
    }

    fn median(mut xs: Vec<f64>) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        if n % 2 == 1 {
            xs[n / 2]
        } else {
            (xs[n / 2 - 1] + xs[n / 2]) / 2.0
        }
    }

    fn check_job(&mut self, state: &ClusterState, job: JobId, out: &mut Directives) {
        let Ok(j) = state.job(job) else { return };
        let finished: Vec<f64> = j
            .tasks
            .iter()
            .map(|t| state.task(*t))
            .filter(|t| t.state == TaskState::Completed)
            .filter_map(|t| Some(t.completion_time? - t.start_time?))
            .collect();
        if finished.len() < 2 {
            return;
        }
        let limit = self.factor * Self::median(finished);
        for &id in &j.tasks {
            let t = state.task(id);
            if t.state != TaskState::Running || self.speculated.contains(&id) {
                continue;
            }
            let Some(start) = t.start_time else { continue };
            let due = start + limit;
            if state.now >= due {
                if let Some(host) = relocation_target(state, id) {
                    self.speculated.insert(id);
                    out.actions.push(MitigationAction::new(ActionKind::Speculate, id, host));
                }
            } else if self.armed.get(&id) != Some(&due) {
                self.armed.insert(id, due);
                out.wakeups.push((due, job));
            }
        }
    }
}

impl Policy for ReactivePolicy {
    fn id(&self) -> PolicyId {
        PolicyId::Reactive
    }

    fn on_wake(&mut self, state: &ClusterState, job: JobId, out: &mut Directives) -> crate::Result<()> {
        self.check_job(state, job, out);
        Ok(())
    }

    fn on_task_complete(&mut self, state: &ClusterState, task: TaskId, out: &mut Directives) {
        self.check_job(state, state.task(task).job_id, out);
    }

    fn on_job_complete(&mut self, state: &ClusterState, job: JobId) -> JobVerdict {
        let flagged = state
            .job(job)
            .map(|j| {
                for t in &j.tasks {
                    self.armed.remove(t);
                }
                j.tasks.iter().copied().filter(|t| self.speculated.remove(t)).collect()
            })
            .unwrap_or_default();
        JobVerdict {
            flagged,
            ..JobVerdict::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitigation::tests::{finish, run_on};
    use crate::model::tests::{add_job, cluster};
    use crate::model::HostId;

    #[test]
    fn speculates_slow_sibling() {
        let mut s = cluster(3, 10);
        let job = add_job(&mut s, 1, 3);
        let ids = s.jobs[&job].tasks.clone();
        for t in &ids {
            run_on(&mut s, *t, 0, 0.0);
        }
        let mut p = ReactivePolicy::new(1.5);
        let mut out = Directives::default();
        finish(&mut s, ids[0], 100.0);
        s.now = 100.0;
        p.on_task_complete(&s, ids[0], &mut out);
        assert!(out.is_empty(), "one finished sibling is not enough");

        finish(&mut s, ids[1], 120.0);
        s.now = 120.0;
        p.on_task_complete(&s, ids[1], &mut out);
        assert!(out.actions.is_empty());
        assert_eq!(out.wakeups, vec![(165.0, job)]);

        s.now = 200.0;
        let mut out = Directives::default();
        p.on_wake(&s, job, &mut out).unwrap();
        assert_eq!(out.actions, vec![MitigationAction::new(ActionKind::Speculate, ids[2], HostId(1))]);

        let mut out = Directives::default();
        p.on_wake(&s, job, &mut out).unwrap();
        assert!(out.is_empty(), "speculates a task once");
    }

    #[test]
    fn fast_tasks_never_trigger() {
        let mut s = cluster(2, 10);
        let job = add_job(&mut s, 1, 4);
        let ids = s.jobs[&job].tasks.clone();
        let mut p = ReactivePolicy::new(1.5);
        let mut out = Directives::default();
        for (i, t) in ids.iter().enumerate() {
            run_on(&mut s, *t, 0, 0.0);
            s.now = 100.0 + i as f64;
            let now = s.now;
            finish(&mut s, *t, now);
            p.on_task_complete(&s, *t, &mut out);
        }
        assert!(out.actions.is_empty());
    }

    #[test]
    fn wakeups_are_requested_once_per_deadline() {
        let mut s = cluster(3, 10);
        let job = add_job(&mut s, 1, 4);
        let ids = s.jobs[&job].tasks.clone();
        for t in &ids {
            run_on(&mut s, *t, 0, 0.0);
        }
        let mut p = ReactivePolicy::new(1.5);
        finish(&mut s, ids[0], 100.0);
        finish(&mut s, ids[1], 100.0);
        s.now = 100.0;
        let mut out = Directives::default();
        p.on_task_complete(&s, ids[1], &mut out);
        assert_eq!(out.wakeups, vec![(150.0, job), (150.0, job)]);

        let mut again = Directives::default();
        p.on_wake(&s, job, &mut again).unwrap();
        assert!(again.is_empty(), "{again:?}");

        // exactly at the limit counts as slow
        s.now = 150.0;
        p.on_wake(&s, job, &mut again).unwrap();
        assert_eq!(again.actions.len(), 2);
        assert!(again.wakeups.is_empty());
    }
}
