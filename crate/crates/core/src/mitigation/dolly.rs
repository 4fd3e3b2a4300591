//! Launch-time cloning: every task is cloned once when first started while
//! the run's cumulative clone work stays inside a fixed budget.

use std::collections::BTreeSet;

use super::{select_node, ActionKind, Directives, JobVerdict, MitigationAction, Policy, PolicyId};
use crate::model::{ClusterState, HostId, JobId, TaskId};

pub struct DollyPolicy {
    /// Clone work allowed over the run, in MI.
    budget: f64,
    spent: f64,
    cloned: BTreeSet<TaskId>,
}

impl DollyPolicy {
    pub fn new(budget: f64) -> Self {
        DollyPolicy {
            budget,
            spent: 0.0,
            cloned: BTreeSet::new(),
        }
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }
}

impl Policy for DollyPolicy {
    fn id(&self) -> PolicyId {
        PolicyId::Dolly
    }

    fn on_task_started(&mut self, state: &ClusterState, task: TaskId, host: HostId, out: &mut Directives) {
        let t = state.task(task);
        if self.cloned.contains(&task) || self.spent + t.length > self.budget {
            return;
        }
        if let Ok(target) = select_node(state, Some(host), t.cpu_req, t.ram_req, t.disk_req) {
            self.cloned.insert(task);
            self.spent += t.length;
            out.actions.push(MitigationAction::new(ActionKind::Clone, task, target));
        }
    }

    fn on_job_complete(&mut self, state: &ClusterState, job: JobId) -> JobVerdict {
        let flagged = state
            .job(job)
            .map(|j| j.tasks.iter().copied().filter(|t| self.cloned.contains(t)).collect())
            .unwrap_or_default();
        JobVerdict {
            flagged,
            ..JobVerdict::default()
        }
    }
}
