//! Straggler policies behind one hook interface driven by the engine.
//!
//! Policies see the cluster read-only and answer with [`Directives`]:
//! mitigation actions to apply now and times at which they want to be woken
//! for a job. Placement vetoes go through [`Policy::admit`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterState, HostId, JobId, TaskId};
use crate::predictor::Predictor;

mod dolly;
mod nearestfit;
mod reactive;
mod start;
mod wrangler;

pub use dolly::DollyPolicy;
pub use nearestfit::{fit_power_law, NearestFitPolicy, PowerLaw};
pub use reactive::ReactivePolicy;
pub use start::{StartConfig, StartPolicy};
pub use wrangler::WranglerPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyId {
    Start,
    None,
    Reactive,
    NearestFit,
    Dolly,
    Wrangler,
}

impl PolicyId {
    pub const ALL: [PolicyId; 6] = [
        PolicyId::Start,
        PolicyId::None,
        PolicyId::Reactive,
        PolicyId::NearestFit,
        PolicyId::Dolly,
        PolicyId::Wrangler,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyId::Start => "start",
            PolicyId::None => "none",
            PolicyId::Reactive => "reactive",
            PolicyId::NearestFit => "nearestfit",
            PolicyId::Dolly => "dolly",
            PolicyId::Wrangler => "wrangler",
        }
    }
}

impl fmt::Display for PolicyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    None,
    /// Run a copy elsewhere; the first finisher wins.
    Speculate,
    /// Cancel the current run and restart fresh elsewhere.
    Rerun,
    DelayStart,
    /// Speculation issued at launch time.
    Clone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MitigationAction {
    pub kind: ActionKind,
    pub task: TaskId,
    pub target: Option<HostId>,
}

impl MitigationAction {
    pub fn new(kind: ActionKind, task: TaskId, target: HostId) -> Self {
        MitigationAction {
            kind,
            task,
            target: Some(target),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Directives {
    pub actions: Vec<MitigationAction>,
    /// (absolute time, job) wake-up requests.
    pub wakeups: Vec<(f64, JobId)>,
}

impl Directives {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty() && self.wakeups.is_empty()
    }
}

/// What a policy claimed about a finished job, for MAPE and F1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JobVerdict {
    pub predicted_stragglers: Option<f64>,
    /// Tasks the policy treated as stragglers.
    pub flagged: Vec<TaskId>,
    /// Straggler multiplier the prediction used, if any.
    pub k: Option<f64>,
}

pub trait Policy {
    fn id(&self) -> PolicyId;

    fn on_job_arrival(&mut self, _state: &ClusterState, _job: JobId, _out: &mut Directives) -> Result<()> {
        Ok(())
    }

    fn on_wake(&mut self, _state: &ClusterState, _job: JobId, _out: &mut Directives) -> Result<()> {
        Ok(())
    }

    /// False delays placing `task` on `host` to a later interval.
    fn admit(&mut self, _state: &ClusterState, _task: TaskId, _host: HostId) -> bool {
        true
    }

    fn on_task_started(&mut self, _state: &ClusterState, _task: TaskId, _host: HostId, _out: &mut Directives) {}

    fn on_task_complete(&mut self, _state: &ClusterState, _task: TaskId, _out: &mut Directives) {}

    fn on_interval(&mut self, _state: &ClusterState, _out: &mut Directives) {}

    fn on_job_complete(&mut self, _state: &ClusterState, _job: JobId) -> JobVerdict {
        JobVerdict::default()
    }
}

/// Baseline without any mitigation.
#[derive(Debug, Default)]
pub struct NoMitigation;

impl Policy for NoMitigation {
    fn id(&self) -> PolicyId {
        PolicyId::None
    }
}

/// The online host other than `exclude` with room for the demand and the
/// lowest straggler moving average; ties go to the lowest id. Room includes
/// spare CPU for the full `cpu` rate, since a copy that would be throttled or
/// would slow the host's resident tasks cannot help.
pub fn select_node(state: &ClusterState, exclude: Option<HostId>, cpu: f64, ram: f64, disk: f64) -> Result<HostId> {
    state
        .hosts
        .iter()
        .filter(|h| {
            h.online && Some(h.id) != exclude && h.cpu_used + cpu <= h.cpu_capacity * (1.0 + 1e-12) && h.fits(ram, disk)
        })
        .min_by(|a, b| {
            state.straggler_ema_per_host[a.id.0]
                .total_cmp(&state.straggler_ema_per_host[b.id.0])
                .then(a.id.cmp(&b.id))
        })
        .map(|h| h.id)
        .ok_or(Error::NoEligibleHost)
}

/// Target for moving `task` off its current host, if any host qualifies.
pub(crate) fn relocation_target(state: &ClusterState, task: TaskId) -> Option<HostId> {
    let t = state.task(task);
    select_node(state, t.assigned_host, t.cpu_req, t.ram_req, t.disk_req).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyParams {
    pub start: StartConfig,
    /// Running time over sibling median that triggers reactive speculation.
    pub reactive_factor: f64,
    /// Predicted duration over job mean that triggers speculation.
    pub nearestfit_factor: f64,
    /// Clone budget as a fraction of fleet capacity-seconds.
    pub dolly_budget_fraction: f64,
    pub wrangler_threshold: f64,
    pub wrangler_max_delays: u32,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            start: StartConfig::default(),
            reactive_factor: 1.5,
            nearestfit_factor: 1.5,
            dolly_budget_fraction: 0.05,
            wrangler_threshold: 0.7,
            wrangler_max_delays: 3,
        }
    }
}

/// `fleet_capacity_seconds` is Σ host MIPS × run length in seconds, the
/// denominator of the clone budget.
pub fn build_policy(
    id: PolicyId,
    params: &PolicyParams,
    predictor: Option<Predictor>,
    fleet_capacity_seconds: f64,
) -> Result<Box<dyn Policy>> {
    Ok(match id {
        PolicyId::None => Box::new(NoMitigation),
        PolicyId::Start => {
            let p = predictor.ok_or_else(|| Error::Checkpoint("policy start needs a trained checkpoint".into()))?;
            Box::new(StartPolicy::new(p, params.start.clone())?)
        }
        PolicyId::Reactive => Box::new(ReactivePolicy::new(params.reactive_factor)),
        PolicyId::NearestFit => Box::new(NearestFitPolicy::new(params.nearestfit_factor)),
        PolicyId::Dolly => Box::new(DollyPolicy::new(params.dolly_budget_fraction * fleet_capacity_seconds)),
        PolicyId::Wrangler => Box::new(WranglerPolicy::new(params.wrangler_threshold, params.wrangler_max_delays)),
    })
}
