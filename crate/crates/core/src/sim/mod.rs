//! Discrete-event cluster simulation.
//!
//! Time is continuous (seconds). Task execution is fluid: between events
//! every run progresses at a constant rate, `min(proportional share,
//! cpu_req)` on its host, so completion times are computed exactly and
//! rescheduled whenever a host's set of runs changes. Queued tasks are only
//! placed at interval boundaries; mitigation actions take effect at once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod engine;
pub mod events;
pub mod sampling;
pub mod scheduler;
pub mod workload;

pub use engine::{FaultRecord, SimOutcome, Simulation};
pub use scheduler::SchedulerKind;

/// Linear power model: idle draw plus the dynamic range scaled by
/// utilization in [0, 1].
pub fn host_power(power_min: f64, power_max: f64, utilization: f64) -> f64 {
    power_min + (power_max - power_min) * utilization.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultConfig {
    pub enabled: bool,
    pub host_faults: bool,
    pub task_faults: bool,
    pub vm_faults: bool,
    pub weibull_shape: f64,
    pub weibull_scale: f64,
    /// Intervals per unit of Weibull time.
    pub time_unit_intervals: f64,
    pub max_downtime_intervals: u32,
}

impl Default for FaultConfig {
    fn default() -> Self {
        FaultConfig {
            enabled: true,
            host_faults: true,
            task_faults: true,
            vm_faults: true,
            weibull_shape: 1.5,
            weibull_scale: 2.0,
            time_unit_intervals: 10.0,
            max_downtime_intervals: 4,
        }
    }
}

/// Capture of predictor windows for every job, to build training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarvestConfig {
    pub period: f64,
    pub duration: f64,
    pub ema_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub horizon: u64,
    pub interval_seconds: f64,
    pub scheduler: SchedulerKind,
    pub faults: FaultConfig,
    /// Multiplier of the fitted mean above which a finished task counts as
    /// a straggler.
    pub straggler_k: f64,
    pub ema_weight: f64,
    /// Job deadline as a multiple of its longest task's standalone time.
    pub sla_slack: f64,
    pub memory_buffer_fraction: f64,
    pub memory_cache_fraction: f64,
    /// Rows of the task feature matrix; jobs may not have more tasks.
    pub max_tasks_per_job: usize,
    pub harvest: Option<HarvestConfig>,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            horizon: 288,
            interval_seconds: 300.0,
            scheduler: SchedulerKind::LeastLoaded,
            faults: FaultConfig::default(),
            straggler_k: 1.5,
            ema_weight: 0.8,
            sla_slack: 1.5,
            memory_buffer_fraction: 0.0,
            memory_cache_fraction: 0.0,
            max_tasks_per_job: 10,
            harvest: None,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(Error::Config {
                key: key.into(),
                message: message.into(),
            })
        };
        if !(self.interval_seconds > 0.0 && self.interval_seconds.is_finite()) {
            return bad("interval_seconds", "must be positive");
        }
        if !(self.straggler_k > 0.0) {
            return bad("k", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.ema_weight) {
            return bad("ema_weight", "must be in [0, 1]");
        }
        if !(self.sla_slack > 0.0) {
            return bad("sla_slack", "must be positive");
        }
        let mem = self.memory_buffer_fraction + self.memory_cache_fraction;
        if self.memory_buffer_fraction < 0.0 || self.memory_cache_fraction < 0.0 || mem > 1.0 {
            return bad("memory", "buffer and cache fractions must be >= 0 and sum to <= 1");
        }
        if self.max_tasks_per_job == 0 {
            return bad("max_tasks_per_job", "must be positive");
        }
        let f = &self.faults;
        if !(f.weibull_shape > 0.0 && f.weibull_scale > 0.0) {
            return bad("faults.weibull", "shape and scale must be positive");
        }
        if !(f.time_unit_intervals > 0.0 && f.time_unit_intervals.is_finite()) {
            return bad("faults.time_unit_intervals", "must be positive");
        }
        if f.max_downtime_intervals == 0 {
            return bad("faults.max_downtime_intervals", "must be at least 1");
        }
        if let Some(h) = &self.harvest {
            if !(h.period > 0.0 && h.duration >= h.period) {
                return bad("harvest", "need 0 < period <= duration");
            }
        }
        Ok(())
    }

    /// Seconds per unit of Weibull time.
    pub fn fault_time_unit(&self) -> f64 {
        self.faults.time_unit_intervals * self.interval_seconds
    }
}
