//! Experiment configuration as TOML.
//!
//! Every key has a default, so an empty file is a complete configuration
//! (400 virtual hosts, 288 intervals of 300 s). Unknown keys are rejected
//! with their path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ReportOptions;
use crate::mitigation::{PolicyId, PolicyParams};
use crate::model::{Host, HostId, HostSpec};
use crate::predictor::TrainConfig;
use crate::sim::workload::WorkloadConfig;
use crate::sim::{EngineConfig, FaultConfig, HarvestConfig, SchedulerKind};

/// One machine class of the fleet; `share` weights how many of the
/// `n_vms` hosts belong to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostClass {
    pub class: String,
    pub cpu_mips: f64,
    pub ram_mb: f64,
    pub disk_mb: f64,
    pub bw_kbps: f64,
    pub cost_per_interval: f64,
    pub share: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyConfig {
    pub e_min: f64,
    pub e_max: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            e_min: 108.0,
            e_max: 273.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub lr: f64,
    pub split: f64,
    /// Seed for weight initialization and the train/test shuffle.
    pub seed: u64,
    pub beta_scale: f64,
    pub alpha_cap: f64,
    /// Simulation runs (with derived seeds) used to harvest examples.
    pub harvest_runs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainingConfig {
            epochs: t.epochs,
            lr: t.lr,
            split: t.split,
            seed: t.seed,
            beta_scale: t.beta_scale,
            alpha_cap: t.alpha_cap,
            harvest_runs: 1,
        }
    }
}

impl TrainingConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            split: self.split,
            seed: self.seed,
            beta_scale: self.beta_scale,
            alpha_cap: self.alpha_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub policy: PolicyId,
    pub n_vms: usize,
    pub horizon_intervals: u64,
    pub interval_seconds: f64,
    pub scheduler: SchedulerKind,
    /// Rows of the task feature matrix; larger jobs are rejected.
    pub max_tasks_per_job: usize,
    pub ema_weight: f64,
    pub sla_slack: f64,
    pub memory_buffer_fraction: f64,
    pub memory_cache_fraction: f64,
    pub output_dir: PathBuf,
    pub checkpoint_path: PathBuf,
    /// Workload trace to replay instead of generating one.
    pub trace_path: Option<PathBuf>,
    pub fleet: Vec<HostClass>,
    pub energy: EnergyConfig,
    pub workload: WorkloadConfig,
    pub faults: FaultConfig,
    pub policies: PolicyParams,
    pub training: TrainingConfig,
    pub report: ReportOptions,
}

pub fn default_fleet() -> Vec<HostClass> {
    let class = |name: &str, cpu_mips, ram_gb: f64, disk_gb: f64, bw_kbps, cost, share| HostClass {
        class: name.into(),
        cpu_mips,
        ram_mb: ram_gb * 1024.0,
        disk_mb: disk_gb * 1000.0,
        bw_kbps,
        cost_per_interval: cost,
        share,
    };
    vec![
        class("core2duo", 4800.0, 6.0, 320.0, 1.0, 3.0, 12),
        class("i5", 11_600.0, 4.0, 160.0, 2.0, 5.0, 6),
        class("xeon", 8800.0, 2.0, 160.0, 1.5, 4.0, 2),
    ]
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            policy: PolicyId::Start,
            n_vms: 400,
            horizon_intervals: 288,
            interval_seconds: 300.0,
            scheduler: SchedulerKind::LeastLoaded,
            max_tasks_per_job: 10,
            ema_weight: 0.8,
            sla_slack: 1.5,
            memory_buffer_fraction: 0.0,
            memory_cache_fraction: 0.0,
            output_dir: PathBuf::from("out"),
            checkpoint_path: PathBuf::from("out/predictor.ckpt"),
            trace_path: None,
            fleet: default_fleet(),
            energy: EnergyConfig::default(),
            workload: WorkloadConfig::default(),
            faults: FaultConfig::default(),
            policies: PolicyParams::default(),
            training: TrainingConfig::default(),
            report: ReportOptions::default(),
        }
    }
}

fn bad<T>(key: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::Config {
        key: key.into(),
        message: message.into(),
    })
}

impl SimConfig {
    /// Parses TOML text; errors name the offending key.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config {
            key: e.span().map_or_else(|| "?".into(), |s| key_at(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            key: "<root>".into(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_vms == 0 {
            return bad("n_vms", "must be positive");
        }
        if self.fleet.is_empty() || self.fleet.iter().all(|c| c.share == 0) {
            return bad("fleet", "need at least one class with a positive share");
        }
        for (i, c) in self.fleet.iter().enumerate() {
            let caps = [c.cpu_mips, c.ram_mb, c.disk_mb, c.bw_kbps];
            if caps.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return bad(&format!("fleet[{i}]"), "capacities must be positive");
            }
            if c.cost_per_interval < 0.0 {
                return bad(&format!("fleet[{i}].cost_per_interval"), "must be >= 0");
            }
        }
        if !(0.0 <= self.energy.e_min && self.energy.e_min <= self.energy.e_max) {
            return bad("energy", "need 0 <= e_min <= e_max");
        }
        let t = &self.training;
        if !(t.lr > 0.0 && t.split > 0.0 && t.split < 1.0 && t.beta_scale > 0.0 && t.alpha_cap > 1.0) {
            return bad("training", "need lr > 0, 0 < split < 1, beta_scale > 0, alpha_cap > 1");
        }
        if t.harvest_runs == 0 {
            return bad("training.harvest_runs", "must be positive");
        }
        let p = &self.policies;
        if !(p.reactive_factor > 0.0 && p.nearestfit_factor > 0.0) {
            return bad("policies", "factors must be positive");
        }
        if !(0.0..=1.0).contains(&p.dolly_budget_fraction) {
            return bad("policies.dolly_budget_fraction", "must be in [0, 1]");
        }
        let s = &p.start;
        if !(s.k > 0.0 && s.period > 0.0 && s.duration >= s.period) {
            return bad("policies.start", "need k > 0 and 0 < period <= duration");
        }
        self.workload.validate()?;
        if self.workload.tasks_max > self.max_tasks_per_job {
            return bad("workload.tasks_max", "exceeds max_tasks_per_job");
        }
        self.engine_config().validate()
    }

    /// Host counts per fleet class: `n_vms` split by share with largest
    /// remainders (ties to the earlier class).
    pub fn class_counts(&self) -> Vec<usize> {
        let total: u64 = self.fleet.iter().map(|c| c.share as u64).sum();
        let n = self.n_vms as u64;
        let mut counts: Vec<usize> = self.fleet.iter().map(|c| (n * c.share as u64 / total) as usize).collect();
        let mut order: Vec<usize> = (0..self.fleet.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse((n * self.fleet[i].share as u64) % total));
        let assigned: usize = counts.iter().sum();
        for &i in order.iter().take(self.n_vms - assigned) {
            counts[i] += 1;
        }
        counts
    }

    /// Hosts grouped by class in fleet order.
    pub fn hosts(&self) -> Result<Vec<Host>> {
        let mut hosts = Vec::with_capacity(self.n_vms);
        for (class, count) in self.fleet.iter().zip(self.class_counts()) {
            let spec = HostSpec {
                class: class.class.clone(),
                cpu_mips: class.cpu_mips,
                ram_mb: class.ram_mb,
                disk_mb: class.disk_mb,
                bw_kbps: class.bw_kbps,
                cost_per_interval: class.cost_per_interval,
                power_min: self.energy.e_min,
                power_max: self.energy.e_max,
            };
            for _ in 0..count {
                hosts.push(Host::new(HostId(hosts.len()), &spec)?);
            }
        }
        Ok(hosts)
    }

    /// Fleet MIPS times run length: the clone budget denominator.
    pub fn fleet_capacity_seconds(&self) -> f64 {
        let mips: f64 = self
            .fleet
            .iter()
            .zip(self.class_counts())
            .map(|(c, n)| c.cpu_mips * n as f64)
            .sum();
        mips * self.horizon_intervals as f64 * self.interval_seconds
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            horizon: self.horizon_intervals,
            interval_seconds: self.interval_seconds,
            scheduler: self.scheduler,
            faults: self.faults.clone(),
            straggler_k: self.policies.start.k,
            ema_weight: self.ema_weight,
            sla_slack: self.sla_slack,
            memory_buffer_fraction: self.memory_buffer_fraction,
            memory_cache_fraction: self.memory_cache_fraction,
            max_tasks_per_job: self.max_tasks_per_job,
            harvest: None,
            seed: self.seed,
        }
    }

    pub fn harvest_config(&self) -> HarvestConfig {
        HarvestConfig {
            period: self.policies.start.period,
            duration: self.policies.start.duration,
            ema_weight: self.ema_weight,
        }
    }
}

/// Dotted key path of the table entry enclosing byte `offset`, found by
/// scanning back for the last key and table header.
fn key_at(text: &str, offset: usize) -> String {
    let before = &text[..offset.min(text.len())];
    let mut table = String::new();
    let mut key = String::new();
    for line in before.lines() {
        let l = line.trim();
        if l.starts_with('[') {
            table = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key.clear();
        } else if let Some((k, _)) = l.split_once('=') {
            key = k.trim().to_string();
        }
    }
    // an error inside the line currently being parsed names that line's key
    if let Some(line) = text[offset.min(text.len())..].lines().next() {
        let current = before.rsplit('\n').next().unwrap_or("").to_string() + line;
        if let Some((k, _)) = current.trim().split_once('=') {
            key = k.trim().to_string();
        }
    }
    match (table.is_empty(), key.is_empty()) {
        (true, _) => key,
        (false, true) => table,
        (false, false) => format!("{table}.{key}"),
    }
}

pub fn load_config(path: &Path) -> Result<SimConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    SimConfig::from_toml(&text)
}
