//! Workload traces: the CSV schema, the synthetic generator and a converter
//! for per-VM CPU utilization traces.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::sampling::{derive_seed, sample_poisson};
use crate::error::{Error, Result};

/// One task of the trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub task_id: u64,
    pub job_id: u64,
    pub arrival_interval: u64,
    pub cpu_mips: f64,
    pub ram_mb: f64,
    pub disk_mb: f64,
    pub bw_kbps: f64,
    pub length_mi: f64,
    pub deadline_driven: bool,
}

pub const TRACE_HEADER: &str =
    "task_id,job_id,arrival_interval,cpu_mips,ram_mb,disk_mb,bw_kbps,length_mi,deadline_driven";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    /// Mean jobs per interval.
    pub poisson_lambda: f64,
    pub tasks_min: usize,
    pub tasks_max: usize,
    pub deadline_fraction: f64,
    pub size_mean_mb: f64,
    pub size_sd_mb: f64,
    /// Smallest workload size kept after the normal draw.
    pub size_min_mb: f64,
    /// Instructions per MB of workload size.
    pub mi_per_mb: f64,
    pub cpu_mips: (f64, f64),
    pub ram_mb: (f64, f64),
    pub disk_mb: (f64, f64),
    pub bw_kbps: (f64, f64),
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            poisson_lambda: 1.2,
            tasks_min: 2,
            tasks_max: 10,
            deadline_fraction: 0.5,
            size_mean_mb: 10_000.0,
            size_sd_mb: 3_000.0,
            size_min_mb: 1_000.0,
            mi_per_mb: 60.0,
            cpu_mips: (1000.0, 3000.0),
            ram_mb: (256.0, 1024.0),
            disk_mb: (180.0, 1020.0),
            bw_kbps: (0.1, 1.0),
        }
    }
}

impl WorkloadConfig {
    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("cpu_mips", self.cpu_mips),
            ("ram_mb", self.ram_mb),
            ("disk_mb", self.disk_mb),
            ("bw_kbps", self.bw_kbps),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config {
                    key: format!("workload.{name}"),
                    message: format!("need 0 < low <= high, got ({lo}, {hi})"),
                });
            }
        }
        let checks = [
            ("poisson_lambda", self.poisson_lambda > 0.0),
            ("tasks_min", self.tasks_min >= 1 && self.tasks_min <= self.tasks_max),
            ("deadline_fraction", (0.0..=1.0).contains(&self.deadline_fraction)),
            ("size_mean_mb", self.size_mean_mb > 0.0),
            ("size_sd_mb", self.size_sd_mb >= 0.0),
            ("size_min_mb", self.size_min_mb > 0.0),
            ("mi_per_mb", self.mi_per_mb > 0.0),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::Config {
                    key: format!("workload.{name}"),
                    message: "out of range".into(),
                });
            }
        }
        Ok(())
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Poisson job arrivals per interval with uniformly drawn task demands.
pub fn generate(cfg: &WorkloadConfig, horizon: u64, seed: u64) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x776f_726b]));
    let size = Normal::new(cfg.size_mean_mb, cfg.size_sd_mb).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rows = Vec::new();
    let (mut job_id, mut task_id) = (0u64, 0u64);
    for interval in 0..horizon {
        for _ in 0..sample_poisson(&mut rng, cfg.poisson_lambda)? {
            let q = rng.random_range(cfg.tasks_min..=cfg.tasks_max);
            let deadline_driven = rng.random::<f64>() < cfg.deadline_fraction;
            for _ in 0..q {
                let mb = size.sample(&mut rng).max(cfg.size_min_mb);
                rows.push(TraceRow {
                    task_id,
                    job_id,
                    arrival_interval: interval,
                    cpu_mips: uniform(&mut rng, cfg.cpu_mips),
                    ram_mb: uniform(&mut rng, cfg.ram_mb),
                    disk_mb: uniform(&mut rng, cfg.disk_mb),
                    bw_kbps: uniform(&mut rng, cfg.bw_kbps),
                    length_mi: mb * cfg.mi_per_mb,
                    deadline_driven,
                });
                task_id += 1;
            }
            job_id += 1;
        }
    }
    Ok(rows)
}

pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(TRACE_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a trace: known header, positive demands, a job's
/// rows contiguous with one arrival interval and deadline flag.
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != TRACE_HEADER {
        return Err(Error::Trace(format!("{}: unexpected header {header:?}", path.display())));
    }
    let rows: Vec<TraceRow> = r.deserialize().collect::<std::result::Result<_, _>>()?;
    validate_trace(&rows)?;
    Ok(rows)
}

pub fn validate_trace(rows: &[TraceRow]) -> Result<()> {
    let mut seen_tasks = std::collections::BTreeSet::new();
    let mut closed_jobs = std::collections::BTreeSet::new();
    let mut prev: Option<&TraceRow> = None;
    for row in rows {
        let demands = [row.cpu_mips, row.ram_mb, row.disk_mb, row.bw_kbps, row.length_mi];
        if demands.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::Trace(format!("task {}: demands must be positive", row.task_id)));
        }
        if !seen_tasks.insert(row.task_id) {
            return Err(Error::Trace(format!("duplicate task id {}", row.task_id)));
        }
        match prev {
            Some(p) if p.job_id == row.job_id => {
                if p.arrival_interval != row.arrival_interval || p.deadline_driven != row.deadline_driven {
                    return Err(Error::Trace(format!("job {}: rows disagree on arrival or deadline", row.job_id)));
                }
            }
            Some(p) => {
                closed_jobs.insert(p.job_id);
                if closed_jobs.contains(&row.job_id) {
                    return Err(Error::Trace(format!("job {}: rows are not contiguous", row.job_id)));
                }
                if row.arrival_interval < p.arrival_interval {
                    return Err(Error::Trace(format!("job {}: arrivals out of order", row.job_id)));
                }
            }
            None => {}
        }
        prev = Some(row);
    }
    Ok(())
}

/// Builds a trace from per-VM CPU utilization series (one value in percent
/// per line, one series per task). Tasks are grouped into jobs of
/// `tasks_min..=tasks_max` in file order; a task's CPU demand is its mean
/// utilization of `reference_mips` and its length the work done over the
/// series at `interval_seconds` per sample. Other demands are drawn from
/// `cfg`.
pub fn convert_utilization_series(
    series: &[Vec<f64>],
    cfg: &WorkloadConfig,
    reference_mips: f64,
    interval_seconds: f64,
    seed: u64,
) -> Result<Vec<TraceRow>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x636f_6e76]));
    let mut rows = Vec::with_capacity(series.len());
    let mut job_id = 0u64;
    let mut i = 0usize;
    while i < series.len() {
        let q = rng.random_range(cfg.tasks_min..=cfg.tasks_max).min(series.len() - i);
        let deadline_driven = rng.random::<f64>() < cfg.deadline_fraction;
        for s in &series[i..i + q] {
            if s.is_empty() {
                return Err(Error::Trace(format!("series {i} is empty")));
            }
            let mean = s.iter().sum::<f64>() / s.len() as f64;
            let cpu = (mean / 100.0 * reference_mips).max(1.0);
            let work: f64 = s.iter().map(|u| u / 100.0 * reference_mips * interval_seconds).sum();
            rows.push(TraceRow {
                task_id: rows.len() as u64,
                job_id,
                arrival_interval: job_id,
                cpu_mips: cpu,
                ram_mb: uniform(&mut rng, cfg.ram_mb),
                disk_mb: uniform(&mut rng, cfg.disk_mb),
                bw_kbps: uniform(&mut rng, cfg.bw_kbps),
                length_mi: work.max(cpu),
                deadline_driven,
            });
        }
        i += q;
        job_id += 1;
    }
    Ok(rows)
}

/// Parses a utilization file: one percentage per non-empty line.
pub fn read_utilization_series(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.parse::<f64>()
                .map_err(|_| Error::Trace(format!("{}: bad value {l:?}", path.display())))
        })
        .collect()
}
