//! QoS formulas, per-interval samples and run reports.
//!
//! Every aggregate in a [`MetricsReport`] is computed by
//! [`Aggregates::from_series`] from the stored per-interval samples, so the
//! `evaluate` command can reproduce a report from its CSV alone.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One finished task as seen by the execution-time formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Completion {
    pub submit: f64,
    pub complete: f64,
    /// Seconds lost to restarts.
    pub restart: f64,
}

/// How restart overhead enters the execution-time average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartTerm {
    /// Mean response time plus the unaveraged restart total.
    #[default]
    Summed,
    /// Mean of (response + restart).
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Mode {
    #[default]
    Standard,
    /// tp / (tp + (fp + tp) / 2).
    AsPrinted,
}

fn execution_time_from_sums(count: f64, sum_response: f64, sum_restart: f64, term: RestartTerm) -> f64 {
    match term {
        RestartTerm::Summed => sum_response / count + sum_restart,
        RestartTerm::Averaged => (sum_response + sum_restart) / count,
    }
}

pub fn avg_execution_time(tasks: &[Completion], term: RestartTerm) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::invalid("execution time of zero tasks"));
    }
    let response: f64 = tasks.iter().map(|t| t.complete - t.submit).sum();
    let restart: f64 = tasks.iter().map(|t| t.restart).sum();
    Ok(execution_time_from_sums(tasks.len() as f64, response, restart, term))
}

/// Total demand on a host whose summed demand exceeds its capacity, else 0.
pub fn host_contention(capacity: f64, demands: &[f64]) -> f64 {
    let total: f64 = demands.iter().sum();
    if total > capacity {
        total
    } else {
        0.0
    }
}

pub fn resource_contention<'a>(hosts: impl IntoIterator<Item = (f64, &'a [f64])>) -> f64 {
    hosts.into_iter().map(|(cap, d)| host_contention(cap, d)).sum()
}

/// Percent of `total` in use, where `buffer` and `cache` count as free.
pub fn memory_utilization(total: f64, used: f64, buffer: f64, cache: f64) -> f64 {
    let free = total - used;
    pct((total - (free + buffer + cache)) / total)
}

pub fn disk_utilization(total: f64, used: f64) -> f64 {
    pct(used / total)
}

pub fn cpu_utilization(capacity: f64, used: f64) -> f64 {
    pct(used / capacity)
}

/// `bits` received plus transmitted over `seconds` on a link of
/// `bits_per_second`.
pub fn network_utilization(bits: f64, bits_per_second: f64, seconds: f64) -> f64 {
    pct(bits / (bits_per_second * seconds))
}

fn pct(frac: f64) -> f64 {
    (frac * 100.0).clamp(0.0, 100.0)
}

/// `(weight, violated)` per job.
pub fn sla_violation_rate(jobs: &[(f64, bool)]) -> Result<f64> {
    if jobs.is_empty() {
        return Err(Error::invalid("SLA rate of zero jobs"));
    }
    let hit: f64 = jobs.iter().filter(|(_, v)| *v).map(|(w, _)| w).sum();
    Ok(hit / jobs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Percent; `None` when every point was excluded.
    pub value: Option<f64>,
    pub included: usize,
    /// Points with a zero actual value.
    pub excluded: usize,
}

pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<Mape> {
    if actual.len() != predicted.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} predictions", actual.len()),
            actual: predicted.len().to_string(),
        });
    }
    let mut sum = 0.0;
    let mut included = 0;
    for (y, p) in actual.iter().zip(predicted) {
        if *y != 0.0 {
            sum += (y - p).abs() / y;
            included += 1;
        }
    }
    Ok(Mape {
        value: (included > 0).then(|| 100.0 * sum / included as f64),
        included,
        excluded: actual.len() - included,
    })
}

pub fn f1_score(tp: u64, fp: u64, fn_: u64, mode: F1Mode) -> Result<f64> {
    if tp + fp + fn_ == 0 {
        return Err(Error::invalid("F1 of all-zero counts"));
    }
    let tp_f = tp as f64;
    let denom = match mode {
        F1Mode::Standard => tp_f + (fp + fn_) as f64 / 2.0,
        F1Mode::AsPrinted => tp_f + (fp + tp) as f64 / 2.0,
    };
    Ok(if denom == 0.0 { 0.0 } else { tp_f / denom })
}

/// Everything measured in one scheduling interval. Sums rather than means
/// so aggregates over many intervals stay exact.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSample {
    pub interval_index: u64,
    /// Watt-seconds over all hosts.
    pub energy: f64,
    /// Time-averaged CPU contention.
    pub contention: f64,
    /// Fleet means, percent.
    pub cpu_util: f64,
    pub ram_util: f64,
    pub disk_util: f64,
    pub net_util: f64,
    pub tasks_completed: u64,
    pub sum_response: f64,
    pub sum_restart: f64,
    pub jobs_completed: u64,
    pub sum_job_completion: f64,
    /// Jobs whose SLA outcome became known this interval.
    pub sla_resolved: u64,
    /// Weighted count of those that missed the deadline.
    pub sla_violations: f64,
    /// Actual straggler count over jobs with a prediction that finished now.
    pub stragglers_actual: f64,
    pub stragglers_predicted: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub mitigations: u64,
    pub queued: u64,
    pub running: u64,
    pub online_hosts: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    pub restart_term: RestartTerm,
    pub f1_mode: F1Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub intervals: usize,
    pub energy_total: f64,
    pub energy_mean: f64,
    pub contention_total: f64,
    pub contention_mean: f64,
    pub cpu_util_mean: f64,
    pub ram_util_mean: f64,
    pub disk_util_mean: f64,
    pub net_util_mean: f64,
    pub tasks_completed: u64,
    pub avg_execution_time: Option<f64>,
    pub jobs_completed: u64,
    pub mean_job_completion: Option<f64>,
    pub sla_resolved: u64,
    pub sla_violation_rate: Option<f64>,
    pub mape: Mape,
    pub f1: Option<f64>,
    pub mitigations: u64,
}

impl Aggregates {
    pub fn from_series(series: &[MetricsSample], opts: ReportOptions) -> Result<Self> {
        let n = series.len();
        let sum = |f: fn(&MetricsSample) -> f64| series.iter().map(f).sum::<f64>();
        let count = |f: fn(&MetricsSample) -> u64| series.iter().map(f).sum::<u64>();
        let mean = |total: f64| if n == 0 { 0.0 } else { total / n as f64 };

        let energy_total = sum(|s| s.energy);
        let contention_total = sum(|s| s.contention);
        let tasks_completed = count(|s| s.tasks_completed);
        let jobs_completed = count(|s| s.jobs_completed);
        let sla_resolved = count(|s| s.sla_resolved);

        let avg_execution_time = (tasks_completed > 0).then(|| {
            execution_time_from_sums(
                tasks_completed as f64,
                sum(|s| s.sum_response),
                sum(|s| s.sum_restart),
                opts.restart_term,
            )
        });

        let (actual, predicted): (Vec<f64>, Vec<f64>) = series
            .iter()
            .filter_map(|s| s.stragglers_predicted.map(|p| (s.stragglers_actual, p)))
            .unzip();
        let (tp, fp, fn_) = (count(|s| s.tp), count(|s| s.fp), count(|s| s.fn_));
        let f1 = if tp + fp + fn_ == 0 {
            None
        } else {
            Some(f1_score(tp, fp, fn_, opts.f1_mode)?)
        };

        Ok(Aggregates {
            intervals: n,
            energy_total,
            energy_mean: mean(energy_total),
            contention_total,
            contention_mean: mean(contention_total),
            cpu_util_mean: mean(sum(|s| s.cpu_util)),
            ram_util_mean: mean(sum(|s| s.ram_util)),
            disk_util_mean: mean(sum(|s| s.disk_util)),
            net_util_mean: mean(sum(|s| s.net_util)),
            tasks_completed,
            avg_execution_time,
            jobs_completed,
            mean_job_completion: (jobs_completed > 0)
                .then(|| sum(|s| s.sum_job_completion) / jobs_completed as f64),
            sla_resolved,
            sla_violation_rate: (sla_resolved > 0).then(|| sum(|s| s.sla_violations) / sla_resolved as f64),
            mape: mape(&actual, &predicted)?,
            f1,
            mitigations: count(|s| s.mitigations),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub seed: u64,
    pub policy: String,
    pub options: ReportOptions,
    pub aggregates: Aggregates,
    pub series: Vec<MetricsSample>,
}

impl MetricsReport {
    pub fn new(
        run_id: impl Into<String>,
        seed: u64,
        policy: impl Into<String>,
        options: ReportOptions,
        series: Vec<MetricsSample>,
    ) -> Result<Self> {
        Ok(MetricsReport {
            run_id: run_id.into(),
            seed,
            policy: policy.into(),
            aggregates: Aggregates::from_series(&series, options)?,
            options,
            series,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_series_csv(&self, path: &Path) -> Result<()> {
        write_series_csv(&self.series, path)
    }
}

/// One row per interval, columns in [`MetricsSample`] field order.
pub fn write_series_csv(series: &[MetricsSample], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if series.is_empty() {
        w.serialize(MetricsSample::default())?;
        drop(w);
        // keep only the header line
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header = text.lines().next().unwrap_or_default();
        return std::fs::write(path, format!("{header}\n")).map_err(|e| Error::io(path, e));
    }
    for s in series {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_series_csv(path: &Path) -> Result<Vec<MetricsSample>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
