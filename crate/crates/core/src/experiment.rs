//! The experiment commands behind the CLI: generate a workload, train the
//! predictor, simulate one policy, compare several, and re-check stored
//! reports. All outputs go under the output directory given to each call.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::metrics::{Aggregates, MetricsReport};
use crate::mitigation::{build_policy, PolicyId};
use crate::model::input_width;
use crate::neural::{checkpoint, Architecture, NetworkWeights};
use crate::predictor::{self, LossPoint, Predictor, TrainingExample};
use crate::sim::sampling::derive_seed;
use crate::sim::workload::{self, TraceRow};
use crate::sim::{SchedulerKind, SimOutcome, Simulation};

const HARVEST_STREAM: u64 = 0x6861_7276;

/// A configuration together with the bytes it was read from, so manifests
/// can hash exactly what the user wrote.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: SimConfig,
    pub bytes: Vec<u8>,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| Error::Config {
            key: "<file>".into(),
            message: e.to_string(),
        })?;
        Ok(LoadedConfig {
            config: SimConfig::from_toml(&text)?,
            bytes,
        })
    }

    /// The default configuration, hashed as an empty file.
    pub fn defaults() -> Self {
        LoadedConfig {
            config: SimConfig::default(),
            bytes: Vec::new(),
        }
    }

    pub fn from_config(config: SimConfig) -> Result<Self> {
        let bytes = config.to_toml()?.into_bytes();
        Ok(LoadedConfig { config, bytes })
    }

    pub fn hash(&self) -> String {
        sha256_hex(&self.bytes)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub policy: Option<String>,
    pub crate_version: String,
    pub checkpoint_sha256: Option<String>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// The configured trace file, or a freshly generated workload.
pub fn load_trace(cfg: &SimConfig) -> Result<Vec<TraceRow>> {
    match &cfg.trace_path {
        Some(path) => workload::read_trace(path),
        None => workload::generate(&cfg.workload, cfg.horizon_intervals, cfg.seed),
    }
}

/// Writes `trace.csv` under `out` and returns its rows.
pub fn cmd_generate(loaded: &LoadedConfig, out: &Path) -> Result<Vec<TraceRow>> {
    let started = Instant::now();
    let cfg = &loaded.config;
    ensure_dir(out)?;
    let rows = workload::generate(&cfg.workload, cfg.horizon_intervals, cfg.seed)?;
    let path = out.join("trace.csv");
    workload::write_trace(&rows, &path)?;
    log::info!("wrote {} tasks to {}", rows.len(), path.display());
    RunManifest {
        command: "generate".into(),
        config_sha256: loaded.hash(),
        seed: cfg.seed,
        policy: None,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        checkpoint_sha256: None,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: vec![path],
    }
    .write(&out.join("generate_manifest.json"))?;
    Ok(rows)
}

/// Runs the workload under the random scheduler without mitigation and
/// collects one labelled observation window per finished job. Run `i`
/// uses seed `seed` for i = 0 and a derived seed otherwise.
pub fn harvest(cfg: &SimConfig, trace: &[TraceRow]) -> Result<Vec<TrainingExample>> {
    let mut examples = Vec::new();
    for run in 0..cfg.training.harvest_runs {
        let mut engine = cfg.engine_config();
        engine.scheduler = SchedulerKind::Random;
        engine.harvest = Some(cfg.harvest_config());
        if run > 0 {
            engine.seed = derive_seed(cfg.seed, &[HARVEST_STREAM, run as u64]);
        }
        let policy = build_policy(PolicyId::None, &cfg.policies, None, cfg.fleet_capacity_seconds())?;
        let outcome = Simulation::new(engine, cfg.hosts()?, trace, policy)?.run()?;
        log::info!("harvest run {run}: {} examples", outcome.harvested.len());
        examples.extend(outcome.harvested);
    }
    Ok(examples)
}

pub fn initial_weights(cfg: &SimConfig) -> NetworkWeights {
    let arch = Architecture::start(input_width(cfg.n_vms, cfg.max_tasks_per_job));
    NetworkWeights::init(arch, cfg.training.seed)
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub weights: NetworkWeights,
    pub curve: Vec<LossPoint>,
    pub examples: usize,
    pub checkpoint: PathBuf,
}

/// Harvests examples from `trace`, trains, and writes the checkpoint,
/// `loss.csv` and `dataset.csv` / `dataset_labels.csv` under `out`.
/// `checkpoint` overrides the configured checkpoint path.
pub fn cmd_train(loaded: &LoadedConfig, trace: &[TraceRow], out: &Path, checkpoint: Option<&Path>) -> Result<TrainSummary> {
    let started = Instant::now();
    let cfg = &loaded.config;
    ensure_dir(out)?;
    let examples = harvest(cfg, trace)?;
    if examples.is_empty() {
        return Err(Error::Trace("no labelled jobs harvested; lengthen the horizon or add jobs".into()));
    }
    let outcome = predictor::train(initial_weights(cfg), &examples, &cfg.training.train_config())?;

    let ckpt = checkpoint.map_or_else(|| cfg.checkpoint_path.clone(), Path::to_path_buf);
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    checkpoint::save(&outcome.weights, &ckpt)?;
    let loss = out.join("loss.csv");
    write_loss_csv(&outcome.curve, &loss)?;
    let (features, labels) = (out.join("dataset.csv"), out.join("dataset_labels.csv"));
    predictor::write_dataset(&examples, &features, &labels)?;
    log::info!("trained on {} examples, checkpoint {}", examples.len(), ckpt.display());

    RunManifest {
        command: "train".into(),
        config_sha256: loaded.hash(),
        seed: cfg.seed,
        policy: None,
        crate_version: env!("CARGO_PKG_VERSION").into(),
        checkpoint_sha256: Some(sha256_hex(&checkpoint::to_bytes(&outcome.weights))),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: vec![ckpt.clone(), loss, features, labels],
    }
    .write(&out.join("train_manifest.json"))?;
    Ok(TrainSummary {
        weights: outcome.weights,
        curve: outcome.curve,
        examples: examples.len(),
        checkpoint: ckpt,
    })
}

/// Columns: epoch, train_mse, test_mse (empty when there is no test split).
pub fn write_loss_csv(curve: &[LossPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_mse", "test_mse"])?;
    for p in curve {
        let test = p.test_mse.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([p.epoch.to_string(), p.train_mse.to_string(), test])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint and checks it matches the configured fleet size.
pub fn load_predictor(cfg: &SimConfig, path: &Path) -> Result<Predictor> {
    let weights = checkpoint::load(path)?;
    let want = input_width(cfg.n_vms, cfg.max_tasks_per_job);
    if weights.arch.input != want {
        return Err(Error::Checkpoint(format!(
            "{} expects input width {}, this configuration needs {want} ({} hosts, {} task rows)",
            path.display(),
            weights.arch.input,
            cfg.n_vms,
            cfg.max_tasks_per_job
        )));
    }
    Ok(Predictor::new(weights, cfg.ema_weight, cfg.training.beta_scale))
}

/// Runs one policy on `trace`. `predictor` is required for `start`.
pub fn run_policy(
    cfg: &SimConfig,
    trace: &[TraceRow],
    policy: PolicyId,
    predictor: Option<Predictor>,
) -> Result<(MetricsReport, SimOutcome)> {
    let p = build_policy(policy, &cfg.policies, predictor, cfg.fleet_capacity_seconds())?;
    let outcome = Simulation::new(cfg.engine_config(), cfg.hosts()?, trace, p)?.run()?;
    let run_id = format!("{policy}-seed{}", cfg.seed);
    let report = MetricsReport::new(run_id, cfg.seed, policy.as_str(), cfg.report, outcome.series.clone())?;
    Ok((report, outcome))
}

#[derive(Debug, Clone)]
pub struct SimulateOutput {
    pub report: MetricsReport,
    pub report_path: PathBuf,
    pub series_path: PathBuf,
}

/// Simulates the configured policy and writes `<policy>_report.json`,
/// `<policy>_series.csv` and `<policy>_manifest.json` under `out`.
pub fn cmd_simulate(loaded: &LoadedConfig, out: &Path, checkpoint: Option<&Path>) -> Result<SimulateOutput> {
    let started = Instant::now();
    let cfg = &loaded.config;
    let trace = load_trace(cfg)?;
    let ckpt = checkpoint.map_or_else(|| cfg.checkpoint_path.clone(), Path::to_path_buf);
    let (predictor, ckpt_hash) = if cfg.policy == PolicyId::Start {
        let bytes = fs::read(&ckpt).map_err(|e| {
            Error::Checkpoint(format!("policy start needs a checkpoint at {}: {e}", ckpt.display()))
        })?;
        (Some(load_predictor(cfg, &ckpt)?), Some(sha256_hex(&bytes)))
    } else {
        (None, None)
    };
    ensure_dir(out)?;
    let (report, _) = run_policy(cfg, &trace, cfg.policy, predictor)?;
    let name = cfg.policy.as_str();
    let report_path = out.join(format!("{name}_report.json"));
    let series_path = out.join(format!("{name}_series.csv"));
    report.write_json(&report_path)?;
    report.write_series_csv(&series_path)?;
    RunManifest {
        command: "simulate".into(),
        config_sha256: loaded.hash(),
        seed: cfg.seed,
        policy: Some(name.into()),
        crate_version: env!("CARGO_PKG_VERSION").into(),
        checkpoint_sha256: ckpt_hash,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: vec![report_path.clone(), series_path.clone()],
    }
    .write(&out.join(format!("{name}_manifest.json")))?;
    Ok(SimulateOutput {
        report,
        report_path,
        series_path,
    })
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub policy: String,
    pub intervals: usize,
    pub energy_total: f64,
    pub contention_mean: f64,
    pub cpu_util_mean: f64,
    pub ram_util_mean: f64,
    pub disk_util_mean: f64,
    pub net_util_mean: f64,
    pub tasks_completed: u64,
    pub avg_execution_time: Option<f64>,
    pub jobs_completed: u64,
    pub mean_job_completion: Option<f64>,
    pub sla_violation_rate: Option<f64>,
    pub mape: Option<f64>,
    pub f1: Option<f64>,
    pub mitigations: u64,
}

impl ComparisonRow {
    pub fn new(policy: &str, a: &Aggregates) -> Self {
        ComparisonRow {
            policy: policy.into(),
            intervals: a.intervals,
            energy_total: a.energy_total,
            contention_mean: a.contention_mean,
            cpu_util_mean: a.cpu_util_mean,
            ram_util_mean: a.ram_util_mean,
            disk_util_mean: a.disk_util_mean,
            net_util_mean: a.net_util_mean,
            tasks_completed: a.tasks_completed,
            avg_execution_time: a.avg_execution_time,
            jobs_completed: a.jobs_completed,
            mean_job_completion: a.mean_job_completion,
            sla_violation_rate: a.sla_violation_rate,
            mape: a.mape.value,
            f1: a.f1,
            mitigations: a.mitigations,
        }
    }
}

/// Column order of `compare.csv`, the field order of [`ComparisonRow`].
pub const COMPARISON_HEADER: [&str; 16] = [
    "policy",
    "intervals",
    "energy_total",
    "contention_mean",
    "cpu_util_mean",
    "ram_util_mean",
    "disk_util_mean",
    "net_util_mean",
    "tasks_completed",
    "avg_execution_time",
    "jobs_completed",
    "mean_job_completion",
    "sla_violation_rate",
    "mape",
    "f1",
    "mitigations",
];

fn write_comparison(rows: &[ComparisonRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(COMPARISON_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs every policy on the same trace and seed, writing each run's report
/// under `out/<policy>/` and the table to `out/compare.csv`. A failing run
/// stops the sweep; rows finished before it are still written.
pub fn cmd_compare(
    loaded: &LoadedConfig,
    policies: &[PolicyId],
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<Vec<ComparisonRow>> {
    if policies.len() < 2 {
        return Err(Error::invalid("compare needs at least two policies"));
    }
    let mut seen = Vec::new();
    for p in policies {
        if seen.contains(p) {
            return Err(Error::invalid(format!("policy {p} listed twice")));
        }
        seen.push(*p);
    }
    ensure_dir(out)?;
    let table = out.join("compare.csv");
    let mut rows = Vec::new();
    for &policy in policies {
        let mut run = loaded.clone();
        run.config.policy = policy;
        match cmd_simulate(&run, &out.join(policy.as_str()), checkpoint) {
            Ok(sim) => rows.push(ComparisonRow::new(policy.as_str(), &sim.report.aggregates)),
            Err(e) => {
                write_comparison(&rows, &table)?;
                return Err(e);
            }
        }
    }
    write_comparison(&rows, &table)?;
    Ok(rows)
}

/// Recomputes the aggregates of a stored report from its series (the JSON
/// copy, or `series_csv` when given) and fails unless they match exactly.
pub fn cmd_evaluate(report_path: &Path, series_csv: Option<&Path>) -> Result<Aggregates> {
    let report = MetricsReport::read_json(report_path)?;
    let series = match series_csv {
        Some(p) => crate::metrics::read_series_csv(p)?,
        None => report.series.clone(),
    };
    let recomputed = Aggregates::from_series(&series, report.options)?;
    if recomputed != report.aggregates {
        return Err(Error::Inconsistent(format!(
            "{}: stored aggregates differ from the series\nstored:     {:?}\nrecomputed: {:?}",
            report_path.display(),
            report.aggregates,
            recomputed
        )));
    }
    Ok(recomputed)
}
