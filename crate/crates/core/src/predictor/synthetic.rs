//! Synthetic training data with a known link between cluster load and the
//! tail of task response times.
//!
//! Each example draws a load regime, sets every host's utilization inside
//! the regime's band (with small per-observation drift), records a full
//! observation window, then samples the job's response times from the
//! regime's Pareto law. The label is the MLE fit of those samples, exactly
//! as for simulator-harvested data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PredictionWindow, TrainingExample};
use crate::error::Result;
use crate::model::{ClusterState, FeatureNorms, Host, HostId, HostSpec, Job, JobId, Task, TaskId, TaskState};
use crate::pareto::{fit_mle, ParetoParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    /// Host CPU utilization band.
    pub load: (f64, f64),
    pub tail: ParetoParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub examples: usize,
    pub hosts: usize,
    pub max_tasks_per_job: usize,
    pub window: usize,
    pub ema_weight: f64,
    pub seed: u64,
    pub regimes: Vec<Regime>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let regime = |lo, hi, alpha, beta| Regime {
            load: (lo, hi),
            tail: ParetoParams { alpha, beta },
        };
        SyntheticConfig {
            examples: 600,
            hosts: 2,
            max_tasks_per_job: 10,
            window: 5,
            ema_weight: 0.8,
            seed: 7,
            regimes: vec![
                regime(0.05, 0.3, 6.0, 60.0),
                regime(0.4, 0.6, 2.5, 150.0),
                regime(0.75, 1.0, 1.3, 400.0),
            ],
        }
    }
}

fn fleet(n: usize, q_max: usize) -> Result<ClusterState> {
    let hosts = (0..n)
        .map(|i| {
            let spec = HostSpec {
                class: format!("syn{}", i % 3),
                cpu_mips: 4000.0 + 2000.0 * (i % 3) as f64,
                ram_mb: 4096.0,
                disk_mb: 160_000.0,
                bw_kbps: 2.0,
                cost_per_interval: 3.0 + (i % 3) as f64,
                power_min: 108.0,
                power_max: 273.0,
            };
            Host::new(HostId(i), &spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let norms = FeatureNorms::from_hosts(&hosts, 2 * q_max, q_max);
    ClusterState::new(hosts, 300.0, norms)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<TrainingExample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.examples);
    while out.len() < cfg.examples {
        let id = out.len() as u64;
        let regime = &cfg.regimes[rng.random_range(0..cfg.regimes.len())];
        let mut state = fleet(cfg.hosts, cfg.max_tasks_per_job)?;
        let q = rng.random_range(2..=cfg.max_tasks_per_job);
        let job = JobId(id);
        let mut tasks = Vec::with_capacity(q);
        for a in 0..q {
            let tid = TaskId(id * 1000 + a as u64);
            let host = HostId(rng.random_range(0..cfg.hosts));
            tasks.push(tid);
            state.tasks.insert(
                tid,
                Task {
                    id: tid,
                    job_id: job,
                    cpu_req: rng.random_range(200.0..2000.0),
                    ram_req: rng.random_range(256.0..1024.0),
                    disk_req: rng.random_range(1000.0..10_000.0),
                    bw_req: rng.random_range(0.1..1.0),
                    length: 10_000.0,
                    progress: 0.0,
                    submit_time: 0.0,
                    start_time: Some(0.0),
                    completion_time: None,
                    restart_time_total: 0.0,
                    assigned_host: Some(host),
                    prev_host: None,
                    state: TaskState::Running,
                },
            );
        }
        state.jobs.insert(
            job,
            Job {
                id: job,
                tasks,
                deadline_driven: false,
                arrival_time: 0.0,
                sla_deadline: f64::INFINITY,
                sla_weight: 1.0,
                completion_time: None,
            },
        );

        let base: Vec<f64> = (0..cfg.hosts)
            .map(|_| rng.random_range(regime.load.0..=regime.load.1))
            .collect();
        let mut window = PredictionWindow::new(job, cfg.window);
        for _ in 0..cfg.window {
            for (h, b) in state.hosts.iter_mut().zip(&base) {
                let u = (b + rng.random_range(-0.03..0.03)).clamp(0.0, 1.0);
                h.cpu_used = u * h.cpu_capacity;
                h.ram_used = u * 0.8 * h.ram_capacity;
                h.disk_used = u * 0.5 * h.disk_capacity;
                h.bw_used = u * h.bw_capacity;
                h.active_task_count = (u * 2.0 * cfg.max_tasks_per_job as f64).round() as usize;
            }
            window.record(&state, cfg.ema_weight)?;
        }

        let times: Vec<f64> = (0..q).map(|_| regime.tail.sample(&mut rng)).collect();
        if let Ok(target) = fit_mle(&times) {
            out.push(TrainingExample {
                input_sequence: window.observations,
                target,
                response_times: times,
            });
        }
    }
    Ok(out)
}

/// Mean label of the given examples, the "always predict the average"
/// baseline. α is clipped at `alpha_cap` as in training.
pub fn global_mean(examples: &[&TrainingExample], alpha_cap: f64) -> ParetoParams {
    let n = examples.len().max(1) as f64;
    ParetoParams {
        alpha: examples.iter().map(|e| e.target.alpha.min(alpha_cap)).sum::<f64>() / n,
        beta: examples.iter().map(|e| e.target.beta).sum::<f64>() / n,
    }
}
