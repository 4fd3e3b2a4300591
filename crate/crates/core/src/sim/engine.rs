//! The simulation loop.
//!
//! Per host, the set of active runs only changes at events; in between,
//! rates and resource usage are constant ("segments"). Run progress and the
//! per-interval integrals behind energy, utilization and contention are
//! advanced lazily when a segment closes, so read-only events (predictor
//! observations, policy wake-ups that do nothing) leave every floating-point
//! result bit-identical.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::events::{CheckPurpose, EventKind, EventQueue, RunId};
use super::sampling::{derive_seed, sample_weibull};
use super::scheduler::choose_host;
use super::workload::{validate_trace, TraceRow};
use super::EngineConfig;
use crate::error::{Error, Result};
use crate::metrics::{
    disk_utilization, host_contention, memory_utilization, network_utilization, MetricsSample,
};
use crate::mitigation::{ActionKind, Directives, MitigationAction, Policy};
use crate::model::{ClusterState, FeatureNorms, Host, HostId, Job, JobId, Task, TaskId, TaskState};
use crate::pareto::{classify_stragglers, fit_mle, straggler_threshold};
use crate::predictor::{make_label, window_len, PredictionWindow, TrainingExample};

const STREAM_HOST_FAULT: u64 = 1;
const STREAM_VM_FAULT: u64 = 2;
const STREAM_TASK_FAULT: u64 = 3;
const STREAM_SCHEDULER: u64 = 4;
const STREAM_DOWNTIME: u64 = 5;

/// KB/s to bits/s.
const BITS_PER_KB: f64 = 8000.0;

#[derive(Debug, Clone)]
struct Run {
    task: TaskId,
    host: HostId,
    /// MI done as of `since`.
    progress: f64,
    rate: f64,
    started: f64,
    since: f64,
    /// Bumped whenever the completion event is rescheduled.
    epoch: u64,
    active: bool,
}

/// Constant per-host quantities of the current segment and their integrals
/// over the current interval.
#[derive(Debug, Clone, Default)]
struct HostLedger {
    seg_start: f64,
    demand: f64,
    util: f64,
    contention: f64,
    ram: f64,
    disk: f64,
    bw: f64,
    util_int: f64,
    contention_int: f64,
    ram_int: f64,
    disk_int: f64,
    bw_int: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultRecord {
    pub time: f64,
    pub kind: String,
    pub target: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub series: Vec<MetricsSample>,
    pub state: ClusterState,
    pub harvested: Vec<TrainingExample>,
    /// Watt-seconds per interval per host.
    pub host_energy: Vec<Vec<f64>>,
    pub faults: Vec<FaultRecord>,
}

pub struct Simulation {
    cfg: EngineConfig,
    state: ClusterState,
    policy: Box<dyn Policy>,
    queue: EventQueue,
    runs: Vec<Run>,
    host_runs: Vec<Vec<RunId>>,
    ledgers: Vec<HostLedger>,
    task_runs: BTreeMap<TaskId, Vec<RunId>>,
    attempts: BTreeMap<TaskId, u64>,
    restart_since: BTreeMap<TaskId, f64>,
    /// Seconds each task has run per host, over all its runs.
    run_time: BTreeMap<TaskId, BTreeMap<HostId, f64>>,
    waiting: Vec<TaskId>,
    pending_jobs: BTreeMap<JobId, (Job, Vec<Task>)>,
    host_fault_rngs: Vec<ChaCha8Rng>,
    vm_fault_rngs: Vec<ChaCha8Rng>,
    downtime_rngs: Vec<ChaCha8Rng>,
    sched_rng: ChaCha8Rng,
    sample: MetricsSample,
    series: Vec<MetricsSample>,
    host_energy: Vec<Vec<f64>>,
    straggler_counts: Vec<f64>,
    harvest_windows: BTreeMap<JobId, PredictionWindow>,
    harvested: Vec<TrainingExample>,
    faults: Vec<FaultRecord>,
    done: bool,
}

impl Simulation {
    pub fn new(cfg: EngineConfig, hosts: Vec<Host>, trace: &[TraceRow], policy: Box<dyn Policy>) -> Result<Self> {
        cfg.validate()?;
        validate_trace(trace)?;
        let n = hosts.len();
        let norms = FeatureNorms::from_hosts(&hosts, 2 * cfg.max_tasks_per_job, cfg.max_tasks_per_job);
        let state = ClusterState::new(hosts, cfg.interval_seconds, norms)?;
        let l = cfg.interval_seconds;

        let mut pending_jobs: BTreeMap<JobId, (Job, Vec<Task>)> = BTreeMap::new();
        for row in trace {
            let job_id = JobId(row.job_id);
            let arrival = row.arrival_interval as f64 * l;
            let entry = pending_jobs.entry(job_id).or_insert_with(|| {
                (
                    Job {
                        id: job_id,
                        tasks: Vec::new(),
                        deadline_driven: row.deadline_driven,
                        arrival_time: arrival,
                        sla_deadline: 0.0,
                        sla_weight: 1.0,
                        completion_time: None,
                    },
                    Vec::new(),
                )
            });
            let standalone = row.length_mi / row.cpu_mips;
            entry.0.sla_deadline = entry.0.sla_deadline.max(cfg.sla_slack * standalone);
            entry.0.tasks.push(TaskId(row.task_id));
            entry.1.push(Task {
                id: TaskId(row.task_id),
                job_id,
                cpu_req: row.cpu_mips,
                ram_req: row.ram_mb,
                disk_req: row.disk_mb,
                bw_req: row.bw_kbps,
                length: row.length_mi,
                progress: 0.0,
                submit_time: arrival,
                start_time: None,
                completion_time: None,
                restart_time_total: 0.0,
                assigned_host: None,
                prev_host: None,
                state: TaskState::Queued,
            });
        }
        if let Some((job, _)) = pending_jobs.values().find(|(j, _)| j.tasks.len() > cfg.max_tasks_per_job) {
            return Err(Error::Trace(format!(
                "{} has {} tasks, more than max_tasks_per_job = {}",
                job.id,
                job.tasks.len(),
                cfg.max_tasks_per_job
            )));
        }

        let stream = |tag: u64, i: usize| ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[tag, i as u64]));
        let mut sim = Simulation {
            host_fault_rngs: (0..n).map(|i| stream(STREAM_HOST_FAULT, i)).collect(),
            vm_fault_rngs: (0..n).map(|i| stream(STREAM_VM_FAULT, i)).collect(),
            downtime_rngs: (0..n).map(|i| stream(STREAM_DOWNTIME, i)).collect(),
            sched_rng: stream(STREAM_SCHEDULER, 0),
            cfg,
            state,
            policy,
            queue: EventQueue::new(),
            runs: Vec::new(),
            host_runs: vec![Vec::new(); n],
            ledgers: vec![HostLedger::default(); n],
            task_runs: BTreeMap::new(),
            attempts: BTreeMap::new(),
            restart_since: BTreeMap::new(),
            run_time: BTreeMap::new(),
            waiting: Vec::new(),
            pending_jobs,
            sample: MetricsSample::default(),
            series: Vec::new(),
            host_energy: Vec::new(),
            straggler_counts: vec![0.0; n],
            harvest_windows: BTreeMap::new(),
            harvested: Vec::new(),
            faults: Vec::new(),
            done: false,
        };

        for (job, (j, _)) in &sim.pending_jobs {
            sim.queue.push(j.arrival_time, EventKind::JobArrival { job: *job });
        }
        sim.queue.push(0.0, EventKind::IntervalBoundary { index: 0 });
        let f = &sim.cfg.faults;
        if f.enabled {
            let (host_faults, vm_faults) = (f.host_faults, f.vm_faults);
            for h in 0..n {
                if host_faults {
                    let t = sim.host_ttf(h)?;
                    sim.queue.push(t, EventKind::HostFault { host: HostId(h) });
                }
                if vm_faults {
                    let t = sim.vm_ttf(h)?;
                    sim.queue.push(t, EventKind::VmCreationFault { host: HostId(h) });
                }
            }
        }
        Ok(sim)
    }

    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn run(mut self) -> Result<SimOutcome> {
        while self.step()? {}
        Ok(SimOutcome {
            series: self.series,
            state: self.state,
            harvested: self.harvested,
            host_energy: self.host_energy,
            faults: self.faults,
        })
    }

    /// Processes one event; false once the horizon has been reached.
    pub fn step(&mut self) -> Result<bool> {
        if self.done {
            return Ok(false);
        }
        let Some(ev) = self.queue.pop() else {
            return Err(Error::Inconsistent("event queue drained before the horizon".into()));
        };
        if ev.time < self.state.now {
            return Err(Error::Inconsistent(format!(
                "event at {} precedes clock {}",
                ev.time, self.state.now
            )));
        }
        self.state.now = ev.time;
        let t = ev.time;
        match ev.kind {
            EventKind::TaskComplete { run, epoch } => self.on_run_complete(run, epoch, t)?,
            EventKind::HostFault { host } => self.on_host_fault(host, t)?,
            EventKind::HostRecover { host } => self.on_host_recover(host, t)?,
            EventKind::TaskFault { run, .. } => self.on_task_fault(run, t)?,
            EventKind::VmCreationFault { host } => self.on_vm_fault(host, t)?,
            EventKind::JobArrival { job } => self.on_job_arrival(job, t)?,
            EventKind::IntervalBoundary { index } => self.on_boundary(index, t)?,
            EventKind::MitigationCheck { job, purpose } => match purpose {
                CheckPurpose::Observe => self.on_observe(job)?,
                CheckPurpose::Wake => {
                    if self.state.jobs.contains_key(&job) {
                        let mut out = Directives::default();
                        self.policy.on_wake(&self.state, job, &mut out)?;
                        self.apply(out, t)?;
                    }
                }
            },
        }
        Ok(!self.done)
    }

    fn weibull_units(&self, rng: &mut ChaCha8Rng) -> Result<f64> {
        let f = &self.cfg.faults;
        Ok(sample_weibull(rng, f.weibull_shape, f.weibull_scale)? * self.cfg.fault_time_unit())
    }

    fn host_ttf(&mut self, h: usize) -> Result<f64> {
        let mut rng = self.host_fault_rngs[h].clone();
        let dt = self.weibull_units(&mut rng)?;
        self.host_fault_rngs[h] = rng;
        Ok(self.state.now + dt)
    }

    fn vm_ttf(&mut self, h: usize) -> Result<f64> {
        let mut rng = self.vm_fault_rngs[h].clone();
        let dt = self.weibull_units(&mut rng)?;
        self.vm_fault_rngs[h] = rng;
        Ok(self.state.now + dt)
    }

    fn log_fault(&mut self, t: f64, kind: &str, target: u64) {
        log::debug!("fault at {t:.1}s: {kind} {target}");
        self.faults.push(FaultRecord {
            time: t,
            kind: kind.into(),
            target,
        });
    }

    // ---- host segments -------------------------------------------------

    /// Accumulates the open segment's integrals up to `t`.
    fn close_segment(&mut self, h: usize, t: f64) {
        let led = &mut self.ledgers[h];
        let dt = t - led.seg_start;
        if dt > 0.0 {
            led.util_int += led.util * dt;
            led.contention_int += led.contention * dt;
            led.ram_int += led.ram * dt;
            led.disk_int += led.disk * dt;
            led.bw_int += led.bw * dt;
        }
        led.seg_start = t;
    }

    /// Brings run progress on host `h` up to `t` and closes its segment.
    fn sync_host(&mut self, h: usize, t: f64) {
        for &r in &self.host_runs[h] {
            let run = &mut self.runs[r];
            run.progress += run.rate * (t - run.since);
            run.since = t;
            let task = self.state.tasks.get_mut(&run.task).unwrap();
            task.progress = task.progress.max(run.progress.min(task.length));
        }
        self.close_segment(h, t);
    }

    /// Recomputes rates and usage after the run set of `h` changed, and
    /// reschedules the completions of its runs.
    fn recompute_host(&mut self, h: usize, t: f64) -> Result<()> {
        let cap = self.state.hosts[h].cpu_capacity;
        let demands: Vec<f64> = self.host_runs[h]
            .iter()
            .map(|r| self.state.tasks[&self.runs[*r].task].cpu_req)
            .collect();
        let demand: f64 = demands.iter().sum();
        let scale = if demand > cap { cap / demand } else { 1.0 };
        let (mut cpu, mut ram, mut disk, mut bw) = (0.0, 0.0, 0.0, 0.0);
        for (&r, d) in self.host_runs[h].iter().zip(&demands) {
            let task = &self.state.tasks[&self.runs[r].task];
            let run = &mut self.runs[r];
            run.rate = d * scale;
            run.since = t;
            run.epoch += 1;
            cpu += run.rate;
            ram += task.ram_req;
            disk += task.disk_req;
            bw += task.bw_req;
            if !(run.rate > 0.0) {
                return Err(Error::Inconsistent(format!("run {r} on host {h} has rate {}", run.rate)));
            }
            let remaining = (task.length - run.progress).max(0.0);
            self.queue.push(t + remaining / run.rate, EventKind::TaskComplete { run: r, epoch: run.epoch });
        }
        let host = &mut self.state.hosts[h];
        host.cpu_used = cpu;
        host.ram_used = ram;
        host.disk_used = disk;
        host.bw_used = bw;
        host.active_task_count = self.host_runs[h].len();
        let led = &mut self.ledgers[h];
        led.demand = demand;
        led.util = (cpu / cap).clamp(0.0, 1.0);
        led.contention = host_contention(cap, &demands);
        led.ram = ram;
        led.disk = disk;
        led.bw = bw;
        Ok(())
    }

    // ---- runs -----------------------------------------------------------

    fn start_run(&mut self, task: TaskId, host: HostId, t: f64) -> Result<()> {
        let h = host.0;
        self.sync_host(h, t);
        let r = self.runs.len();
        self.runs.push(Run {
            task,
            host,
            progress: 0.0,
            rate: 0.0,
            started: t,
            since: t,
            epoch: 0,
            active: true,
        });
        self.host_runs[h].push(r);
        let runs = self.task_runs.entry(task).or_default();
        runs.push(r);
        let first = runs.len() == 1;
        let attempt = {
            let a = self.attempts.entry(task).or_insert(0);
            *a += 1;
            *a
        };
        let tk = self.state.tasks.get_mut(&task).unwrap();
        tk.start_time.get_or_insert(t);
        if first {
            tk.assigned_host = Some(host);
            tk.progress = 0.0;
        }
        if let Some(since) = self.restart_since.remove(&task) {
            tk.restart_time_total += t - since;
        }
        self.recompute_host(h, t)?;

        let f = &self.cfg.faults;
        if f.enabled && f.task_faults {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[STREAM_TASK_FAULT, task.0, attempt]));
            let dt = self.weibull_units(&mut rng)?;
            self.queue.push(t + dt, EventKind::TaskFault { run: r, epoch: 0 });
        }
        Ok(())
    }

    /// Stops run `r` without completing its task.
    fn cancel_run(&mut self, r: RunId, t: f64) -> Result<()> {
        let h = self.runs[r].host.0;
        self.sync_host(h, t);
        self.detach_run(r);
        self.recompute_host(h, t)
    }

    /// Call after `sync_host`, so `since` is the current time.
    fn detach_run(&mut self, r: RunId) {
        let run = &mut self.runs[r];
        run.active = false;
        let (h, task) = (run.host.0, run.task);
        *self.run_time.entry(task).or_default().entry(run.host).or_insert(0.0) += run.since - run.started;
        self.host_runs[h].retain(|x| *x != r);
        if let Some(v) = self.task_runs.get_mut(&task) {
            v.retain(|x| *x != r);
        }
    }

    /// After losing its last run, `task` goes back to the queue and its
    /// restart clock starts.
    fn requeue(&mut self, task: TaskId, from: HostId, t: f64) {
        let tk = self.state.tasks.get_mut(&task).unwrap();
        tk.state = TaskState::Queued;
        tk.progress = 0.0;
        tk.prev_host = Some(from);
        tk.assigned_host = None;
        self.restart_since.insert(task, t);
        self.waiting.push(task);
    }

    fn active_runs(&self, task: TaskId) -> &[RunId] {
        self.task_runs.get(&task).map_or(&[], |v| v.as_slice())
    }

    /// Continues a task on its remaining copy, or requeues it.
    fn after_run_lost(&mut self, task: TaskId, host: HostId, t: f64) {
        match self.active_runs(task).first().copied() {
            Some(other) => {
                let other_host = self.runs[other].host;
                let tk = self.state.tasks.get_mut(&task).unwrap();
                tk.state = TaskState::Running;
                tk.assigned_host = Some(other_host);
            }
            None => self.requeue(task, host, t),
        }
    }

    // ---- event handlers -------------------------------------------------

    fn on_run_complete(&mut self, r: RunId, epoch: u64, t: f64) -> Result<()> {
        let run = &self.runs[r];
        if !run.active || run.epoch != epoch {
            return Ok(());
        }
        let (task, host) = (run.task, run.host);
        let h = host.0;
        self.sync_host(h, t);
        self.detach_run(r);
        self.recompute_host(h, t)?;
        for other in self.active_runs(task).to_vec() {
            self.cancel_run(other, t)?;
        }

        let tk = self.state.tasks.get_mut(&task).unwrap();
        tk.state = TaskState::Completed;
        tk.completion_time = Some(t);
        tk.progress = tk.length;
        tk.assigned_host = Some(host);
        self.sample.tasks_completed += 1;
        self.sample.sum_response += t - tk.submit_time;
        self.sample.sum_restart += tk.restart_time_total;
        let job = tk.job_id;

        let mut out = Directives::default();
        self.policy.on_task_complete(&self.state, task, &mut out);
        self.apply(out, t)?;

        let j = &self.state.jobs[&job];
        if j.completion_time.is_none() && j.tasks.iter().all(|x| self.state.tasks[x].state == TaskState::Completed) {
            self.finish_job(job, t)?;
        }
        Ok(())
    }

    fn finish_job(&mut self, job: JobId, t: f64) -> Result<()> {
        let j = self.state.jobs.get_mut(&job).unwrap();
        j.completion_time = Some(t);
        self.sample.jobs_completed += 1;
        self.sample.sum_job_completion += t - j.arrival_time;
        if j.deadline_driven {
            self.sample.sla_resolved += 1;
            if t > j.deadline_at() {
                self.sample.sla_violations += j.sla_weight;
            }
        }
        let ids = j.tasks.clone();

        let verdict = self.policy.on_job_complete(&self.state, job);
        let times: Vec<f64> = ids.iter().filter_map(|x| self.state.tasks[x].response_time()).collect();
        let k = verdict.k.unwrap_or(self.cfg.straggler_k);
        let stragglers = match fit_mle(&times).and_then(|label| straggler_threshold(&label, k)) {
            Ok(threshold) => classify_stragglers(&times, threshold),
            Err(_) => vec![false; times.len()],
        };
        for (id, is_straggler) in ids.iter().zip(&stragglers) {
            if *is_straggler {
                if let Some(h) = self.dominant_host(*id) {
                    self.straggler_counts[h.0] += 1.0;
                }
            }
        }
        if let Some(p) = verdict.predicted_stragglers {
            self.sample.stragglers_actual += stragglers.iter().filter(|s| **s).count() as f64;
            self.sample.stragglers_predicted = Some(self.sample.stragglers_predicted.unwrap_or(0.0) + p);
        }
        if verdict.predicted_stragglers.is_some() || !verdict.flagged.is_empty() {
            let flagged: BTreeSet<TaskId> = verdict.flagged.iter().copied().collect();
            for (id, actual) in ids.iter().zip(&stragglers) {
                match (*actual, flagged.contains(id)) {
                    (true, true) => self.sample.tp += 1,
                    (false, true) => self.sample.fp += 1,
                    (true, false) => self.sample.fn_ += 1,
                    (false, false) => {}
                }
            }
        }

        if let Some(window) = self.harvest_windows.remove(&job) {
            if window.is_complete() {
                let tasks: Vec<&Task> = ids.iter().map(|x| &self.state.tasks[x]).collect();
                if let Some((target, response_times)) = make_label(&tasks) {
                    self.harvested.push(TrainingExample {
                        input_sequence: window.observations,
                        target,
                        response_times,
                    });
                }
            }
        }
        for id in &ids {
            self.run_time.remove(id);
            self.task_runs.remove(id);
        }
        Ok(())
    }

    /// The host a task spent the most run time on; ties go to the lower id.
    fn dominant_host(&self, task: TaskId) -> Option<HostId> {
        self.run_time
            .get(&task)?
            .iter()
            .fold(None, |best: Option<(HostId, f64)>, (h, secs)| match best {
                Some((_, b)) if b >= *secs => best,
                _ => Some((*h, *secs)),
            })
            .map(|(h, _)| h)
    }

    fn on_host_fault(&mut self, host: HostId, t: f64) -> Result<()> {
        let h = host.0;
        if !self.state.hosts[h].online {
            return Ok(());
        }
        self.log_fault(t, "host", h as u64);
        self.sync_host(h, t);
        let killed = std::mem::take(&mut self.host_runs[h]);
        for &r in &killed {
            let task = self.runs[r].task;
            self.detach_run(r);
            self.straggler_counts[h] += 1.0;
            self.after_run_lost(task, host, t);
        }
        self.state.hosts[h].online = false;
        self.recompute_host(h, t)?;
        let max = self.cfg.faults.max_downtime_intervals;
        let down = self.downtime_rngs[h].random_range(1..=max);
        self.state.hosts[h].downtime_remaining = down;
        self.queue.push(t + down as f64 * self.cfg.interval_seconds, EventKind::HostRecover { host });
        Ok(())
    }

    fn on_host_recover(&mut self, host: HostId, t: f64) -> Result<()> {
        let h = host.0;
        self.close_segment(h, t);
        let hs = &mut self.state.hosts[h];
        hs.online = true;
        hs.downtime_remaining = 0;
        let next = self.host_ttf(h)?;
        self.queue.push(next, EventKind::HostFault { host });
        Ok(())
    }

    fn on_task_fault(&mut self, r: RunId, t: f64) -> Result<()> {
        if !self.runs[r].active {
            return Ok(());
        }
        let (task, host) = (self.runs[r].task, self.runs[r].host);
        self.log_fault(t, "task", task.0);
        self.cancel_run(r, t)?;
        self.straggler_counts[host.0] += 1.0;
        self.after_run_lost(task, host, t);
        Ok(())
    }

    fn on_vm_fault(&mut self, host: HostId, t: f64) -> Result<()> {
        self.log_fault(t, "vm_creation", host.0 as u64);
        self.state.hosts[host.0].vm_creation_fault_pending = true;
        let next = self.vm_ttf(host.0)?;
        self.queue.push(next, EventKind::VmCreationFault { host });
        Ok(())
    }

    fn on_job_arrival(&mut self, job: JobId, t: f64) -> Result<()> {
        let (j, tasks) = self
            .pending_jobs
            .remove(&job)
            .ok_or_else(|| Error::Inconsistent(format!("{job} arrived twice")))?;
        for task in tasks {
            self.waiting.push(task.id);
            self.state.tasks.insert(task.id, task);
        }
        self.state.jobs.insert(job, j);
        if let Some(h) = &self.cfg.harvest {
            let n = window_len(h.period, h.duration);
            self.harvest_windows.insert(job, PredictionWindow::new(job, n));
            for i in 1..=n {
                let purpose = CheckPurpose::Observe;
                self.queue.push(t + h.period * i as f64, EventKind::MitigationCheck { job, purpose });
            }
        }
        let mut out = Directives::default();
        self.policy.on_job_arrival(&self.state, job, &mut out)?;
        self.apply(out, t)
    }

    fn on_observe(&mut self, job: JobId) -> Result<()> {
        let Some(h) = &self.cfg.harvest else { return Ok(()) };
        let weight = h.ema_weight;
        let finished = self.state.jobs.get(&job).is_none_or(|j| j.completion_time.is_some());
        if let Some(window) = self.harvest_windows.get_mut(&job) {
            if !finished && !window.is_complete() {
                window.record(&self.state, weight)?;
            }
        }
        Ok(())
    }

    fn on_boundary(&mut self, index: u64, t: f64) -> Result<()> {
        let horizon = self.cfg.horizon;
        if index > 0 {
            if index == horizon {
                self.resolve_open_deadlines(t);
            }
            self.close_interval(index - 1, t);
        }
        if index >= horizon {
            for task in self.state.tasks.values_mut() {
                if task.state != TaskState::Completed {
                    task.state = TaskState::Failed;
                }
            }
            self.done = true;
            return Ok(());
        }
        self.state.interval_index = index;

        let mut out = Directives::default();
        self.policy.on_interval(&self.state, &mut out);
        self.apply(out, t)?;
        self.schedule_waiting(t)?;
        self.queue.push((index + 1) as f64 * self.cfg.interval_seconds, EventKind::IntervalBoundary { index: index + 1 });
        Ok(())
    }

    /// Deadline jobs still running at the horizon whose deadline has passed
    /// count as violations.
    fn resolve_open_deadlines(&mut self, t: f64) {
        for j in self.state.jobs.values() {
            if j.deadline_driven && j.completion_time.is_none() && j.deadline_at() <= t {
                self.sample.sla_resolved += 1;
                self.sample.sla_violations += j.sla_weight;
            }
        }
    }

    fn close_interval(&mut self, index: u64, t: f64) {
        let l = self.cfg.interval_seconds;
        let n = self.state.hosts.len() as f64;
        let (buffer, cache) = (self.cfg.memory_buffer_fraction, self.cfg.memory_cache_fraction);
        let mut energies = Vec::with_capacity(self.state.hosts.len());
        let (mut energy, mut contention) = (0.0, 0.0);
        let (mut cpu, mut ram, mut disk, mut net) = (0.0, 0.0, 0.0, 0.0);
        for h in 0..self.state.hosts.len() {
            self.close_segment(h, t);
            let host = &self.state.hosts[h];
            let led = &mut self.ledgers[h];
            let e = host.power_min * l + (host.power_max - host.power_min) * led.util_int;
            energies.push(e);
            energy += e;
            contention += led.contention_int / l;
            cpu += (led.util_int / l * 100.0).clamp(0.0, 100.0);
            ram += memory_utilization(
                host.ram_capacity,
                led.ram_int / l,
                buffer * host.ram_capacity,
                cache * host.ram_capacity,
            );
            disk += disk_utilization(host.disk_capacity, led.disk_int / l);
            net += network_utilization(led.bw_int * BITS_PER_KB, host.bw_capacity * BITS_PER_KB, l);
            led.util_int = 0.0;
            led.contention_int = 0.0;
            led.ram_int = 0.0;
            led.disk_int = 0.0;
            led.bw_int = 0.0;
        }
        let mut s = std::mem::take(&mut self.sample);
        s.interval_index = index;
        s.energy = energy;
        s.contention = contention;
        s.cpu_util = cpu / n;
        s.ram_util = ram / n;
        s.disk_util = disk / n;
        s.net_util = net / n;
        s.queued = self.waiting.len() as u64;
        s.running = self.task_runs.values().filter(|v| !v.is_empty()).count() as u64;
        s.online_hosts = self.state.hosts.iter().filter(|h| h.online).count() as u64;
        self.series.push(s);
        self.host_energy.push(energies);

        let w = self.cfg.ema_weight;
        for (ema, count) in self.state.straggler_ema_per_host.iter_mut().zip(&mut self.straggler_counts) {
            *ema = w * *count + (1.0 - w) * *ema;
            *count = 0.0;
        }
    }

    fn schedule_waiting(&mut self, t: f64) -> Result<()> {
        let waiting = std::mem::take(&mut self.waiting);
        let mut still = Vec::new();
        for task in waiting {
            if self.state.tasks[&task].state != TaskState::Queued {
                continue;
            }
            let (ram, disk) = (self.state.tasks[&task].ram_req, self.state.tasks[&task].disk_req);
            let mut exclude = Vec::new();
            loop {
                let loads: Vec<f64> = self
                    .ledgers
                    .iter()
                    .zip(&self.state.hosts)
                    .map(|(l, h)| l.demand / h.cpu_capacity)
                    .collect();
                let Some(host) = choose_host(
                    self.cfg.scheduler,
                    &self.state.hosts,
                    &loads,
                    ram,
                    disk,
                    &exclude,
                    &mut self.sched_rng,
                ) else {
                    still.push(task);
                    break;
                };
                if !self.policy.admit(&self.state, task, host) {
                    still.push(task);
                    break;
                }
                if self.state.hosts[host.0].vm_creation_fault_pending {
                    self.state.hosts[host.0].vm_creation_fault_pending = false;
                    log::debug!("placement of {task} on {host} failed (vm creation fault)");
                    exclude.push(host);
                    continue;
                }
                self.state.tasks.get_mut(&task).unwrap().state = TaskState::Running;
                self.start_run(task, host, t)?;
                let mut out = Directives::default();
                self.policy.on_task_started(&self.state, task, host, &mut out);
                self.apply(out, t)?;
                break;
            }
        }
        still.append(&mut self.waiting);
        self.waiting = still;
        Ok(())
    }

    // ---- mitigation -----------------------------------------------------

    fn apply(&mut self, out: Directives, t: f64) -> Result<()> {
        for (when, job) in out.wakeups {
            let purpose = CheckPurpose::Wake;
            self.queue.push(when.max(t), EventKind::MitigationCheck { job, purpose });
        }
        for action in out.actions {
            if self.apply_action(action, t)? {
                self.sample.mitigations += 1;
            } else {
                log::debug!("skipped {action:?}");
            }
        }
        Ok(())
    }

    /// True when the action changed anything.
    fn apply_action(&mut self, a: MitigationAction, t: f64) -> Result<bool> {
        let Some(target) = a.target else { return Ok(false) };
        let Some(task) = self.state.tasks.get(&a.task) else { return Ok(false) };
        let host = &self.state.hosts[target.0];
        if task.is_finished() || !host.online || !host.fits(task.ram_req, task.disk_req) {
            return Ok(false);
        }
        let runs = self.active_runs(a.task).to_vec();
        if runs.iter().any(|r| self.runs[*r].host == target) {
            return Ok(false);
        }
        let queued = runs.is_empty();
        let from: Vec<HostId> = runs.iter().map(|r| self.runs[*r].host).collect();
        let done = runs
            .iter()
            .map(|r| {
                let run = &self.runs[*r];
                run.progress + run.rate * (t - run.since)
            })
            .fold(0.0, f64::max)
            / task.length;
        match a.kind {
            ActionKind::Speculate | ActionKind::Clone => {
                if runs.len() > 1 {
                    return Ok(false);
                }
                self.waiting.retain(|x| *x != a.task);
                self.start_run(a.task, target, t)?;
                self.state.tasks.get_mut(&a.task).unwrap().state =
                    if queued { TaskState::Running } else { TaskState::Speculating };
            }
            ActionKind::Rerun => {
                for r in runs {
                    self.cancel_run(r, t)?;
                }
                if !queued {
                    self.restart_since.insert(a.task, t);
                }
                self.waiting.retain(|x| *x != a.task);
                let tk = self.state.tasks.get_mut(&a.task).unwrap();
                tk.progress = 0.0;
                if let Some(prev) = tk.assigned_host {
                    tk.prev_host = Some(prev);
                }
                self.start_run(a.task, target, t)?;
                let tk = self.state.tasks.get_mut(&a.task).unwrap();
                tk.state = if queued { TaskState::Running } else { TaskState::Rerunning };
                tk.assigned_host = Some(target);
            }
            ActionKind::None | ActionKind::DelayStart => return Ok(false),
        }
        log::debug!(
            "{:?} {} {from:?} -> {target} at {t:.1}s, {:.0}% done",
            a.kind,
            a.task,
            100.0 * done
        );
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitigation::NoMitigation;
    use crate::model::tests::spec;
    use crate::sim::FaultConfig;

    fn quiet() -> EngineConfig {
        EngineConfig {
            horizon: 4,
            faults: FaultConfig {
                enabled: false,
                ..FaultConfig::default()
            },
            ..EngineConfig::default()
        }
    }

    fn row(task_id: u64, job_id: u64, cpu: f64, length: f64) -> TraceRow {
        TraceRow {
            task_id,
            job_id,
            arrival_interval: 0,
            cpu_mips: cpu,
            ram_mb: 256.0,
            disk_mb: 500.0,
            bw_kbps: 0.5,
            length_mi: length,
            deadline_driven: true,
        }
    }

    fn hosts(caps: &[f64]) -> Vec<Host> {
        caps.iter()
            .enumerate()
            .map(|(i, c)| Host::new(HostId(i), &spec(*c)).unwrap())
            .collect()
    }

    fn completions(out: &SimOutcome) -> Vec<f64> {
        out.state.tasks.values().map(|t| t.completion_time.unwrap()).collect()
    }

    #[test]
    fn capped_rate_hand_example() {
        // both tasks request 100 MIPS, so the faster host cannot speed up its task
        let trace = [row(0, 0, 100.0, 30_000.0), row(1, 0, 100.0, 30_000.0)];
        let out = Simulation::new(quiet(), hosts(&[100.0, 200.0]), &trace, Box::new(NoMitigation))
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(completions(&out), vec![300.0, 300.0]);
        let placed: Vec<_> = out.state.tasks.values().map(|t| t.assigned_host.unwrap()).collect();
        assert_eq!(placed, vec![HostId(0), HostId(1)]);
    }

    #[test]
    fn faster_host_finishes_first_when_demand_allows() {
        let trace = [row(0, 0, 200.0, 30_000.0), row(1, 0, 200.0, 30_000.0)];
        let out = Simulation::new(quiet(), hosts(&[100.0, 200.0]), &trace, Box::new(NoMitigation))
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(completions(&out), vec![300.0, 150.0]);
    }

    #[test]
    fn overloaded_host_shares_proportionally() {
        // 100 MIPS host, demands 100 and 300: rates 25 and 75
        let trace = [row(0, 0, 100.0, 2_500.0), row(1, 0, 300.0, 30_000.0)];
        let out = Simulation::new(quiet(), hosts(&[100.0]), &trace, Box::new(NoMitigation))
            .unwrap()
            .run()
            .unwrap();
        let c = completions(&out);
        assert_eq!(c[0], 100.0);
        // 7500 MI done by t = 100, then alone at 100 MIPS (capped by capacity)
        assert_eq!(c[1], 100.0 + 22_500.0 / 100.0);
        // contention: 400 demand for the first 100 s, 300 for the next 225 s, capped at 300 s
        assert_eq!(out.series[0].contention, (400.0 * 100.0 + 300.0 * 200.0) / 300.0);
    }

    #[test]
    fn idle_fleet_draws_idle_power() {
        let cfg = EngineConfig { horizon: 48, ..quiet() };
        let out = Simulation::new(cfg, hosts(&[1000.0; 20]), &[], Box::new(NoMitigation))
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(out.series.len(), 48);
        let total: f64 = out.series.iter().map(|s| s.energy).sum();
        assert_eq!(total, 20.0 * 108.0 * 48.0 * 300.0);
        assert!(out.series.iter().all(|s| s.cpu_util == 0.0 && s.ram_util == 0.0 && s.net_util == 0.0));
    }

    #[test]
    fn half_loaded_host_energy() {
        let cfg = EngineConfig { horizon: 1, ..quiet() };
        let trace = [row(0, 0, 500.0, 1e9)];
        let out = Simulation::new(cfg, hosts(&[1000.0]), &trace, Box::new(NoMitigation))
            .unwrap()
            .run()
            .unwrap();
        assert_eq!(out.series[0].energy, 190.5 * 300.0);
        assert_eq!(out.series[0].cpu_util, 50.0);
        assert_eq!(out.state.tasks[&TaskId(0)].state, TaskState::Failed);
    }

    #[test]
    fn host_fault_requeues_its_tasks() {
        let mut sim = Simulation::new(
            quiet(),
            hosts(&[1000.0, 1000.0]),
            &[row(0, 0, 100.0, 1e6), row(1, 0, 100.0, 1e6), row(2, 0, 100.0, 1e6)],
            Box::new(NoMitigation),
        )
        .unwrap();
        while sim.state.now < 1.0 {
            sim.step().unwrap();
            if sim.state.tasks.len() == 3 && sim.waiting.is_empty() {
                break;
            }
        }
        // least-loaded placement alternates: hosts 0, 1, 0
        sim.state.now = 10.0;
        sim.on_host_fault(HostId(0), 10.0).unwrap();
        assert!(!sim.state.hosts[0].online);
        assert_eq!(sim.waiting, vec![TaskId(0), TaskId(2)]);
        assert!(sim.host_runs[0].is_empty());
        assert_eq!(sim.state.tasks[&TaskId(1)].state, TaskState::Running);

        sim.on_host_fault(HostId(0), 10.0).unwrap();
        assert_eq!(sim.waiting.len(), 2, "offline host cannot fault again");
    }

    #[test]
    fn fault_on_idle_host_restarts_nothing() {
        let mut sim = Simulation::new(quiet(), hosts(&[1000.0]), &[], Box::new(NoMitigation)).unwrap();
        sim.on_host_fault(HostId(0), 0.0).unwrap();
        assert!(!sim.state.hosts[0].online);
        assert!(sim.waiting.is_empty());
    }

    #[test]
    fn speculation_keeps_first_finisher() {
        let mut sim = Simulation::new(
            quiet(),
            hosts(&[100.0, 1000.0]),
            &[row(0, 0, 1000.0, 60_000.0)],
            Box::new(NoMitigation),
        )
        .unwrap();
        // boundary 0 places the task on host 0 (lowest id, both idle)
        sim.step().unwrap();
        sim.step().unwrap();
        assert_eq!(sim.state.tasks[&TaskId(0)].assigned_host, Some(HostId(0)));
        sim.state.now = 10.0;
        let spec = MitigationAction::new(ActionKind::Speculate, TaskId(0), HostId(1));
        assert!(sim.apply_action(spec, 10.0).unwrap());
        assert_eq!(sim.state.tasks[&TaskId(0)].state, TaskState::Speculating);
        assert!(!sim.apply_action(spec, 10.0).unwrap(), "already running there");
        let out = sim.run().unwrap();
        let t = &out.state.tasks[&TaskId(0)];
        // copy on host 1 runs at 1000 MIPS from t = 10
        assert_eq!(t.completion_time, Some(70.0));
        assert_eq!(t.assigned_host, Some(HostId(1)));
        assert_eq!(out.series[0].tasks_completed, 1);
    }

    #[test]
    fn rerun_restarts_fresh() {
        let mut sim = Simulation::new(
            quiet(),
            hosts(&[100.0, 1000.0]),
            &[row(0, 0, 1000.0, 60_000.0)],
            Box::new(NoMitigation),
        )
        .unwrap();
        sim.step().unwrap();
        sim.step().unwrap();
        sim.state.now = 10.0;
        let rerun = MitigationAction::new(ActionKind::Rerun, TaskId(0), HostId(1));
        assert!(sim.apply_action(rerun, 10.0).unwrap());
        let out = sim.run().unwrap();
        let t = &out.state.tasks[&TaskId(0)];
        assert_eq!(t.completion_time, Some(70.0));
        assert_eq!(t.prev_host, Some(HostId(0)));
        assert_eq!(t.restart_time_total, 0.0);
    }

    #[test]
    fn deadline_is_slack_times_longest_task() {
        let trace = [row(0, 0, 100.0, 30_000.0), row(1, 0, 200.0, 20_000.0)];
        let sim = Simulation::new(quiet(), hosts(&[1000.0]), &trace, Box::new(NoMitigation)).unwrap();
        assert_eq!(sim.pending_jobs[&JobId(0)].0.sla_deadline, 1.5 * 300.0);
    }

    #[test]
    fn oversized_jobs_are_rejected() {
        let trace: Vec<_> = (0..11).map(|i| row(i, 0, 100.0, 1000.0)).collect();
        assert!(Simulation::new(quiet(), hosts(&[1000.0]), &trace, Box::new(NoMitigation)).is_err());
    }

    fn busy_run(policy: Box<dyn Policy>, seed: u64) -> SimOutcome {
        run_with(cfg_for(seed), policy, seed)
    }

    fn cfg_for(seed: u64) -> EngineConfig {
        EngineConfig {
            horizon: 24,
            seed,
            harvest: Some(crate::sim::HarvestConfig {
                period: 1.0,
                duration: 5.0,
                ema_weight: 0.8,
            }),
            ..EngineConfig::default()
        }
    }

    fn run_with(cfg: EngineConfig, policy: Box<dyn Policy>, seed: u64) -> SimOutcome {
        let wl = crate::sim::workload::WorkloadConfig {
            poisson_lambda: 0.6,
            ..Default::default()
        };
        let trace = crate::sim::workload::generate(&wl, 20, seed).unwrap();
        let fleet = hosts(&[1000.0, 2000.0, 3000.0, 4000.0, 1500.0, 2500.0]);
        Simulation::new(cfg, fleet, &trace, policy).unwrap().run().unwrap()
    }

    #[test]
    fn faulty_runs_are_deterministic() {
        let a = busy_run(Box::new(NoMitigation), 3);
        let b = busy_run(Box::new(NoMitigation), 3);
        assert_eq!(a.series, b.series);
        assert_eq!(a.faults, b.faults);
        assert!(!a.faults.is_empty());
        assert_eq!(a.harvested.len(), b.harvested.len());
        let c = busy_run(Box::new(NoMitigation), 4);
        assert_ne!(a.series, c.series);
    }

    #[test]
    fn every_task_ends_exactly_once() {
        let out = busy_run(Box::new(crate::mitigation::DollyPolicy::new(1e9)), 5);
        let completed = out.state.tasks.values().filter(|t| t.state == TaskState::Completed).count() as u64;
        let failed = out.state.tasks.values().filter(|t| t.state == TaskState::Failed).count();
        assert_eq!(completed as usize + failed, out.state.tasks.len());
        let reported: u64 = out.series.iter().map(|s| s.tasks_completed).sum();
        assert_eq!(reported, completed);
        assert!(out.series.iter().map(|s| s.mitigations).sum::<u64>() > 0);
        for t in out.state.tasks.values().filter(|t| t.state == TaskState::Completed) {
            assert!(t.completion_time.unwrap() >= t.start_time.unwrap());
        }
    }

    #[test]
    fn host_power_stays_within_bounds() {
        let out = busy_run(Box::new(NoMitigation), 6);
        for interval in &out.host_energy {
            for e in interval {
                let p = e / 300.0;
                assert!((108.0..=273.0 + 1e-9).contains(&p), "{p}");
            }
        }
    }

    #[test]
    fn mitigation_does_not_shift_host_faults() {
        let host_faults = |o: &SimOutcome| -> Vec<FaultRecord> {
            o.faults.iter().filter(|f| f.kind != "task").cloned().collect()
        };
        let none = busy_run(Box::new(NoMitigation), 8);
        let dolly = busy_run(Box::new(crate::mitigation::DollyPolicy::new(1e9)), 8);
        assert_eq!(host_faults(&none), host_faults(&dolly));
    }

    #[test]
    fn harvest_collects_labelled_windows() {
        let out = busy_run(Box::new(NoMitigation), 9);
        assert!(!out.harvested.is_empty());
        for ex in &out.harvested {
            assert_eq!(ex.input_sequence.len(), 5);
            assert!(ex.target.alpha > 0.0 && ex.target.beta > 0.0);
        }
    }
}
