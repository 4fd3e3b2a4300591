//! Cluster domain types and the feature matrices fed to the straggler predictor.
//!
//! Host rows (`M_H`, n x 12) and task rows (`M_T`, q' x 5) are plain
//! normalized matrices; the flattened concatenation of both is one
//! observation for the encoder.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of features per host row.
pub const HOST_FEATURES: usize = 12;
/// Number of features per task row.
pub const TASK_FEATURES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HostId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobId(pub u64);

impl fmt::Display for HostId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "h{}", self.0)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

impl fmt::Display for JobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "j{}", self.0)
    }
}

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                expected: format!("{rows}x{cols}"),
                actual: format!("{} values", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Host {
    pub id: HostId,
    pub class: String,
    /// MIPS
    pub cpu_capacity: f64,
    /// MB
    pub ram_capacity: f64,
    /// MB
    pub disk_capacity: f64,
    /// KB/s
    pub bw_capacity: f64,
    pub cpu_used: f64,
    pub ram_used: f64,
    pub disk_used: f64,
    pub bw_used: f64,
    pub cost_per_interval: f64,
    pub power_min: f64,
    pub power_max: f64,
    pub active_task_count: usize,
    pub online: bool,
    /// Whole intervals left before an offline host comes back.
    pub downtime_remaining: u32,
    /// Set by a VM creation fault; the next placement on this host fails.
    pub vm_creation_fault_pending: bool,
}

/// Static description of a host, used to build [`Host`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostSpec {
    pub class: String,
    pub cpu_mips: f64,
    pub ram_mb: f64,
    pub disk_mb: f64,
    pub bw_kbps: f64,
    pub cost_per_interval: f64,
    pub power_min: f64,
    pub power_max: f64,
}

impl Host {
    pub fn new(id: HostId, spec: &HostSpec) -> Result<Self> {
        let caps = [spec.cpu_mips, spec.ram_mb, spec.disk_mb, spec.bw_kbps];
        if caps.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::invalid(format!(
                "host {id}: capacities must be positive, got {caps:?}"
            )));
        }
        if !(spec.power_min >= 0.0 && spec.power_min <= spec.power_max) {
            return Err(Error::invalid(format!(
                "host {id}: need 0 <= power_min <= power_max"
            )));
        }
        Ok(Host {
            id,
            class: spec.class.clone(),
            cpu_capacity: spec.cpu_mips,
            ram_capacity: spec.ram_mb,
            disk_capacity: spec.disk_mb,
            bw_capacity: spec.bw_kbps,
            cpu_used: 0.0,
            ram_used: 0.0,
            disk_used: 0.0,
            bw_used: 0.0,
            cost_per_interval: spec.cost_per_interval,
            power_min: spec.power_min,
            power_max: spec.power_max,
            active_task_count: 0,
            online: true,
            downtime_remaining: 0,
            vm_creation_fault_pending: false,
        })
    }

    pub fn cpu_utilization(&self) -> f64 {
        (self.cpu_used / self.cpu_capacity).clamp(0.0, 1.0)
    }

    /// True when `ram` and `disk` fit in what is left on this host.
    pub fn fits(&self, ram: f64, disk: f64) -> bool {
        self.ram_used + ram <= self.ram_capacity && self.disk_used + disk <= self.disk_capacity
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Queued,
    Running,
    Completed,
    Speculating,
    Rerunning,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub job_id: JobId,
    pub cpu_req: f64,
    pub ram_req: f64,
    pub disk_req: f64,
    pub bw_req: f64,
    /// Million instructions.
    pub length: f64,
    pub progress: f64,
    pub submit_time: f64,
    pub start_time: Option<f64>,
    pub completion_time: Option<f64>,
    pub restart_time_total: f64,
    pub assigned_host: Option<HostId>,
    pub prev_host: Option<HostId>,
    pub state: TaskState,
}

impl Task {
    pub fn response_time(&self) -> Option<f64> {
        self.completion_time.map(|c| c - self.submit_time)
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.state, TaskState::Completed | TaskState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub tasks: Vec<TaskId>,
    pub deadline_driven: bool,
    pub arrival_time: f64,
    /// Allowed response time in seconds, relative to arrival.
    pub sla_deadline: f64,
    pub sla_weight: f64,
    pub completion_time: Option<f64>,
}

impl Job {
    pub fn deadline_at(&self) -> f64 {
        self.arrival_time + self.sla_deadline
    }
}

/// Fleet maxima used to normalize feature columns into [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorms {
    pub cpu: f64,
    pub ram: f64,
    pub disk: f64,
    pub bw: f64,
    pub cost: f64,
    pub power_min: f64,
    pub power_max: f64,
    pub task_count: f64,
    /// Rows of `M_T` (q').
    pub max_tasks_per_job: usize,
}

impl FeatureNorms {
    /// Maxima of the given host fleet; `task_count` bounds the active-task column.
    pub fn from_hosts(hosts: &[Host], task_count: usize, max_tasks_per_job: usize) -> Self {
        let max = |f: fn(&Host) -> f64| hosts.iter().map(f).fold(0.0_f64, f64::max);
        FeatureNorms {
            cpu: max(|h| h.cpu_capacity),
            ram: max(|h| h.ram_capacity),
            disk: max(|h| h.disk_capacity),
            bw: max(|h| h.bw_capacity),
            cost: max(|h| h.cost_per_interval),
            power_min: max(|h| h.power_min),
            power_max: max(|h| h.power_max),
            task_count: task_count.max(1) as f64,
            max_tasks_per_job,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterState {
    pub hosts: Vec<Host>,
    pub jobs: BTreeMap<JobId, Job>,
    pub tasks: BTreeMap<TaskId, Task>,
    pub interval_index: u64,
    pub interval_length: f64,
    pub now: f64,
    pub straggler_ema_per_host: Vec<f64>,
    pub norms: FeatureNorms,
}

impl ClusterState {
    pub fn new(hosts: Vec<Host>, interval_length: f64, norms: FeatureNorms) -> Result<Self> {
        if hosts.is_empty() {
            return Err(Error::invalid("cluster needs at least one host"));
        }
        if !(interval_length > 0.0) {
            return Err(Error::invalid("interval_length must be positive"));
        }
        let n = hosts.len();
        Ok(ClusterState {
            hosts,
            jobs: BTreeMap::new(),
            tasks: BTreeMap::new(),
            interval_index: 0,
            interval_length,
            now: 0.0,
            straggler_ema_per_host: vec![0.0; n],
            norms,
        })
    }

    pub fn host(&self, id: HostId) -> &Host {
        &self.hosts[id.0]
    }

    pub fn job(&self, id: JobId) -> Result<&Job> {
        self.jobs.get(&id).ok_or(Error::UnknownJob(id.0))
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[&id]
    }

    /// Tasks of `job` that have not completed or failed.
    pub fn unfinished_tasks(&self, job: &Job) -> Vec<TaskId> {
        job.tasks
            .iter()
            .copied()
            .filter(|t| !self.tasks[t].is_finished())
            .collect()
    }
}

/// One observation of the cluster as seen by the predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrices {
    pub m_h: Matrix,
    pub m_t: Matrix,
}

impl FeatureMatrices {
    pub fn capture(state: &ClusterState, job: JobId) -> Result<Self> {
        Ok(FeatureMatrices {
            m_h: extract_host_features(state),
            m_t: extract_task_features(state, job)?,
        })
    }

    /// Host matrix first, then the task matrix, both row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.m_h.as_slice().len() + self.m_t.as_slice().len());
        v.extend_from_slice(self.m_h.as_slice());
        v.extend_from_slice(self.m_t.as_slice());
        v
    }

    /// Applies [`ema_update`] to both matrices.
    pub fn smoothed(prev: Option<&FeatureMatrices>, fresh: FeatureMatrices, weight: f64) -> Result<Self> {
        match prev {
            None => Ok(fresh),
            Some(p) => Ok(FeatureMatrices {
                m_h: ema_update(Some(&p.m_h), &fresh.m_h, weight)?,
                m_t: ema_update(Some(&p.m_t), &fresh.m_t, weight)?,
            }),
        }
    }
}

/// Input width of the encoder for `n` hosts and `q_max` task rows.
pub fn input_width(n_hosts: usize, q_max: usize) -> usize {
    HOST_FEATURES * n_hosts + TASK_FEATURES * q_max
}

fn ratio(v: f64, max: f64) -> f64 {
    if max > 0.0 {
        (v / max).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// `M_H`: one row per host. Offline hosts are all-zero rows.
pub fn extract_host_features(state: &ClusterState) -> Matrix {
    let norms = &state.norms;
    let mut m = Matrix::zeros(state.hosts.len(), HOST_FEATURES);
    for (k, h) in state.hosts.iter().enumerate() {
        if !h.online {
            continue;
        }
        let row = [
            ratio(h.cpu_used, h.cpu_capacity),
            ratio(h.cpu_capacity, norms.cpu),
            ratio(h.ram_used, h.ram_capacity),
            ratio(h.ram_capacity, norms.ram),
            ratio(h.disk_used, h.disk_capacity),
            ratio(h.disk_capacity, norms.disk),
            ratio(h.bw_used, h.bw_capacity),
            ratio(h.bw_capacity, norms.bw),
            ratio(h.cost_per_interval, norms.cost),
            ratio(h.power_min, norms.power_min),
            ratio(h.power_max, norms.power_max),
            ratio(h.active_task_count as f64, norms.task_count),
        ];
        m.row_mut(k).copy_from_slice(&row);
    }
    m
}

/// `M_T` for one job: requirement columns plus the normalized index of the
/// previously assigned host; rows past the job's task count stay zero.
pub fn extract_task_features(state: &ClusterState, job: JobId) -> Result<Matrix> {
    let job = state.job(job)?;
    let norms = &state.norms;
    let n = state.hosts.len() as f64;
    let mut m = Matrix::zeros(norms.max_tasks_per_job, TASK_FEATURES);
    for (a, tid) in job.tasks.iter().take(norms.max_tasks_per_job).enumerate() {
        let t = state.task(*tid);
        let host = t.assigned_host.or(t.prev_host);
        let prev = host.map_or(0.0, |h| (h.0 as f64 + 1.0) / (n + 1.0));
        let row = [
            ratio(t.cpu_req, norms.cpu),
            ratio(t.ram_req, norms.ram),
            ratio(t.disk_req, norms.disk),
            ratio(t.bw_req, norms.bw),
            prev,
        ];
        m.row_mut(a).copy_from_slice(&row);
    }
    Ok(m)
}

/// `weight * fresh + (1 - weight) * ema`; the first observation passes through.
pub fn ema_update(ema_state: Option<&Matrix>, fresh: &Matrix, weight: f64) -> Result<Matrix> {
    if !(weight > 0.0 && weight <= 1.0) {
        return Err(Error::invalid(format!("ema weight {weight} outside (0, 1]")));
    }
    let Some(prev) = ema_state else {
        return Ok(fresh.clone());
    };
    if prev.shape() != fresh.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", prev.shape()),
            actual: format!("{:?}", fresh.shape()),
        });
    }
    let data = prev
        .as_slice()
        .iter()
        .zip(fresh.as_slice())
        .map(|(e, f)| weight * f + (1.0 - weight) * e)
        .collect();
    Matrix::from_vec(fresh.rows(), fresh.cols(), data)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn spec(cpu: f64) -> HostSpec {
        HostSpec {
            class: "test".into(),
            cpu_mips: cpu,
            ram_mb: 4096.0,
            disk_mb: 160_000.0,
            bw_kbps: 2.0,
            cost_per_interval: 4.0,
            power_min: 108.0,
            power_max: 273.0,
        }
    }

    pub(crate) fn cluster(n: usize, q_max: usize) -> ClusterState {
        let hosts: Vec<Host> = (0..n)
            .map(|i| Host::new(HostId(i), &spec(1000.0 * (i + 1) as f64)).unwrap())
            .collect();
        let norms = FeatureNorms::from_hosts(&hosts, 16, q_max);
        ClusterState::new(hosts, 300.0, norms).unwrap()
    }

    pub(crate) fn add_job(state: &mut ClusterState, id: u64, q: usize) -> JobId {
        let jid = JobId(id);
        let mut tasks = Vec::new();
        for a in 0..q {
            let tid = TaskId(id * 100 + a as u64);
            tasks.push(tid);
            state.tasks.insert(
                tid,
                Task {
                    id: tid,
                    job_id: jid,
                    cpu_req: 500.0,
                    ram_req: 512.0,
                    disk_req: 600.0,
                    bw_req: 0.1,
                    length: 1e5,
                    progress: 0.0,
                    submit_time: 0.0,
                    start_time: None,
                    completion_time: None,
                    restart_time_total: 0.0,
                    assigned_host: None,
                    prev_host: None,
                    state: TaskState::Queued,
                },
            );
        }
        state.jobs.insert(
            jid,
            Job {
                id: jid,
                tasks,
                deadline_driven: true,
                arrival_time: 0.0,
                sla_deadline: 600.0,
                sla_weight: 1.0,
                completion_time: None,
            },
        );
        jid
    }

    #[test]
    fn idle_host_row_has_zero_utilization() {
        let state = cluster(3, 10);
        let m = extract_host_features(&state);
        assert_eq!(m.shape(), (3, HOST_FEATURES));
        let row = m.row(1);
        for util_col in [0, 2, 4, 6] {
            assert_eq!(row[util_col], 0.0);
        }
        // host 1 has 2000 MIPS of a 3000 MIPS fleet max
        assert!((row[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(row[3], 1.0);
        assert_eq!(row[9], 1.0);
        assert_eq!(row[10], 1.0);
        assert_eq!(row[11], 0.0);
    }

    #[test]
    fn offline_host_row_is_zero() {
        let mut state = cluster(2, 10);
        state.hosts[0].online = false;
        state.hosts[0].downtime_remaining = 2;
        let m = extract_host_features(&state);
        assert!(m.row(0).iter().all(|v| *v == 0.0));
        assert!(m.row(1).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn half_used_cpu_is_half_utilization() {
        let mut state = cluster(1, 10);
        state.hosts[0].cpu_used = state.hosts[0].cpu_capacity / 2.0;
        assert_eq!(extract_host_features(&state).get(0, 0), 0.5);
    }

    #[test]
    fn two_task_job_pads_eight_rows() {
        let mut state = cluster(2, 10);
        let j = add_job(&mut state, 1, 2);
        let m = extract_task_features(&state, j).unwrap();
        assert_eq!(m.shape(), (10, TASK_FEATURES));
        for r in 2..10 {
            assert!(m.row(r).iter().all(|v| *v == 0.0));
        }
        // never assigned
        assert_eq!(m.get(0, 4), 0.0);
        assert!(m.get(0, 0) > 0.0);
    }

    #[test]
    fn previous_host_index_is_normalized() {
        let mut state = cluster(7, 10);
        let j = add_job(&mut state, 1, 2);
        let tid = state.jobs[&j].tasks[0];
        state.tasks.get_mut(&tid).unwrap().prev_host = Some(HostId(3));
        let m = extract_task_features(&state, j).unwrap();
        assert_eq!(m.get(0, 4), 0.5);
    }

    #[test]
    fn unknown_job_is_an_error() {
        let state = cluster(1, 10);
        assert!(matches!(
            extract_task_features(&state, JobId(9)),
            Err(Error::UnknownJob(9))
        ));
    }

    #[test]
    fn ema_examples() {
        let f = Matrix::filled(2, 3, 0.3);
        assert_eq!(ema_update(None, &f, 0.8).unwrap(), f);

        let zeros = Matrix::zeros(2, 2);
        let ones = Matrix::filled(2, 2, 1.0);
        let out = ema_update(Some(&zeros), &ones, 0.8).unwrap();
        assert!(out.as_slice().iter().all(|v| (*v - 0.8).abs() < 1e-15));

        let e = Matrix::filled(2, 2, 0.25);
        assert_eq!(ema_update(Some(&e), &e, 0.8).unwrap(), e);

        assert!(ema_update(Some(&zeros), &Matrix::zeros(3, 2), 0.8).is_err());
    }

    #[test]
    fn extraction_is_pure() {
        let mut state = cluster(4, 10);
        state.hosts[2].cpu_used = 1234.5;
        let j = add_job(&mut state, 5, 3);
        let a = FeatureMatrices::capture(&state, j).unwrap().flatten();
        let b = FeatureMatrices::capture(&state.clone(), j).unwrap().flatten();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.len(), input_width(4, 10));
    }

    proptest! {
        #[test]
        fn ema_stays_in_unit_interval(
            seq in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 6), 1..20),
            weight in 0.01f64..=1.0,
        ) {
            let mut ema: Option<Matrix> = None;
            for fresh in seq {
                let fresh = Matrix::from_vec(2, 3, fresh).unwrap();
                let next = ema_update(ema.as_ref(), &fresh, weight).unwrap();
                prop_assert!(next.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
                ema = Some(next);
            }
        }

        #[test]
        fn padding_rows_match_task_count(q in 2usize..=10) {
            let mut state = cluster(3, 10);
            let j = add_job(&mut state, 1, q);
            let m = extract_task_features(&state, j).unwrap();
            let zero_rows = (0..10).filter(|r| m.row(*r).iter().all(|v| *v == 0.0)).count();
            prop_assert_eq!(zero_rows, 10 - q);
        }
    }
}
