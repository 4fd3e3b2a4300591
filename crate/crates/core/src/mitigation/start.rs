//! Prediction-driven mitigation: observe each job for a short window after
//! arrival, predict its response-time tail, and once only ⌊E_S⌋ tasks are
//! left unfinished, speculate them (deadline jobs) or re-run them elsewhere.
//!
//! The straggler multiplier k is re-chosen periodically from a grid by the
//! F1 score it would have achieved on the jobs finished so far.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{relocation_target, ActionKind, Directives, JobVerdict, MitigationAction, Policy, PolicyId};
use crate::error::{Error, Result};
use crate::metrics::{f1_score, F1Mode};
use crate::model::{ClusterState, JobId, TaskId};
use crate::pareto::{expected_stragglers, fit_mle, straggler_threshold, ParetoParams, StragglerEstimate};
use crate::predictor::{window_len, PredictionWindow, Predictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StartConfig {
    pub k: f64,
    /// Seconds between observations.
    pub period: f64,
    /// Seconds of observation per job.
    pub duration: f64,
    /// Seconds after prediction before an unresponsive straggling job is
    /// reported in the log.
    pub alert_after: f64,
    /// Re-choose k every this many intervals; 0 keeps k fixed.
    pub adapt_every: u64,
    pub k_grid: Vec<f64>,
    pub f1_mode: F1Mode,
}

impl Default for StartConfig {
    fn default() -> Self {
        StartConfig {
            k: 1.5,
            period: 1.0,
            duration: 5.0,
            alert_after: 300.0,
            adapt_every: 50,
            k_grid: vec![1.0, 1.25, 1.5, 1.75, 2.0],
            f1_mode: F1Mode::Standard,
        }
    }
}

#[derive(Debug, Clone)]
struct JobPlan {
    params: ParetoParams,
    estimate: StragglerEstimate,
    k: f64,
    triggered: bool,
    flagged: Vec<TaskId>,
    alert_at: Option<f64>,
}

pub struct StartPolicy {
    predictor: Predictor,
    cfg: StartConfig,
    k: f64,
    windows: BTreeMap<JobId, PredictionWindow>,
    plans: BTreeMap<JobId, JobPlan>,
    /// Tasks chosen for mitigation while no host was eligible.
    deferred: Vec<TaskId>,
    /// Prediction and response times of finished jobs.
    history: Vec<(ParetoParams, Vec<f64>)>,
    k_changes: Vec<(u64, f64)>,
}

impl StartPolicy {
    pub fn new(predictor: Predictor, cfg: StartConfig) -> Result<Self> {
        if !(cfg.k > 0.0 && cfg.period > 0.0 && cfg.duration >= cfg.period) {
            return Err(Error::invalid("start: need k > 0 and 0 < period <= duration"));
        }
        if cfg.k_grid.iter().any(|k| !(*k > 0.0)) {
            return Err(Error::invalid("start: k_grid values must be positive"));
        }
        Ok(StartPolicy {
            predictor,
            k: cfg.k,
            cfg,
            windows: BTreeMap::new(),
            plans: BTreeMap::new(),
            deferred: Vec::new(),
            history: Vec::new(),
            k_changes: Vec::new(),
        })
    }

    pub fn current_k(&self) -> f64 {
        self.k
    }

    /// (interval, new k) for every adaptation that changed k.
    pub fn k_changes(&self) -> &[(u64, f64)] {
        &self.k_changes
    }

    fn check_trigger(&mut self, state: &ClusterState, job: JobId, out: &mut Directives) {
        let Some(plan) = self.plans.get_mut(&job) else { return };
        if plan.triggered || plan.estimate.mitigate_count == 0 {
            return;
        }
        let Ok(j) = state.job(job) else { return };
        let remaining = state.unfinished_tasks(j);
        if remaining.is_empty() || remaining.len() > plan.estimate.mitigate_count {
            return;
        }
        plan.triggered = true;
        let kind = if j.deadline_driven {
            ActionKind::Speculate
        } else {
            ActionKind::Rerun
        };
        log::debug!(
            "start: {job} has {} unfinished of E_S {:.3}, issuing {kind:?}",
            remaining.len(),
            plan.estimate.expected
        );
        for task in remaining {
            plan.flagged.push(task);
            match relocation_target(state, task) {
                Some(host) => out.actions.push(MitigationAction::new(kind, task, host)),
                None => {
                    log::info!("start: no eligible host for {task}, deferring one interval");
                    self.deferred.push(task);
                }
            }
        }
    }

    fn predict(&mut self, state: &ClusterState, job: JobId, out: &mut Directives) -> Result<()> {
        let window = &self.windows[&job];
        let params = self.predictor.predict_params(window)?;
        let q = state.job(job)?.tasks.len();
        let estimate = expected_stragglers(&params, q, self.k)?;
        let alert_at = (estimate.mitigate_count > 0).then_some(state.now + self.cfg.alert_after);
        if let Some(t) = alert_at {
            out.wakeups.push((t, job));
        }
        self.plans.insert(
            job,
            JobPlan {
                params,
                estimate,
                k: self.k,
                triggered: false,
                flagged: Vec::new(),
                alert_at,
            },
        );
        self.check_trigger(state, job, out);
        Ok(())
    }

    /// F1 each grid value would have scored on finished jobs, taking the
    /// ⌊E_S⌋ slowest tasks as the predicted stragglers.
    pub fn score_k(&self, k: f64) -> Option<f64> {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for (pred, times) in &self.history {
            let Ok(label) = fit_mle(times) else { continue };
            let Ok(threshold) = straggler_threshold(&label, k) else { continue };
            let Ok(est) = expected_stragglers(pred, times.len(), k) else { continue };
            let mut order: Vec<usize> = (0..times.len()).collect();
            order.sort_by(|a, b| times[*b].total_cmp(&times[*a]).then(a.cmp(b)));
            let mut predicted = vec![false; times.len()];
            for &i in order.iter().take(est.mitigate_count) {
                predicted[i] = true;
            }
            for (t, p) in times.iter().zip(predicted) {
                match (*t > threshold, p) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        f1_score(tp, fp, fn_, self.cfg.f1_mode).ok()
    }

    fn adapt_k(&mut self, interval: u64) {
        let mut best = (self.score_k(self.k), self.k);
        for &k in &self.cfg.k_grid {
            let score = self.score_k(k);
            if score > best.0 {
                best = (score, k);
            }
        }
        if best.1 != self.k {
            log::info!("start: interval {interval}: k {} -> {} (F1 {:?})", self.k, best.1, best.0);
            self.k = best.1;
            self.k_changes.push((interval, best.1));
        }
    }
}

impl Policy for StartPolicy {
    fn id(&self) -> PolicyId {
        PolicyId::Start
    }

    fn on_job_arrival(&mut self, state: &ClusterState, job: JobId, out: &mut Directives) -> Result<()> {
        let n = window_len(self.cfg.period, self.cfg.duration);
        self.windows.insert(job, PredictionWindow::new(job, n));
        out.wakeups
            .extend((1..=n).map(|i| (state.now + self.cfg.period * i as f64, job)));
        Ok(())
    }

    fn on_wake(&mut self, state: &ClusterState, job: JobId, out: &mut Directives) -> Result<()> {
        if state.job(job).map_or(true, |j| j.completion_time.is_some()) {
            return Ok(());
        }
        if let Some(plan) = self.plans.get(&job) {
            if plan.alert_at.is_some_and(|t| t <= state.now) {
                log::info!(
                    "start: {job} still running {}s after predicting {:.2} stragglers",
                    self.cfg.alert_after,
                    plan.estimate.expected
                );
            }
            return Ok(());
        }
        let Some(window) = self.windows.get_mut(&job) else { return Ok(()) };
        if window.is_complete() {
            return Ok(());
        }
        self.predictor.observe(window, state)?;
        if window.is_complete() {
            self.predict(state, job, out)?;
        }
        Ok(())
    }

    fn on_task_complete(&mut self, state: &ClusterState, task: TaskId, out: &mut Directives) {
        let job = state.task(task).job_id;
        self.check_trigger(state, job, out);
    }

    fn on_interval(&mut self, state: &ClusterState, out: &mut Directives) {
        let deferred = std::mem::take(&mut self.deferred);
        for task in deferred {
            if state.task(task).is_finished() {
                continue;
            }
            let kind = if state.job(state.task(task).job_id).is_ok_and(|j| j.deadline_driven) {
                ActionKind::Speculate
            } else {
                ActionKind::Rerun
            };
            match relocation_target(state, task) {
                Some(host) => out.actions.push(MitigationAction::new(kind, task, host)),
                None => self.deferred.push(task),
            }
        }
        let every = self.cfg.adapt_every;
        if every > 0 && state.interval_index > 0 && state.interval_index.is_multiple_of(every) {
            self.adapt_k(state.interval_index);
        }
    }

    fn on_job_complete(&mut self, state: &ClusterState, job: JobId) -> JobVerdict {
        self.windows.remove(&job);
        let Some(plan) = self.plans.remove(&job) else {
            return JobVerdict::default();
        };
        if let Ok(j) = state.job(job) {
            let times: Vec<f64> = j.tasks.iter().filter_map(|t| state.task(*t).response_time()).collect();
            self.history.push((plan.params, times));
        }
        JobVerdict {
            predicted_stragglers: Some(plan.estimate.expected),
            flagged: plan.flagged,
            k: Some(plan.k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mitigation::tests::{finish, run_on};
    use crate::model::tests::{add_job, cluster};
    use crate::model::{input_width, HostId};
    use crate::neural::{Architecture, NetworkWeights};

    /// A predictor whose head emits fixed (α, β) regardless of input.
    fn fixed_predictor(n_hosts: usize, alpha: f64, beta_seconds: f64) -> Predictor {
        let mut w = NetworkWeights::init(Architecture::start(input_width(n_hosts, 10)), 1);
        let head = w.arch.head_base();
        for v in w.params[head].data.iter_mut() {
            *v = 0.0;
        }
        w.params[head + 1].data = vec![alpha - 1.0, beta_seconds / 300.0];
        Predictor::new(w, 0.8, 300.0)
    }

    fn policy(alpha: f64, k: f64) -> StartPolicy {
        let cfg = StartConfig {
            k,
            adapt_every: 0,
            ..StartConfig::default()
        };
        StartPolicy::new(fixed_predictor(3, alpha, 300.0), cfg).unwrap()
    }

    fn observe_all(p: &mut StartPolicy, s: &mut ClusterState, job: JobId) -> Directives {
        let mut out = Directives::default();
        p.on_job_arrival(s, job, &mut out).unwrap();
        assert_eq!(out.wakeups.len(), 5);
        let wakes = std::mem::take(&mut out.wakeups);
        for (t, j) in wakes {
            s.now = t;
            p.on_wake(s, j, &mut out).unwrap();
        }
        out
    }

    #[test]
    fn one_straggler_expected_speculates_last_task() {
        // α = 2, k = 1.5: E_S = 10 / 9 for q = 10
        let mut s = cluster(3, 10);
        let job = add_job(&mut s, 1, 10);
        let ids = s.jobs[&job].tasks.clone();
        for (i, t) in ids.iter().enumerate() {
            run_on(&mut s, *t, i % 2, 0.0);
        }
        let mut p = policy(2.0, 1.5);
        let out = observe_all(&mut p, &mut s, job);
        assert!(out.actions.is_empty());
        let plan = &p.plans[&job];
        assert!((plan.estimate.expected - 10.0 / 9.0).abs() < 1e-9);

        for t in &ids[..8] {
            finish(&mut s, *t, 100.0);
            let mut out = Directives::default();
            p.on_task_complete(&s, *t, &mut out);
            assert!(out.actions.is_empty());
        }
        finish(&mut s, ids[8], 100.0);
        let mut out = Directives::default();
        p.on_task_complete(&s, ids[8], &mut out);
        let last = ids[9];
        assert_eq!(
            out.actions,
            vec![MitigationAction::new(ActionKind::Speculate, last, HostId(0))]
        );
        // host 1 runs the task, so the lowest-EMA other host is 0
        assert_eq!(s.task(last).assigned_host, Some(HostId(1)));

        let mut out = Directives::default();
        p.on_task_complete(&s, ids[8], &mut out);
        assert!(out.actions.is_empty(), "mitigates at most once per job");

        finish(&mut s, last, 200.0);
        let v = p.on_job_complete(&s, job);
        assert_eq!(v.flagged, vec![last]);
        assert!((v.predicted_stragglers.unwrap() - 10.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn small_estimate_never_mitigates() {
        // α = 4, k = 1.5: (2)^-4 · 4 tasks = 0.25
        let mut s = cluster(3, 10);
        let job = add_job(&mut s, 1, 4);
        let ids = s.jobs[&job].tasks.clone();
        for t in &ids {
            run_on(&mut s, *t, 0, 0.0);
        }
        let mut p = policy(4.0, 1.5);
        let mut all = observe_all(&mut p, &mut s, job);
        for t in &ids {
            finish(&mut s, *t, 50.0);
            p.on_task_complete(&s, *t, &mut all);
        }
        assert!(all.actions.is_empty());
        assert_eq!(p.plans[&job].estimate.mitigate_count, 0);
    }

    #[test]
    fn non_deadline_job_reruns() {
        let mut s = cluster(3, 10);
        let job = add_job(&mut s, 1, 10);
        s.jobs.get_mut(&job).unwrap().deadline_driven = false;
        let ids = s.jobs[&job].tasks.clone();
        for t in &ids {
            run_on(&mut s, *t, 0, 0.0);
        }
        let mut p = policy(2.0, 1.5);
        observe_all(&mut p, &mut s, job);
        let mut out = Directives::default();
        for t in &ids[..9] {
            finish(&mut s, *t, 10.0);
            p.on_task_complete(&s, *t, &mut out);
        }
        assert_eq!(out.actions, vec![MitigationAction::new(ActionKind::Rerun, ids[9], HostId(1))]);
    }

    #[test]
    fn no_host_defers_to_next_interval() {
        let mut s = cluster(3, 10);
        let job = add_job(&mut s, 1, 10);
        let ids = s.jobs[&job].tasks.clone();
        for t in &ids {
            run_on(&mut s, *t, 0, 0.0);
        }
        s.hosts[1].online = false;
        s.hosts[2].online = false;
        let mut p = policy(2.0, 1.5);
        observe_all(&mut p, &mut s, job);
        let mut out = Directives::default();
        for t in &ids[..9] {
            finish(&mut s, *t, 10.0);
            p.on_task_complete(&s, *t, &mut out);
        }
        assert!(out.actions.is_empty());
        s.hosts[1].online = true;
        p.on_interval(&s, &mut out);
        assert_eq!(out.actions, vec![MitigationAction::new(ActionKind::Speculate, ids[9], HostId(1))]);
    }

    #[test]
    fn k_scoring_uses_slowest_tasks() {
        let mut p = policy(2.0, 1.5);
        // label fit of these times has β = 1 and α = 10 / Σ ln(t)
        let times: Vec<f64> = vec![1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.8, 2.5, 9.0];
        p.history.push((ParetoParams { alpha: 2.0, beta: 1.0 }, times.clone()));
        let label = fit_mle(&times).unwrap();
        let k = 1.5;
        let threshold = straggler_threshold(&label, k).unwrap();
        let actual: Vec<bool> = times.iter().map(|t| *t > threshold).collect();
        let m = expected_stragglers(&ParetoParams { alpha: 2.0, beta: 1.0 }, 10, k).unwrap().mitigate_count;
        assert_eq!(m, 1);
        let tp = actual[9] as u64;
        let fp = 1 - tp;
        let fn_ = actual[..9].iter().filter(|a| **a).count() as u64;
        assert_eq!(p.score_k(k), f1_score(tp, fp, fn_, F1Mode::Standard).ok());
    }
}
