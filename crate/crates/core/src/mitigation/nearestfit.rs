//! Progress-model baseline: fit duration = a + b·length^c over finished
//! tasks fleet-wide and speculate running tasks whose predicted duration
//! is well above their job's mean prediction.

use std::collections::BTreeSet;

use super::{relocation_target, ActionKind, Directives, JobVerdict, MitigationAction, Policy, PolicyId};
use crate::error::{Error, Result};
use crate::model::{ClusterState, JobId, TaskId, TaskState};

/// Most recent completions kept for fitting.
const FIT_WINDOW: usize = 500;
const GRID: usize = 64;
const REFINE_ROUNDS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl PowerLaw {
    pub fn eval(&self, x: f64) -> f64 {
        self.a + self.b * x.powf(self.c)
    }
}

/// (b, c, squared log residual) of the log-space line through (x, y − a).
fn log_linear(xs: &[f64], ys: &[f64], a: f64) -> Result<(f64, f64, f64)> {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| (y - a).ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 1e-12) || !sxy.is_finite() {
        return Err(Error::SingularFit);
    }
    let c = sxy / sxx;
    let intercept = my - c * mx;
    let sse = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - c * x).powi(2)).sum();
    Ok((intercept.exp(), c, sse))
}

/// Least squares in log space for (b, c) given the offset `a`; the offset
/// is chosen in [0, min y) to minimize the log residual, by a coarse grid
/// followed by golden-section refinement.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLaw> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return Err(Error::SingularFit);
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::SingularFit);
    }
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y_min * (1.0 - 1e-6);
    let sse = |a: f64| log_linear(xs, ys, a).map_or(f64::INFINITY, |f| f.2);
    let step = hi / GRID as f64;
    let best = (0..=GRID)
        .map(|i| i as f64 * step)
        .min_by(|p, q| sse(*p).total_cmp(&sse(*q)))
        .unwrap_or(0.0);
    let (mut lo, mut up) = ((best - step).max(0.0), (best + step).min(hi));
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..REFINE_ROUNDS {
        let m1 = up - phi * (up - lo);
        let m2 = lo + phi * (up - lo);
        if sse(m1) <= sse(m2) {
            up = m2;
        } else {
            lo = m1;
        }
    }
    let a = (lo + up) / 2.0;
    let (b, c, _) = log_linear(xs, ys, a)?;
    if c.abs() < 1e-3 || !b.is_finite() {
        return Err(Error::SingularFit);
    }
    Ok(PowerLaw { a, b, c })
}

pub struct NearestFitPolicy {
    factor: f64,
    lengths: Vec<f64>,
    durations: Vec<f64>,
    speculated: BTreeSet<TaskId>,
}

impl NearestFitPolicy {
    pub fn new(factor: f64) -> Self {
        NearestFitPolicy {
            factor,
            lengths: Vec::new(),
            durations: Vec::new(),
            speculated: BTreeSet::new(),
        }
    }
}

impl Policy for NearestFitPolicy {
    fn id(&self) -> PolicyId {
        PolicyId::NearestFit
    }

    fn on_task_complete(&mut self, state: &ClusterState, task: TaskId, _out: &mut Directives) {
        let t = state.task(task);
        if let (Some(s), Some(c)) = (t.start_time, t.completion_time) {
            if c > s {
                self.lengths.push(t.length);
                self.durations.push(c - s);
                if self.lengths.len() > FIT_WINDOW {
                    self.lengths.remove(0);
                    self.durations.remove(0);
                }
            }
        }
    }

    fn on_interval(&mut self, state: &ClusterState, out: &mut Directives) {
        let Ok(law) = fit_power_law(&self.lengths, &self.durations) else {
            return;
        };
        for job in state.jobs.values().filter(|j| j.completion_time.is_none()) {
            let predicted: Vec<f64> = job.tasks.iter().map(|t| law.eval(state.task(*t).length)).collect();
            let mean = predicted.iter().sum::<f64>() / predicted.len() as f64;
            for (id, p) in job.tasks.iter().zip(&predicted) {
                let t = state.task(*id);
                if t.state == TaskState::Running && !self.speculated.contains(id) && *p > self.factor * mean {
                    if let Some(host) = relocation_target(state, *id) {
                        self.speculated.insert(*id);
                        out.actions.push(MitigationAction::new(ActionKind::Speculate, *id, host));
                    }
                }
            }
        }
    }

    fn on_job_complete(&mut self, state: &ClusterState, job: JobId) -> JobVerdict {
        let flagged = state
            .job(job)
            .map(|j| j.tasks.iter().copied().filter(|t| self.speculated.remove(t)).collect())
            .unwrap_or_default();
        JobVerdict {
            flagged,
            ..JobVerdict::default()
        }
    }
}
