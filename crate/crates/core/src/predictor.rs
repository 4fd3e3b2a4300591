//! Per-job observation windows, (α, β) inference, label generation and the
//! offline training loop.
//!
//! A window starts at job arrival and takes one EMA-smoothed observation every
//! `period` seconds until it holds `duration / period` of them; each
//! observation also advances the LSTM state by one step. Parameters are read
//! from the final hidden state once the window is complete.
//!
//! The network's β output is expressed in units of `beta_scale` seconds so
//! the regression targets stay O(1).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{mape, Mape};
use crate::model::{ClusterState, FeatureMatrices, JobId, Task, TaskState};
use crate::neural::{LstmState, NetworkWeights};
use crate::pareto::{classify_stragglers, expected_stragglers, fit_mle, straggler_threshold, ParetoParams};

pub mod synthetic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionWindow {
    pub job_id: JobId,
    pub observations: Vec<Vec<f64>>,
    pub ema: Option<FeatureMatrices>,
    pub lstm_state: Option<LstmState>,
    pub capacity: usize,
}

impl PredictionWindow {
    pub fn new(job_id: JobId, capacity: usize) -> Self {
        PredictionWindow {
            job_id,
            observations: Vec::with_capacity(capacity),
            ema: None,
            lstm_state: None,
            capacity,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.observations.len() >= self.capacity
    }

    /// Captures and smooths one observation without touching the network.
    pub fn record(&mut self, state: &ClusterState, ema_weight: f64) -> Result<&[f64]> {
        if self.is_complete() {
            return Err(Error::Window {
                job: self.job_id.0,
                state: "already complete",
            });
        }
        let fresh = FeatureMatrices::capture(state, self.job_id)?;
        let smoothed = FeatureMatrices::smoothed(self.ema.as_ref(), fresh, ema_weight)?;
        self.observations.push(smoothed.flatten());
        self.ema = Some(smoothed);
        Ok(self.observations.last().unwrap())
    }
}

/// Number of observations in a window of `duration` seconds sampled every
/// `period` seconds.
pub fn window_len(period: f64, duration: f64) -> usize {
    ((duration / period).round() as usize).max(1)
}

#[derive(Debug, Clone)]
pub struct Predictor {
    pub weights: NetworkWeights,
    pub ema_weight: f64,
    pub beta_scale: f64,
}

impl Predictor {
    pub fn new(weights: NetworkWeights, ema_weight: f64, beta_scale: f64) -> Self {
        Predictor {
            weights,
            ema_weight,
            beta_scale,
        }
    }

    pub fn observe(&self, window: &mut PredictionWindow, state: &ClusterState) -> Result<()> {
        let x = window.record(state, self.ema_weight)?.to_vec();
        let lambda = self.weights.encoder_forward(&x)?;
        let prev = window
            .lstm_state
            .take()
            .unwrap_or_else(|| LstmState::zeros(&self.weights.arch));
        let (next, _) = self.weights.lstm_step(&prev, &lambda);
        window.lstm_state = Some(next);
        Ok(())
    }

    /// Clamped parameters with β in seconds.
    pub fn predict_params(&self, window: &PredictionWindow) -> Result<ParetoParams> {
        let state = match (&window.lstm_state, window.is_complete()) {
            (Some(s), true) => s,
            _ => {
                return Err(Error::Window {
                    job: window.job_id.0,
                    state: "incomplete",
                })
            }
        };
        Ok(self.to_seconds(self.weights.head_forward(state.top())))
    }

    /// Runs a stored observation sequence from a zero state.
    pub fn predict_sequence(&self, inputs: &[Vec<f64>]) -> Result<ParetoParams> {
        Ok(self.to_seconds(self.weights.forward(inputs)?))
    }

    fn to_seconds(&self, raw: ParetoParams) -> ParetoParams {
        ParetoParams {
            alpha: raw.alpha,
            beta: raw.beta * self.beta_scale,
        }
        .clamped()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input_sequence: Vec<Vec<f64>>,
    /// Fitted from response times; β in seconds.
    pub target: ParetoParams,
    /// Not persisted in the dataset files.
    #[serde(default)]
    pub response_times: Vec<f64>,
}

/// Label for a finished job: the Pareto fit of its task response times
/// (completion − submission). `None` when the job is unfinished, has a
/// single task, or its times are degenerate.
pub fn make_label(tasks: &[&Task]) -> Option<(ParetoParams, Vec<f64>)> {
    if tasks.len() < 2 || tasks.iter().any(|t| t.state != TaskState::Completed) {
        log::debug!("label skipped: {} tasks, not all completed", tasks.len());
        return None;
    }
    let times: Vec<f64> = tasks.iter().filter_map(|t| t.response_time()).collect();
    match fit_mle(&times) {
        Ok(p) => Some((p, times)),
        Err(e) => {
            log::debug!("label discarded: {e}");
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Fraction of examples used for training.
    pub split: f64,
    pub seed: u64,
    pub beta_scale: f64,
    /// α targets above this are clipped; small-sample fits can be huge.
    pub alpha_cap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 1e-5,
            split: 0.8,
            seed: 0,
            beta_scale: 300.0,
            alpha_cap: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: NetworkWeights,
    pub curve: Vec<LossPoint>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Seeded shuffle, then the first `split` fraction (at least one example)
/// trains and the rest tests.
pub fn split_indices(n: usize, split: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * split).round() as usize).clamp(1.min(n), n);
    let test = idx.split_off(n_train);
    (idx, test)
}

fn network_target(t: &ParetoParams, cfg: &TrainConfig) -> ParetoParams {
    ParetoParams {
        alpha: t.alpha.min(cfg.alpha_cap),
        beta: t.beta / cfg.beta_scale,
    }
}

fn mean_loss(w: &NetworkWeights, data: &[TrainingExample], idx: &[usize], cfg: &TrainConfig) -> Result<Option<f64>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for &i in idx {
        total += w.loss(&data[i].input_sequence, &network_target(&data[i].target, cfg))?;
    }
    Ok(Some(total / idx.len() as f64))
}

/// Per-example BPTT + Adam for `cfg.epochs` epochs. Losses are measured
/// after each epoch on both splits.
pub fn train(initial: NetworkWeights, dataset: &[TrainingExample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    if !(cfg.split > 0.0 && cfg.split < 1.0) {
        return Err(Error::invalid(format!("split {} outside (0, 1)", cfg.split)));
    }
    let (train_idx, test_idx) = split_indices(dataset.len(), cfg.split, cfg.seed);
    let mut weights = initial;
    let mut order = train_idx.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let ex = &dataset[i];
            let (_, grads) = weights.backward(&ex.input_sequence, &network_target(&ex.target, cfg))?;
            weights.adam_step(&grads, cfg.lr);
        }
        let train_mse = mean_loss(&weights, dataset, &train_idx, cfg)?.unwrap_or(f64::NAN);
        let test_mse = mean_loss(&weights, dataset, &test_idx, cfg)?;
        log::debug!("epoch {epoch}: train {train_mse:.6} test {test_mse:?}");
        curve.push(LossPoint {
            epoch,
            train_mse,
            test_mse,
        });
    }
    Ok(TrainOutcome {
        weights,
        curve,
        train_idx,
        test_idx,
    })
}

/// Straggler-count MAPE of `predicted` parameters against the examples'
/// response times: actual = tasks slower than K of the fitted label,
/// predicted = E_S of the prediction.
pub fn straggler_count_mape(examples: &[&TrainingExample], predicted: &[ParetoParams], k: f64) -> Result<Mape> {
    let mut actual = Vec::with_capacity(examples.len());
    let mut guess = Vec::with_capacity(examples.len());
    for (ex, p) in examples.iter().zip(predicted) {
        let q = ex.response_times.len();
        if q == 0 {
            return Err(Error::invalid("example has no response times"));
        }
        let label = ex.target.clamped();
        let threshold = straggler_threshold(&label, k)?;
        let count = classify_stragglers(&ex.response_times, threshold)
            .into_iter()
            .filter(|b| *b)
            .count();
        actual.push(count as f64);
        guess.push(expected_stragglers(&p.clamped(), q, k)?.expected);
    }
    mape(&actual, &guess)
}

/// Writes `<stem>.csv` (example_id, step_index, features...) and
/// `<stem>_labels.csv` (example_id, alpha, beta).
pub fn write_dataset(examples: &[TrainingExample], features: &Path, labels: &Path) -> Result<()> {
    let mut fw = csv::Writer::from_path(features)?;
    let width = examples.first().map_or(0, |e| e.input_sequence[0].len());
    let mut header = vec!["example_id".to_string(), "step_index".to_string()];
    header.extend((0..width).map(|i| format!("f{i}")));
    fw.write_record(&header)?;
    for (id, ex) in examples.iter().enumerate() {
        for (step, x) in ex.input_sequence.iter().enumerate() {
            let mut rec = vec![id.to_string(), step.to_string()];
            rec.extend(x.iter().map(|v| v.to_string()));
            fw.write_record(&rec)?;
        }
    }
    fw.flush().map_err(|e| Error::io(features, e))?;

    let mut lw = csv::Writer::from_path(labels)?;
    lw.write_record(["example_id", "alpha", "beta"])?;
    for (id, ex) in examples.iter().enumerate() {
        lw.write_record([id.to_string(), ex.target.alpha.to_string(), ex.target.beta.to_string()])?;
    }
    lw.flush().map_err(|e| Error::io(labels, e))?;
    Ok(())
}

pub fn read_dataset(features: &Path, labels: &Path) -> Result<Vec<TrainingExample>> {
    let bad = |m: String| Error::Trace(format!("{}: {m}", features.display()));
    let mut seqs: Vec<Vec<Vec<f64>>> = Vec::new();
    for rec in csv::Reader::from_path(features)?.records() {
        let rec = rec?;
        let id: usize = rec[0].parse().map_err(|_| bad("bad example_id".into()))?;
        let step: usize = rec[1].parse().map_err(|_| bad("bad step_index".into()))?;
        let x = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("bad feature in example {id}")))?;
        if id > seqs.len() || (id == seqs.len() && step != 0) {
            return Err(bad(format!("rows out of order at example {id}")));
        }
        if id == seqs.len() {
            seqs.push(Vec::new());
        }
        if seqs[id].len() != step {
            return Err(bad(format!("example {id}: expected step {}", seqs[id].len())));
        }
        seqs[id].push(x);
    }
    let mut out = Vec::with_capacity(seqs.len());
    for (rec, seq) in csv::Reader::from_path(labels)?.records().zip(seqs) {
        let rec = rec?;
        let alpha: f64 = rec[1].parse().map_err(|_| bad("bad alpha".into()))?;
        let beta: f64 = rec[2].parse().map_err(|_| bad("bad beta".into()))?;
        out.push(TrainingExample {
            input_sequence: seq,
            target: ParetoParams { alpha, beta },
            response_times: Vec::new(),
        });
    }
    Ok(out)
}
