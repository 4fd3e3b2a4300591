//! Trains the Encoder-LSTM on synthetic windows and compares its held-out
//! straggler-count MAPE with always predicting the mean label.

use straggler_sim::model::input_width;
use straggler_sim::neural::{Architecture, NetworkWeights};
use straggler_sim::predictor::synthetic::{self, SyntheticConfig};
use straggler_sim::predictor::{self, straggler_count_mape, Predictor, TrainConfig, TrainingExample};

fn main() -> straggler_sim::Result<()> {
    let syn = SyntheticConfig {
        examples: 300,
        ..SyntheticConfig::default()
    };
    let data = synthetic::generate(&syn)?;
    let cfg = TrainConfig {
        epochs: 20,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let init = NetworkWeights::init(Architecture::start(input_width(syn.hosts, syn.max_tasks_per_job)), 1);
    let out = predictor::train(init, &data, &cfg)?;
    for p in out.curve.iter().step_by(5) {
        println!("epoch {:>3}  train mse {:.4}  test mse {:.4?}", p.epoch, p.train_mse, p.test_mse);
    }

    let pick = |idx: &[usize]| idx.iter().map(|&i| &data[i]).collect::<Vec<&TrainingExample>>();
    let (train, test) = (pick(&out.train_idx), pick(&out.test_idx));
    let model = Predictor::new(out.weights, syn.ema_weight, cfg.beta_scale);
    let predicted = test
        .iter()
        .map(|e| model.predict_sequence(&e.input_sequence))
        .collect::<straggler_sim::Result<Vec<_>>>()?;
    let naive = vec![synthetic::global_mean(&train, cfg.alpha_cap); test.len()];
    let ours = straggler_count_mape(&test, &predicted, 1.5)?;
    let base = straggler_count_mape(&test, &naive, 1.5)?;
    println!("held-out MAPE: predictor {:.1?}%, global mean {:.1?}%", ours.value, base.value);
    Ok(())
}
