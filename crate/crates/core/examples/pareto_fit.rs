//! Fits a Pareto tail to task response times and derives the straggler
//! threshold and expected straggler count for a 10-task job.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use straggler_sim::pareto::{classify_stragglers, expected_stragglers, fit_mle, straggler_threshold, ParetoParams};

fn main() -> straggler_sim::Result<()> {
    let truth = ParetoParams::new(2.0, 120.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let times: Vec<f64> = (0..2000).map(|_| truth.sample(&mut rng)).collect();
    let fit = fit_mle(&times)?;
    println!("true alpha {:.3} beta {:.1}; fitted alpha {:.3} beta {:.1}", truth.alpha, truth.beta, fit.alpha, fit.beta);

    for k in [1.0, 1.5, 2.0] {
        let est = expected_stragglers(&fit, 10, k)?;
        println!(
            "k {k:.2}: threshold {:.1} s, expected stragglers in 10 tasks {:.3}, mitigate {}",
            est.threshold_k_time, est.expected, est.mitigate_count
        );
    }

    let job: Vec<f64> = (0..10).map(|_| truth.sample(&mut rng) * rng.random_range(0.9..1.1)).collect();
    let threshold = straggler_threshold(&fit, 1.5)?;
    let flags = classify_stragglers(&job, threshold);
    for (t, slow) in job.iter().zip(flags) {
        println!("{t:>8.1} s{}", if slow { "  straggler" } else { "" });
    }
    Ok(())
}
