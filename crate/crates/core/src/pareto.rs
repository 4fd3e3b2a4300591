//! Pareto model of task response times.
//!
//! Response times of a job's tasks are treated as Pareto(α, β) draws. The
//! closed-form MLE gives β = min(X) and α = q / (Σ ln X_i − q ln β). A task is
//! a straggler when it runs past K = k·α·β/(α − 1), i.e. k times the
//! distribution mean, and a job of q tasks is expected to hold
//! E_S = q·(K/β)^(−α) of them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound applied to predicted α before use.
pub const ALPHA_FLOOR: f64 = 1.0 + 1e-6;
/// Lower bound applied to predicted β before use.
pub const BETA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoParams {
    /// Tail index.
    pub alpha: f64,
    /// Scale, the smallest possible response time (seconds).
    pub beta: f64,
}

impl ParetoParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "pareto params need alpha > 0 and beta > 0, got ({alpha}, {beta})"
            )));
        }
        Ok(ParetoParams { alpha, beta })
    }

    /// Clamp into the region where the mean exists.
    pub fn clamped(self) -> Self {
        ParetoParams {
            alpha: self.alpha.max(ALPHA_FLOOR),
            beta: self.beta.max(BETA_FLOOR),
        }
    }

    pub fn mean(&self) -> Option<f64> {
        (self.alpha > 1.0).then(|| self.alpha * self.beta / (self.alpha - 1.0))
    }

    /// Inverse-transform draw: β·u^(−1/α) with u uniform in (0, 1].
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        self.beta * u.powf(-1.0 / self.alpha)
    }

    /// Log-likelihood of `samples`; −∞ when any sample is below β.
    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        if samples.iter().any(|x| *x < self.beta) {
            return f64::NEG_INFINITY;
        }
        let q = samples.len() as f64;
        let sum_ln: f64 = samples.iter().map(|x| x.ln()).sum();
        q * self.alpha.ln() + q * self.alpha * self.beta.ln() - (self.alpha + 1.0) * sum_ln
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StragglerEstimate {
    /// E_S, clamped to [0, q].
    pub expected: f64,
    /// ⌊E_S⌋, at most q.
    pub mitigate_count: usize,
    /// K in seconds.
    pub threshold_k_time: f64,
}

pub fn pareto_cdf(params: &ParetoParams, x: f64) -> f64 {
    if x < params.beta {
        0.0
    } else {
        1.0 - (x / params.beta).powf(-params.alpha)
    }
}

/// Maximum-likelihood fit. The returned α is not clamped.
pub fn fit_mle(samples: &[f64]) -> Result<ParetoParams> {
    if samples.len() < 2 {
        return Err(Error::DegenerateFit("need at least two samples"));
    }
    if samples.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::DegenerateFit("samples must be positive and finite"));
    }
    let beta = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let q = samples.len() as f64;
    // Σ ln(X_i / β) == Σ ln X_i − q ln β, but without cancellation.
    let denom: f64 = samples.iter().map(|x| (x / beta).ln()).sum();
    if !(denom > 0.0) {
        return Err(Error::DegenerateFit("all samples equal"));
    }
    Ok(ParetoParams {
        alpha: q / denom,
        beta,
    })
}

/// K = k·α·β/(α − 1).
pub fn straggler_threshold(params: &ParetoParams, k: f64) -> Result<f64> {
    if !(params.alpha > 1.0) {
        return Err(Error::invalid(format!(
            "straggler threshold needs alpha > 1, got {}",
            params.alpha
        )));
    }
    if !(k > 0.0) {
        return Err(Error::invalid(format!("k must be positive, got {k}")));
    }
    Ok(k * params.alpha * params.beta / (params.alpha - 1.0))
}

pub fn expected_stragglers(params: &ParetoParams, q: usize, k: f64) -> Result<StragglerEstimate> {
    if q == 0 {
        return Err(Error::invalid("job must have at least one task"));
    }
    let threshold = straggler_threshold(params, k)?;
    let qf = q as f64;
    let expected = (qf * (threshold / params.beta).powf(-params.alpha)).clamp(0.0, qf);
    Ok(StragglerEstimate {
        expected,
        mitigate_count: (expected.floor() as usize).min(q),
        threshold_k_time: threshold,
    })
}

/// `true` where the completion time exceeds `threshold`.
pub fn classify_stragglers(completion_times: &[f64], threshold: f64) -> Vec<bool> {
    completion_times.iter().map(|t| *t > threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force maximizer of the log-likelihood in α (β fixed at the sample
    /// minimum): a 1e-3 grid over (1, 5], then a 1e-7 grid around the best cell.
    fn grid_argmax_alpha(samples: &[f64]) -> f64 {
        let beta = samples.iter().copied().fold(f64::INFINITY, f64::min);
        let q = samples.len() as f64;
        let sum_ln: f64 = samples.iter().map(|x| x.ln()).sum();
        let ll = |a: f64| q * a.ln() + q * a * beta.ln() - (a + 1.0) * sum_ln;
        let scan = |lo: f64, step: f64, n: usize| {
            (0..=n)
                .map(|i| lo + step * i as f64)
                .filter(|a| *a > 1.0)
                .map(|a| (a, ll(a)))
                .fold((f64::NAN, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
        };
        let coarse = scan(1.0, 1e-3, 4000);
        scan(coarse.0 - 1e-3, 1e-7, 20_000).0
    }

    #[test]
    fn cdf_examples() {
        let p = ParetoParams::new(2.0, 1.0).unwrap();
        assert_eq!(pareto_cdf(&p, 1.0), 0.0);
        assert_eq!(pareto_cdf(&p, 2.0), 0.75);
        assert_eq!(pareto_cdf(&p, 0.5), 0.0);
    }

    #[test]
    fn fit_examples() {
        assert!(fit_mle(&[1.0, 1.0, 1.0]).is_err());
        assert!(fit_mle(&[1.0]).is_err());
        assert!(fit_mle(&[1.0, -2.0]).is_err());
        let p = fit_mle(&[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(p.beta, 1.0);
        assert!((p.alpha - 3.0 / (3.0 * 2f64.ln())).abs() < 1e-12);
        assert!((p.alpha - std::f64::consts::LOG2_E).abs() < 1e-12);
    }

    #[test]
    fn fit_large_sample_matches_grid_oracle() {
        let truth = ParetoParams::new(2.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs: Vec<f64> = (0..10_000).map(|_| truth.sample(&mut rng)).collect();
        let fit = fit_mle(&xs).unwrap();
        assert!((1.9..=2.1).contains(&fit.alpha), "alpha {}", fit.alpha);
        let oracle = grid_argmax_alpha(&xs);
        assert!((fit.alpha - oracle).abs() < 1e-6, "{} vs {oracle}", fit.alpha);
    }

    #[test]
    fn threshold_examples() {
        let p = ParetoParams::new(2.0, 1.0).unwrap();
        assert_eq!(straggler_threshold(&p, 1.5).unwrap(), 3.0);
        assert_eq!(straggler_threshold(&p, 1.0).unwrap(), p.mean().unwrap());
        let wide = ParetoParams::new(1001.0, 1.0).unwrap();
        assert!((straggler_threshold(&wide, 1.5).unwrap() - 1.5015).abs() < 1e-4);
        let heavy = ParetoParams::new(0.9, 1.0).unwrap();
        assert!(straggler_threshold(&heavy, 1.5).is_err());
    }

    #[test]
    fn expected_straggler_examples() {
        let p = ParetoParams::new(2.0, 1.0).unwrap();
        let est = expected_stragglers(&p, 10, 1.5).unwrap();
        assert_eq!(est.threshold_k_time, 3.0);
        assert!((est.expected - 10.0 / 9.0).abs() < 1e-12);
        assert_eq!(est.mitigate_count, 1);

        let p = ParetoParams::new(3.0, 1.0).unwrap();
        let est = expected_stragglers(&p, 5, 1.5).unwrap();
        assert!((est.threshold_k_time - 2.25).abs() < 1e-12);
        assert!((est.expected - 5.0 * 2.25f64.powi(-3)).abs() < 1e-12);
        assert_eq!(est.mitigate_count, 0);

        let est = expected_stragglers(&ParetoParams::new(1.2, 3.0).unwrap(), 1, 1.0).unwrap();
        assert!(est.mitigate_count <= 1);
        assert!(expected_stragglers(&p, 0, 1.5).is_err());
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify_stragglers(&[1.0, 2.0, 3.0], 3.0), vec![false; 3]);
        assert_eq!(classify_stragglers(&[1.0, 4.0], 3.0), vec![false, true]);
        assert!(classify_stragglers(&[], 3.0).is_empty());
    }

    #[test]
    fn expected_stragglers_rise_with_alpha_near_one() {
        // For k = 1 the exponent α ln(α/(α−1)) decreases in α, so E_S grows.
        let at = |a: f64| {
            expected_stragglers(&ParetoParams::new(a, 1.0).unwrap(), 10, 1.0)
                .unwrap()
                .expected
        };
        assert!(at(1.5) < at(2.0));
        assert!(at(2.0) < at(5.0));
    }

    proptest! {
        #[test]
        fn fit_is_scale_equivariant(
            xs in prop::collection::vec(0.1f64..100.0, 2..40),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(xs.iter().any(|x| *x != xs[0]));
            let a = fit_mle(&xs).unwrap();
            let scaled: Vec<f64> = xs.iter().map(|x| x * scale).collect();
            let b = fit_mle(&scaled).unwrap();
            prop_assert!((a.alpha - b.alpha).abs() <= 1e-9 * a.alpha.max(1.0));
            prop_assert!((a.beta * scale - b.beta).abs() <= 1e-12 * b.beta);
        }

        #[test]
        fn expected_stragglers_monotone(
            alpha in 1.01f64..20.0,
            k in 1.0f64..3.0,
            dk in 0.001f64..1.0,
            q in 1usize..50,
        ) {
            let p = ParetoParams::new(alpha, 2.0).unwrap();
            let base = expected_stragglers(&p, q, k).unwrap().expected;
            let more_k = expected_stragglers(&p, q, k + dk).unwrap().expected;
            prop_assert!(more_k <= base);
            // the clamp never binds for k >= 1
            prop_assert!(base < q as f64);
        }

        // d/dα [α ln(kα/(α−1))] = ln(kα/(α−1)) − 1/(α−1) is positive here,
        // so E_S falls as α grows.
        #[test]
        fn expected_stragglers_fall_with_alpha_in_light_tail_region(
            alpha in 3.0f64..20.0,
            da in 0.001f64..5.0,
            k in 1.5f64..3.0,
            q in 1usize..50,
        ) {
            let lo = expected_stragglers(&ParetoParams::new(alpha, 2.0).unwrap(), q, k).unwrap();
            let hi = expected_stragglers(&ParetoParams::new(alpha + da, 2.0).unwrap(), q, k).unwrap();
            prop_assert!(hi.expected <= lo.expected);
        }
    }
}
