//! Arrival counts, fault times and seed derivation.

use rand::Rng;

use crate::error::{Error, Result};

/// Poisson count by sequential inversion of the CDF.
pub fn sample_poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> Result<u32> {
    if !(lambda > 0.0 && lambda < 700.0) {
        return Err(Error::invalid(format!("poisson lambda {lambda} outside (0, 700)")));
    }
    let u: f64 = rng.random();
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0u32;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    Ok(k)
}

/// Inverse transform of the Weibull CDF at `u`.
pub fn weibull_inverse(u: f64, shape: f64, scale: f64) -> f64 {
    scale * (-(1.0 - u).ln()).powf(1.0 / shape)
}

/// Weibull time-to-failure; a draw of exactly zero is discarded and redrawn.
pub fn sample_weibull<R: Rng + ?Sized>(rng: &mut R, shape: f64, scale: f64) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0) {
        return Err(Error::invalid(format!("weibull shape {shape} and scale {scale} must be positive")));
    }
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return Ok(weibull_inverse(u, shape, scale));
        }
    }
}

/// Mixes a run seed with stream labels into an independent seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut x = seed;
    for p in parts {
        x = splitmix(x ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::function::gamma::gamma;

    #[test]
    fn poisson_matches_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let draws: Vec<u32> = (0..n).map(|_| sample_poisson(&mut rng, 1.2).unwrap()).collect();
        let zeros = draws.iter().filter(|d| **d == 0).count() as f64 / n as f64;
        assert!((zeros - (-1.2f64).exp()).abs() < 0.01, "{zeros}");
        let mean = draws.iter().map(|d| *d as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.2).abs() < 0.02, "{mean}");
        assert!(sample_poisson(&mut rng, 0.0).is_err());
    }

    #[test]
    fn poisson_is_seeded() {
        let draw = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            (0..50).map(|_| sample_poisson(&mut rng, 1.2).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
        assert_ne!(draw(4), draw(5));
    }

    #[test]
    fn weibull_inverse_at_one_minus_inv_e_is_scale() {
        let u = 1.0 - (-1.0f64).exp();
        assert!((weibull_inverse(u, 1.5, 2.0) - 2.0).abs() < 1e-12);
        assert_eq!(weibull_inverse(0.0, 1.5, 2.0), 0.0);
    }

    #[test]
    fn weibull_mean_matches_gamma_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_weibull(&mut rng, 1.5, 2.0).unwrap()).sum::<f64>() / n as f64;
        let expected = 2.0 * gamma(1.0 + 1.0 / 1.5);
        assert!((expected - 1.8055).abs() < 1e-4);
        assert!((mean - expected).abs() / expected < 0.02, "{mean}");
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_ne!(derive_seed(1, &[1, 2]), derive_seed(1, &[2, 1]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
        assert_eq!(derive_seed(9, &[3, 4]), derive_seed(9, &[3, 4]));
    }
}
