//! Zero-truncated Poisson: Poisson(λ) conditioned on being at least one.

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use super::special::ln_factorial;
use crate::error::{domain, Result};

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(domain(format!("zero-truncated Poisson rate must be positive and finite, got {lambda}")));
    }
    Ok(())
}

/// Draw from ZTP(λ). Inverse-CDF below λ = 1 (bounded cost as λ → 0),
/// rejection from Poisson(λ) otherwise (acceptance ≥ 1 − e⁻¹).
pub fn sample_ztp<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    check_lambda(lambda)?;
    if lambda < 1.0 {
        // P(1) = λ / (e^λ − 1); P(k+1) = P(k) λ / (k + 1)
        let u: f64 = rng.random();
        let mut k = 1u64;
        let mut p = lambda / lambda.exp_m1();
        let mut cum = p;
        while u > cum && p > 0.0 {
            p *= lambda / (k + 1) as f64;
            k += 1;
            cum += p;
        }
        Ok(k)
    } else {
        let pois = Poisson::new(lambda).map_err(|e| domain(format!("Poisson({lambda}): {e}")))?;
        loop {
            let k = pois.sample(rng) as u64;
            if k >= 1 {
                return Ok(k);
            }
        }
    }
}

/// ln of λ^k e^{−λ} / (k! (1 − e^{−λ})).
pub fn ztp_log_pmf(k: u64, lambda: f64) -> Result<f64> {
    if k == 0 {
        return Err(domain("zero-truncated Poisson has no mass at 0"));
    }
    check_lambda(lambda)?;
    Ok(ztp_ln_pmf_unchecked(k, lambda))
}

#[inline]
pub(crate) fn ztp_ln_pmf_unchecked(k: u64, lambda: f64) -> f64 {
    // ln(1 − e^{−λ}) = ln(−expm1(−λ))
    k as f64 * lambda.ln() - lambda - ln_factorial(k) - (-(-lambda).exp_m1()).ln()
}

/// E[X] = λ / (1 − e^{−λ})
pub fn ztp_mean(lambda: f64) -> f64 {
    lambda / -(-lambda).exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn degenerates_at_one_for_tiny_rate() {
        let mut rng = RngStream::new(1, 0);
        for _ in 0..10_000 {
            assert_eq!(sample_ztp(1e-12, &mut rng).unwrap(), 1);
        }
        assert!(ztp_log_pmf(1, 1e-12).unwrap().abs() < 1e-11);
    }

    #[test]
    fn rejects_bad_rates_and_zero() {
        let mut rng = RngStream::new(1, 0);
        assert!(sample_ztp(0.0, &mut rng).is_err());
        assert!(sample_ztp(-1.0, &mut rng).is_err());
        assert!(sample_ztp(f64::NAN, &mut rng).is_err());
        assert!(sample_ztp(f64::INFINITY, &mut rng).is_err());
        assert!(ztp_log_pmf(0, 2.0).is_err());
    }

    #[test]
    fn log_pmf_against_normalised_poisson() {
        // oracle: Poisson pmf renormalised over k >= 1 by explicit summation
        let lambda: f64 = 2.0;
        let pois = |k: u64| (-lambda).exp() * lambda.powi(k as i32) / (1..=k).map(|j| j as f64).product::<f64>();
        let mass: f64 = (1..=60).map(pois).sum();
        let oracle = (pois(2) / mass).ln();
        assert!((ztp_log_pmf(2, lambda).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - (-1.1614)).abs() < 1e-4);
    }

    #[test]
    fn normalises() {
        let total: f64 = (1..=200).map(|k| ztp_log_pmf(k, 5.0).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn empirical_mean_lambda_two() {
        let mut rng = RngStream::new(5, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_ztp(2.0, &mut rng).unwrap() as f64).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = 2.0 / (1.0 - (-2.0f64).exp());
        assert!((target - 2.313).abs() < 1e-3);
        assert!((m - target).abs() < 3.0 * (v / n as f64).sqrt(), "mean {m}");
    }

    #[test]
    fn never_zero() {
        let mut rng = RngStream::new(6, 0);
        for _ in 0..100_000 {
            assert!(sample_ztp(10.0, &mut rng).unwrap() >= 1);
            assert!(sample_ztp(0.3, &mut rng).unwrap() >= 1);
        }
    }
}
