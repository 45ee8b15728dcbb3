//! Exact Pólya-Gamma sampling.
//!
//! PG(1, c) draws use Devroye's alternating-series rejection sampler for the
//! Jacobi distribution J*(1, c/2) (a PG(1, c) draw is J*(1, c/2) / 4), with a
//! truncated-exponential proposal right of `TRUNC` and a truncated
//! inverse-Gaussian proposal left of it. PG(b, c) for integer b is a sum of b
//! independent PG(1, c) draws.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use super::special::ln_std_normal_cdf;
use crate::error::{domain, Result};

const TRUNC: f64 = 0.64;

/// Draw from PG(b, c).
pub fn sample_polya_gamma<R: Rng + ?Sized>(b: u32, c: f64, rng: &mut R) -> Result<f64> {
    if b < 1 {
        return Err(domain("Pólya-Gamma shape b must be at least 1"));
    }
    if !c.is_finite() {
        return Err(domain(format!("Pólya-Gamma tilt must be finite, got {c}")));
    }
    Ok((0..b).map(|_| pg_one(c, rng)).sum())
}

fn pg_one<R: Rng + ?Sized>(c: f64, rng: &mut R) -> f64 {
    let z = 0.5 * c.abs();
    let fz = 0.125 * PI * PI + 0.5 * z * z;
    let p_exp = mass_texpon(z, fz);
    loop {
        let x = if rng.random::<f64>() < p_exp {
            TRUNC + rng.sample::<f64, _>(Exp1) / fz
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        let mut s = series_coef(0, x);
        let y = rng.random::<f64>() * s;
        let mut n = 0u32;
        loop {
            n += 1;
            if n % 2 == 1 {
                s -= series_coef(n, x);
                if y <= s {
                    return 0.25 * x;
                }
            } else {
                s += series_coef(n, x);
                if y > s {
                    break;
                }
            }
        }
    }
}

/// Probability of the exponential branch, p / (p + q).
fn mass_texpon(z: f64, fz: f64) -> f64 {
    let t = TRUNC;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = fz.ln() + fz * t;
    let xb = x0 - z + ln_std_normal_cdf(b);
    let xa = x0 + z + ln_std_normal_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse-Gaussian IG(1/z, 1) restricted to (0, TRUNC).
fn truncated_inverse_gaussian<R: Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNC;
    if 1.0 / t > z {
        // mean 1/z beyond the truncation point: truncated 1/χ² proposal
        loop {
            let (mut e1, mut e2): (f64, f64) = (rng.sample(Exp1), rng.sample(Exp1));
            while e1 * e1 > 2.0 * e2 / t {
                e1 = rng.sample(Exp1);
                e2 = rng.sample(Exp1);
            }
            let r = 1.0 + e1 * t;
            let x = t / (r * r);
            let alpha = (-0.5 * z * z * x).exp();
            if rng.random::<f64>() <= alpha {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let n: f64 = rng.sample(StandardNormal);
            let y = n * n;
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

/// Coefficient a_n(x) of the alternating series for the J*(1) density,
/// using the left or right representation around TRUNC.
fn series_coef(n: u32, x: f64) -> f64 {
    let k = (n as f64 + 0.5) * PI;
    if x > TRUNC {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        let h = n as f64 + 0.5;
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}
