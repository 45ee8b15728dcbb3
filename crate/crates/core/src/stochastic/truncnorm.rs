//! Truncated normal draws by rejection, stable in both tails.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{domain, Result};

/// Draw from N(mean, var) restricted to (lower, upper). Either bound may be
/// infinite.
pub fn sample_truncated_normal<R: Rng + ?Sized>(
    mean: f64,
    var: f64,
    lower: f64,
    upper: f64,
    rng: &mut R,
) -> Result<f64> {
    if !(var > 0.0) || !var.is_finite() || !mean.is_finite() {
        return Err(domain(format!("truncated normal needs finite mean and positive variance, got ({mean}, {var})")));
    }
    if !(lower < upper) || lower.is_nan() || upper.is_nan() {
        return Err(domain(format!("empty truncation interval ({lower}, {upper})")));
    }
    let sd = var.sqrt();
    let a = (lower - mean) / sd;
    let b = (upper - mean) / sd;
    loop {
        let z = std_truncated(a, b, rng);
        let x = mean + sd * z;
        if x > lower && x < upper {
            return Ok(x);
        }
        // rounding pushed the draw onto a boundary; a tiny interval can do this
        if (upper - lower) <= f64::EPSILON * mean.abs().max(1.0) * 4.0 {
            return Ok(0.5 * (lower + upper));
        }
    }
}

fn std_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= 0.0 {
        one_sided(a, b, rng)
    } else if b <= 0.0 {
        -one_sided(-b, -a, rng)
    } else if b - a < 2.5 {
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() <= (-0.5 * z * z).exp() {
                return z;
            }
        }
    } else {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z > a && z < b {
                return z;
            }
        }
    }
}

/// Standard normal restricted to (a, b) with 0 <= a < b.
fn one_sided<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    if b - a < 1.0 / rate {
        // narrow window: uniform proposal against the density ratio to its peak at a
        loop {
            let z = a + (b - a) * rng.random::<f64>();
            if rng.random::<f64>() <= (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    loop {
        let z = a + rng.sample::<f64, _>(Exp1) / rate;
        if z >= b {
            continue;
        }
        let d = z - rate;
        if rng.random::<f64>() <= (-0.5 * d * d).exp() {
            return z;
        }
    }
}
