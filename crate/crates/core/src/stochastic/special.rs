//! Scalar special functions and log-densities shared by the samplers.

use std::f64::consts::SQRT_2;
use std::sync::OnceLock;

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

const LN_FACT_TABLE: usize = 2048;

fn ln_fact_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = vec![0.0; LN_FACT_TABLE];
        for k in 1..LN_FACT_TABLE {
            t[k] = t[k - 1] + (k as f64).ln();
        }
        t
    })
}

/// ln(k!)
pub fn ln_factorial(k: u64) -> f64 {
    if (k as usize) < LN_FACT_TABLE {
        ln_fact_table()[k as usize]
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// ln Φ(x), accurate far into the lower tail.
pub fn ln_std_normal_cdf(x: f64) -> f64 {
    if x > -30.0 {
        std_normal_cdf(x).ln()
    } else {
        // asymptotic (Mills ratio) expansion
        let x2 = x * x;
        -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2)).ln()
    }
}

pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * r * r / var
}

pub fn poisson_ln_pmf(k: u64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

pub fn binomial_ln_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let mut out = ln_choose(n, k);
    if k > 0 {
        out += k as f64 * p.ln();
    }
    if n > k {
        out += (n - k) as f64 * (-p).ln_1p();
    }
    out
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 - logistic(x)) without cancellation.
pub fn ln_one_minus_logistic(x: f64) -> f64 {
    -softplus(x)
}

/// ln(logistic(x))
pub fn ln_logistic(x: f64) -> f64 {
    -softplus(-x)
}

/// ln(1 + e^x)
pub fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else if x < -35.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// ln Gamma density with shape/scale parameterization.
pub fn gamma_ln_pdf(x: f64, shape: f64, scale: f64) -> f64 {
    (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
}

/// Mean of PG(b, c): b/(2c) tanh(c/2), with the c -> 0 limit b/4.
pub fn polya_gamma_mean(b: f64, c: f64) -> f64 {
    if c.abs() < 1e-8 {
        b / 4.0
    } else {
        b / (2.0 * c) * (0.5 * c).tanh()
    }
}
