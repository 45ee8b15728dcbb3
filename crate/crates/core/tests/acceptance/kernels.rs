use std::time::Instant;

use survey_meld::rng::RngStream;
use survey_meld::stochastic::{sample_polya_gamma, sample_truncated_normal, sample_ztp};

use crate::support::{mean, variance, Outcome};

fn within_3_se(draws: &[f64], expected: f64) -> (bool, f64) {
    let se = (variance(draws) / draws.len() as f64).sqrt();
    let z = (mean(draws) - expected) / se;
    (z.abs() < 3.0, z)
}

pub fn criterion_1() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let start = Instant::now();
    let mut rng = RngStream::new(101, 0);
    for lambda in [0.5, 2.0, 10.0] {
        let draws: Vec<f64> = (0..100_000).map(|_| sample_ztp(lambda, &mut rng).unwrap() as f64).collect();
        let expected = lambda / (1.0 - (-lambda as f64).exp());
        let (ok, z) = within_3_se(&draws, expected);
        pass &= ok && draws.iter().all(|&k| k >= 1.0);
        notes.push(format!("ztp({lambda}) z={z:+.2}"));
    }
    let ztp_secs = start.elapsed().as_secs_f64();
    pass &= ztp_secs < 5.0;
    notes.push(format!("ztp {ztp_secs:.2}s"));

    let mut rng = RngStream::new(102, 0);
    for c in [0.1, 1.0, 3.0] {
        let draws: Vec<f64> = (0..100_000).map(|_| sample_polya_gamma(1, c, &mut rng).unwrap()).collect();
        let expected = (c / 2.0f64).tanh() / (2.0 * c);
        let (ok, z) = within_3_se(&draws, expected);
        pass &= ok;
        notes.push(format!("pg(1,{c}) z={z:+.2}"));
    }

    // (mean, var, lower, upper), several far in a tail
    let cases = [
        (0.0, 1.0, 8.0, f64::INFINITY),
        (0.0, 1.0, f64::NEG_INFINITY, -8.0),
        (0.0, 1.0, 8.0, 8.001),
        (0.0, 4.0, -16.5, -16.0),
        (3.0, 0.01, f64::NEG_INFINITY, 0.0),
        (0.0, 1.0, -0.001, 0.001),
        (0.0, 1.0, -1.0, 1.0),
        (-2.0, 9.0, 0.0, f64::INFINITY),
    ];
    let mut rng = RngStream::new(103, 0);
    let mut outside = 0usize;
    let per_case = 1_000_000 / cases.len();
    for &(m, v, lo, hi) in &cases {
        for _ in 0..per_case {
            let x = sample_truncated_normal(m, v, lo, hi, &mut rng).unwrap();
            if !(x > lo && x < hi) || !x.is_finite() {
                outside += 1;
            }
        }
    }
    pass &= outside == 0;
    notes.push(format!("truncnorm {} draws, {outside} outside", per_case * cases.len()));

    Outcome::new(1, pass, notes.join("; "))
}
