//! Simulation-based recovery at desk scale. The same fits feed the
//! coverage, convergence, uncertainty and acceptance-rate checks.

use std::time::Instant;

use survey_meld::diagnostics::summarize;
use survey_meld::ingestion::prepare_inputs;
use survey_meld::pipeline::{fit, with_threads, FitResult, INTERVAL_LEVEL};
use survey_meld::rng::RngStream;
use survey_meld::simulator::{simulate_surveys, TruthSpec};

use crate::support::{config_for, mean, Outcome, Violations};

const REPLICATES: u64 = 20;
const CHAINS: usize = 2;
const STAGE1: (usize, usize) = (20_000, 5_000);
const STAGE2: (usize, usize) = (30_000, 10_000);
const RHAT_LIMIT: f64 = 1.1;

/// Per-replicate facts gathered from one fit.
struct Replicate {
    covered: Vec<(String, bool)>,
    /// Posterior mean minus truth, in the order of `covered`.
    errors: Vec<f64>,
    /// (parameter, R̂) for every parameter of every stage.
    rhat: Vec<(String, f64)>,
    melded_sd: f64,
    reservoir_sd: f64,
    walk_acceptance: Vec<(String, f64)>,
    meld_acceptance: Vec<(String, f64)>,
    seconds: f64,
}

fn pooled(result: &FitResult, stage: &str, name: &str) -> Vec<f64> {
    let mut out = Vec::new();
    for c in 0..result.stage2.len() {
        let trace = match stage {
            "ground" => &result.stage1[c].ground.as_ref().expect("ground chain").trace,
            _ => &result.stage2[c].trace,
        };
        out.extend(trace.column(name).unwrap_or_else(|| panic!("{name} missing from {stage} trace")));
    }
    out
}

fn run_replicate(r: u64, violations: &mut Violations) -> Replicate {
    let spec = TruthSpec::default().resolved().unwrap();
    let sim = simulate_surveys(&spec, &mut RngStream::new(5_000 + r, 0)).unwrap();
    let mut cfg = config_for(&spec, STAGE1, STAGE2, CHAINS);
    cfg.run.seed = 7_000 + r;
    cfg.run.threads = 1;
    let inputs = prepare_inputs(&sim.tables, &cfg.model).unwrap();
    let start = Instant::now();
    let result = with_threads(1, || fit(&inputs, &cfg)).unwrap().unwrap();
    let seconds = start.elapsed().as_secs_f64();

    let mut targets: Vec<(&str, String, f64)> = Vec::new();
    for (j, &v) in spec.eta.iter().enumerate() {
        targets.push(("ground", format!("eta[{j}]"), v));
    }
    for (k, &v) in spec.gamma.iter().enumerate() {
        targets.push(("stage2", format!("gamma[{k}]"), v));
    }
    targets.push(("stage2", "alpha[0]".into(), spec.alpha[0]));
    targets.push(("stage2", "alpha[1]".into(), spec.alpha[1]));
    targets.push(("stage2", "sigma2_d".into(), spec.sigma2_d));
    let mut covered = Vec::new();
    let mut errors = Vec::new();
    for (stage, name, truth) in targets {
        let s = summarize(&pooled(&result, stage, &name), INTERVAL_LEVEL).unwrap();
        covered.push((name, s.ci_lo <= truth && truth <= s.ci_hi));
        errors.push(s.mean - truth);
    }

    let rhat = result
        .diagnostics
        .as_ref()
        .expect("diagnostics on")
        .iter()
        .map(|row| (row.parameter.clone(), row.rhat))
        .collect();

    let (mut melded, mut reservoir) = (Vec::new(), Vec::new());
    for ((i, t), _) in result.reservoirs.aerial.cells() {
        let draws: Vec<f64> = result.stage2.iter().flat_map(|o| o.cell_draws(i, t)).collect();
        melded.push(summarize(&draws, INTERVAL_LEVEL).unwrap().sd);
        reservoir.push(result.reservoirs.aerial.sd(i, t).unwrap());
    }

    let mut walk_acceptance = Vec::new();
    let mut meld_acceptance = Vec::new();
    for (c, (s1, s2)) in result.stage1.iter().zip(&result.stage2).enumerate() {
        for out in [&s1.aerial, &s1.ground].into_iter().flatten() {
            for (name, rate) in &out.acceptance {
                if name.starts_with("beta_rho") || name.starts_with("beta_lambda") || name.starts_with("eta") {
                    walk_acceptance.push((format!("{name} chain {c}"), *rate));
                }
            }
        }
        meld_acceptance.push((format!("aerial chain {c}"), s2.meld_acceptance_aerial));
        meld_acceptance.push((format!("ground chain {c}"), s2.meld_acceptance_ground));
        violations.add("recovery", s2.y_draws.len(), s2.invariant_violations);
    }

    Replicate {
        covered,
        errors,
        rhat,
        melded_sd: mean(&melded),
        reservoir_sd: mean(&reservoir),
        walk_acceptance,
        meld_acceptance,
        seconds,
    }
}

pub fn criteria_5_6_10(violations: &mut Violations) -> Vec<Outcome> {
    let reps: Vec<Replicate> = (0..REPLICATES)
        .map(|r| {
            let rep = run_replicate(r, violations);
            eprintln!("  replicate {r}: {:.1}s", rep.seconds);
            rep
        })
        .collect();

    // coverage per parameter
    let names: Vec<String> = reps[0].covered.iter().map(|(n, _)| n.clone()).collect();
    let mut coverage = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let hits = reps.iter().filter(|r| r.covered[k].1).count();
        let bias = mean(&reps.iter().map(|r| r.errors[k]).collect::<Vec<_>>());
        coverage.push((name.clone(), hits as f64 / reps.len() as f64, bias));
    }
    let worst_cov = coverage.iter().map(|(n, c, _)| (n.clone(), *c)).fold((String::new(), 1.0), |a, b| if b.1 < a.1 { b } else { a });
    let cov_ok = coverage.iter().all(|(_, c, _)| *c >= 0.8);

    let mut worst_rhat = (String::new(), 0.0f64);
    let mut rhat_over = Vec::new();
    let mut rhat_count = 0;
    for (r, rep) in reps.iter().enumerate() {
        for (name, value) in &rep.rhat {
            rhat_count += 1;
            if !(*value < RHAT_LIMIT) {
                rhat_over.push(format!("{name} {value:.3} (replicate {r})"));
            }
            if !value.is_finite() || *value > worst_rhat.1 {
                worst_rhat = (name.clone(), *value);
            }
        }
    }
    let slowest = reps.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let c5 = Outcome::new(
        5,
        cov_ok && rhat_over.is_empty() && slowest < 600.0,
        format!(
            "{} replicates; 90% coverage (mean bias) {}; lowest {} = {:.2}; R-hat over {RHAT_LIMIT}: {} of {rhat_count} (max {} = {:.3}){}; slowest replicate {slowest:.0}s",
            reps.len(),
            coverage.iter().map(|(n, c, b)| format!("{n} {c:.2} ({b:+.3})")).collect::<Vec<_>>().join(", "),
            worst_cov.0,
            worst_cov.1,
            rhat_over.len(),
            worst_rhat.0,
            worst_rhat.1,
            if rhat_over.is_empty() { String::new() } else { format!(" [{}]", rhat_over.join(", ")) },
        ),
    );

    let melded = mean(&reps.iter().map(|r| r.melded_sd).collect::<Vec<_>>());
    let reservoir = mean(&reps.iter().map(|r| r.reservoir_sd).collect::<Vec<_>>());
    let c6 = Outcome::new(
        6,
        melded <= reservoir,
        format!(
            "mean posterior SD of surveyed aerial densities over {} replicates: melded {:.3}, stage 1 {:.3} (per 100 km2)",
            reps.len(),
            100.0 * melded,
            100.0 * reservoir
        ),
    );

    let walks: Vec<&(String, f64)> = reps.iter().flat_map(|r| &r.walk_acceptance).collect();
    let melds: Vec<&(String, f64)> = reps.iter().flat_map(|r| &r.meld_acceptance).collect();
    let walk_bad: Vec<String> =
        walks.iter().filter(|(_, a)| !(0.2..=0.4).contains(a)).map(|(n, a)| format!("{n} {a:.3}")).collect();
    let meld_bad: Vec<String> =
        melds.iter().filter(|(_, a)| !(*a > 0.05 && *a < 0.8)).map(|(n, a)| format!("{n} {a:.3}")).collect();
    let range = |xs: &[&(String, f64)]| {
        let v: Vec<f64> = xs.iter().map(|(_, a)| *a).collect();
        (v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    };
    let (wl, wh) = range(&walks);
    let aerial: Vec<&(String, f64)> = melds.iter().copied().filter(|(n, _)| n.starts_with("aerial")).collect();
    let ground: Vec<&(String, f64)> = melds.iter().copied().filter(|(n, _)| n.starts_with("ground")).collect();
    let (al, ah) = range(&aerial);
    let (gl, gh) = range(&ground);
    let mut detail = format!(
        "random-walk acceptance {wl:.3}..{wh:.3} over {} coordinates; melding acceptance aerial {al:.3}..{ah:.3}, ground {gl:.3}..{gh:.3}",
        walks.len()
    );
    if !walk_bad.is_empty() || !meld_bad.is_empty() {
        detail.push_str(&format!("; out of band: {}", [walk_bad.clone(), meld_bad.clone()].concat().join(", ")));
    }
    let c10 = Outcome::new(10, walk_bad.is_empty() && meld_bad.is_empty(), detail);

    vec![c5, c6, c10]
}
