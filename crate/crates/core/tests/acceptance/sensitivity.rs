//! Withholding more aerial years should move the stage-2 densities further
//! from the full-data fit.

use std::time::Instant;

use survey_meld::ingestion::prepare_inputs;
use survey_meld::pipeline::{fit, pooled_means, run_scenarios, Scenario};
use survey_meld::rng::RngStream;
use survey_meld::simulator::{simulate_surveys, TruthSpec};

use crate::support::{config_for, Outcome, Violations};

const REPLICATES: u64 = 5;
/// Nested masks over the default 2005–2012 design.
const MASKS: [&str; 3] = ["drop:2008", "drop:2008,2010", "drop:2006,2008,2010-2011"];

pub fn criterion_7(violations: &mut Violations) -> Outcome {
    let start = Instant::now();
    let scenarios: Vec<Scenario> = MASKS.iter().map(|m| Scenario::parse(m).unwrap()).collect();
    let mut monotone = 0;
    let mut rows = Vec::new();
    for r in 0..REPLICATES {
        let spec = TruthSpec::default().resolved().unwrap();
        let sim = simulate_surveys(&spec, &mut RngStream::new(9_000 + r, 0)).unwrap();
        let mut cfg = config_for(&spec, (8_000, 2_000), (12_000, 4_000), 2);
        cfg.run.seed = 9_500 + r;
        cfg.run.diagnostics = false;
        let inputs = prepare_inputs(&sim.tables, &cfg.model).unwrap();
        let reference = fit(&inputs, &cfg).unwrap();
        for o in &reference.stage2 {
            violations.add("sensitivity", o.y_draws.len(), o.invariant_violations);
        }
        let means = pooled_means(&reference.stage2).unwrap();
        let scores = run_scenarios(&sim.tables, &cfg, &means, &scenarios).unwrap();
        let rmse: Vec<f64> = scores.iter().map(|s| s.rmse).collect();
        if rmse.windows(2).all(|w| w[0] <= w[1]) {
            monotone += 1;
        }
        rows.push(format!("[{}]", rmse.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ")));
    }
    Outcome::new(
        7,
        monotone >= 4,
        format!(
            "RMSE per 100 km2 for 1, 2, 4 withheld years: {}; non-decreasing in {monotone} of {REPLICATES} replicates, {:.0}s",
            rows.join(" "),
            start.elapsed().as_secs_f64()
        ),
    )
}
