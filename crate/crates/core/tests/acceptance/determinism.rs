use survey_meld::config::FitConfig;
use survey_meld::persist::Manifest;
use survey_meld::pipeline::{cmd_fit, cmd_simulate};
use survey_meld::simulator::TruthSpec;

use crate::support::{Outcome, Violations};

/// Fit the same simulated dataset twice, once on one worker and once on two,
/// and compare every output byte for byte.
pub fn criterion_9(violations: &mut Violations) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = cmd_simulate(&TruthSpec::default(), 11, dir.path()).unwrap();
    let mut cfg = FitConfig::load(&cfg_path).unwrap();
    cfg.stage1.iterations = 4_000;
    cfg.stage1.burn_in = 1_000;
    cfg.stage2.iterations = 4_000;
    cfg.stage2.burn_in = 1_000;
    cfg.stage2.min_reservoir = 100;
    cfg.run.chains = 2;

    let mut runs = Vec::new();
    for (name, threads) in [("first", 1), ("second", 2)] {
        let mut c = cfg.clone();
        c.run.threads = threads;
        c.run.out_dir = dir.path().join(name);
        let result = cmd_fit(&c).unwrap();
        for o in &result.stage2 {
            violations.add("determinism", o.y_draws.len(), o.invariant_violations);
        }
        runs.push((c.run.out_dir.clone(), Manifest::read(&c.run.out_dir).unwrap()));
    }
    let (a_dir, a) = &runs[0];
    let (b_dir, b) = &runs[1];
    let mut differing = Vec::new();
    let same_list = a.outputs.iter().map(|f| &f.path).eq(b.outputs.iter().map(|f| &f.path));
    for f in &a.outputs {
        let left = std::fs::read(a_dir.join(&f.path)).unwrap();
        let right = std::fs::read(b_dir.join(&f.path)).unwrap_or_default();
        if left != right {
            differing.push(f.path.clone());
        }
    }
    Outcome::new(
        9,
        same_list && differing.is_empty() && !a.outputs.is_empty(),
        format!(
            "{} output files compared across 1- and 2-worker runs, {} differ{}",
            a.outputs.len(),
            differing.len(),
            if differing.is_empty() { String::new() } else { format!(": {}", differing.join(", ")) }
        ),
    )
}
