use std::fmt;

use survey_meld::config::{FitConfig, Stage1Config, Stage2Config};
use survey_meld::diagnostics::ess;
use survey_meld::simulator::TruthSpec;

pub struct Outcome {
    pub id: u32,
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(id: u32, pass: bool, detail: impl Into<String>) -> Self {
        Outcome { id, pass, detail: detail.into() }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2}: {verdict}  {}", self.id, self.detail)
    }
}

/// Stage-2 invariant failures tallied over every suite that runs the sampler.
#[derive(Default)]
pub struct Violations {
    pub draws: usize,
    pub failures: usize,
    pub suites: Vec<String>,
}

impl Violations {
    pub fn add(&mut self, suite: &str, draws: usize, failures: usize) {
        self.draws += draws;
        self.failures += failures;
        if !self.suites.iter().any(|s| s == suite) {
            self.suites.push(suite.to_string());
        }
    }

    pub fn outcome(&self) -> Outcome {
        Outcome::new(
            8,
            self.draws > 0 && self.failures == 0,
            format!(
                "{} invariant failures over {} retained stage-2 states ({})",
                self.failures,
                self.draws,
                self.suites.join(", ")
            ),
        )
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// z-score of the difference in means between independent draws `iid` and
/// correlated chain draws `chain`, the latter with an ESS-based error.
pub fn mean_difference_z(iid: &[f64], chain: &[f64]) -> f64 {
    let chain_ess = ess(chain).value.max(1.0);
    let se = (variance(iid) / iid.len() as f64 + variance(chain) / chain_ess).sqrt();
    if se == 0.0 {
        return if mean(iid) == mean(chain) { 0.0 } else { f64::INFINITY };
    }
    (mean(iid) - mean(chain)) / se
}

/// Fit configuration matching a simulated design.
pub fn config_for(spec: &TruthSpec, stage1: (usize, usize), stage2: (usize, usize), chains: usize) -> FitConfig {
    let mut cfg = FitConfig::default();
    cfg.model.m_super = spec.m_super;
    cfg.model.nu_d = spec.nu_d;
    cfg.model.aerial_area_km2 = spec.aerial_area_km2;
    cfg.model.tau_structure = spec.tau_structure;
    cfg.model.static_columns = spec.static_columns.clone();
    cfg.model.phi_support = spec.phi_support.clone();
    cfg.stage1 = Stage1Config { iterations: stage1.0, burn_in: stage1.1, ..Stage1Config::default() };
    cfg.stage2 = Stage2Config { iterations: stage2.0, burn_in: stage2.1, ..Stage2Config::default() };
    cfg.run.chains = chains;
    cfg.run.threads = 0;
    cfg
}
