//! Convergence checks and posterior summaries over retained draws.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{validation, MeldError, Result};
use crate::mcmc::Trace;

/// Draws of one scalar from several chains of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainBundle {
    chains: Vec<Vec<f64>>,
}

impl ChainBundle {
    pub fn new(chains: Vec<Vec<f64>>) -> Result<Self> {
        if chains.len() < 2 {
            return Err(validation(format!("convergence checks need at least 2 chains, got {}", chains.len())));
        }
        let n = chains[0].len();
        if chains.iter().any(|c| c.len() != n) {
            return Err(validation("chains have different numbers of draws"));
        }
        if n < 10 {
            return Err(validation(format!("convergence checks need at least 10 draws per chain, got {n}")));
        }
        Ok(ChainBundle { chains })
    }

    pub fn chains(&self) -> &[Vec<f64>] {
        &self.chains
    }

    pub fn pooled(&self) -> Vec<f64> {
        self.chains.concat()
    }
}

/// A statistic that may be undefined for constant input.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Flagged {
    pub value: f64,
    pub degenerate: bool,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

/// Split-chain potential scale reduction factor. Each chain is cut into two
/// halves (the middle draw is dropped for odd lengths).
pub fn rhat(bundle: &ChainBundle) -> Flagged {
    let half = bundle.chains[0].len() / 2;
    let mut pieces: Vec<&[f64]> = Vec::with_capacity(2 * bundle.chains.len());
    for c in &bundle.chains {
        pieces.push(&c[..half]);
        pieces.push(&c[c.len() - half..]);
    }
    let n = half as f64;
    let within = pieces.iter().map(|p| sample_var(p)).sum::<f64>() / pieces.len() as f64;
    let means: Vec<f64> = pieces.iter().map(|p| mean(p)).collect();
    let between = n * sample_var(&means);
    if !(within > 0.0) || pieces.iter().all(|p| is_constant(p)) {
        log::warn!("zero within-chain variance; reporting R-hat as 1");
        return Flagged { value: 1.0, degenerate: true };
    }
    let pooled_var = (n - 1.0) / n * within + between / n;
    Flagged { value: (pooled_var / within).sqrt(), degenerate: false }
}

/// Effective sample size from the autocorrelation sum truncated at the first
/// non-positive pair (initial positive sequence), made monotone.
pub fn ess(draws: &[f64]) -> Flagged {
    let n = draws.len();
    if n < 4 {
        return Flagged { value: n as f64, degenerate: true };
    }
    if is_constant(draws) {
        return Flagged { value: n as f64, degenerate: true };
    }
    let m = mean(draws);
    let centred: Vec<f64> = draws.iter().map(|v| v - m).collect();
    let autocov = |lag: usize| centred[..n - lag].iter().zip(&centred[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let c0 = autocov(0);
    if !(c0 > 0.0) {
        return Flagged { value: n as f64, degenerate: true };
    }
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    Flagged { value: n as f64 / tau.max(1.0 / n as f64), degenerate: false }
}

/// Sum of per-chain effective sample sizes.
pub fn ess_bundle(bundle: &ChainBundle) -> Flagged {
    let parts: Vec<Flagged> = bundle.chains.iter().map(|c| ess(c)).collect();
    Flagged { value: parts.iter().map(|f| f.value).sum(), degenerate: parts.iter().all(|f| f.degenerate) }
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Summary {
    /// Rescale every location and spread statistic, e.g. per km² to per 100 km².
    pub fn scaled(&self, factor: f64) -> Summary {
        Summary {
            mean: self.mean * factor,
            sd: self.sd * factor.abs(),
            median: self.median * factor,
            ci_lo: self.ci_lo * factor,
            ci_hi: self.ci_hi * factor,
        }
    }
}

/// Mean, sd, median and equal-tailed interval at `level` (e.g. 0.9).
pub fn summarize(draws: &[f64], level: f64) -> Result<Summary> {
    if draws.is_empty() {
        return Err(MeldError::NoDraws("cannot summarize an empty draw set".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(validation(format!("interval level must lie in (0, 1), got {level}")));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let tail = 0.5 * (1.0 - level);
    Ok(Summary {
        mean: mean(draws),
        sd: if draws.len() > 1 { sample_var(draws).sqrt() } else { 0.0 },
        median: quantile_sorted(&sorted, 0.5),
        ci_lo: quantile_sorted(&sorted, tail),
        ci_hi: quantile_sorted(&sorted, 1.0 - tail),
    })
}

/// One line of the diagnostics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub parameter: String,
    pub rhat: f64,
    pub ess: f64,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub acceptance_rate: Option<f64>,
}

/// Diagnostics for every parameter shared by the chain traces. Acceptance
/// rates are averaged over chains when present.
pub fn diagnostics_table(traces: &[Trace], acceptance: &[Vec<(String, f64)>], level: f64) -> Result<Vec<DiagnosticsRow>> {
    let first = traces.first().ok_or_else(|| MeldError::NoDraws("no chains to diagnose".into()))?;
    let mut acc: HashMap<&str, (f64, usize)> = HashMap::new();
    for chain in acceptance {
        for (name, r) in chain {
            if r.is_finite() {
                let e = acc.entry(name.as_str()).or_default();
                e.0 += r;
                e.1 += 1;
            }
        }
    }
    let len = traces.iter().map(Trace::len).min().unwrap_or(0);
    let mut rows = Vec::with_capacity(first.names.len());
    for name in &first.names {
        let chains: Vec<Vec<f64>> = traces
            .iter()
            .map(|t| t.column(name).map(|mut c| {
                c.truncate(len);
                c
            }))
            .collect::<Option<_>>()
            .ok_or_else(|| MeldError::Dimension(format!("parameter {name} missing from a chain")))?;
        let bundle = ChainBundle::new(chains)?;
        let s = summarize(&bundle.pooled(), level)?;
        rows.push(DiagnosticsRow {
            parameter: name.clone(),
            rhat: rhat(&bundle).value,
            ess: ess_bundle(&bundle).value,
            mean: s.mean,
            sd: s.sd,
            ci_lo: s.ci_lo,
            ci_hi: s.ci_hi,
            acceptance_rate: acc.get(name.as_str()).map(|(sum, k)| sum / *k as f64),
        });
    }
    Ok(rows)
}
