//! Ground-survey N-mixture submodel: repeated male counts at monitored leks
//! with imperfect attendance, latent Poisson lek abundance.

use rand::Rng;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};

use crate::config::{NProposal, Priors, Stage1Config};
use crate::error::{config, validation, MeldError, Result};
use crate::mcmc::{indexed_names, IntTuner, RwTuner, Trace};
use crate::reservoir::{DensityReservoir, Stage1Output};
use crate::stochastic::special::{binomial_ln_pmf, ln_factorial};

/// Visit counts at one monitored lek in one year.
#[derive(Clone, Debug, PartialEq)]
pub struct Lek {
    pub counts: Vec<u32>,
}

impl Lek {
    pub fn max_count(&self) -> u32 {
        self.counts.iter().copied().max().unwrap_or(0)
    }
}

/// One surveyed site-year.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundCell {
    /// Index in the joint-model region numbering.
    pub region: usize,
    pub year: usize,
    pub leks: Vec<Lek>,
    /// Area-weighted covariate row.
    pub w: Vec<f64>,
    pub area_km2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundDataset {
    pub n_regions: usize,
    pub n_years: usize,
    pub cells: Vec<GroundCell>,
}

impl GroundDataset {
    pub fn new(n_regions: usize, n_years: usize, cells: Vec<GroundCell>) -> Result<Self> {
        let p = cells.first().map_or(0, |c| c.w.len());
        let mut seen = std::collections::HashSet::new();
        for c in &cells {
            if c.region >= n_regions || c.year >= n_years {
                return Err(validation(format!("ground cell ({}, {}) outside the region/year range", c.region, c.year)));
            }
            if !seen.insert((c.region, c.year)) {
                return Err(validation(format!("ground cell ({}, {}) listed twice", c.region, c.year)));
            }
            if c.w.len() != p {
                return Err(MeldError::Dimension("ground covariate rows differ in length".into()));
            }
            if !(c.area_km2 > 0.0) {
                return Err(validation(format!("ground region {} has non-positive area", c.region)));
            }
            if c.leks.iter().any(|l| l.counts.is_empty()) {
                return Err(validation(format!("a lek at region {}, year {} has no visits", c.region, c.year)));
            }
        }
        Ok(GroundDataset { n_regions, n_years, cells })
    }

    pub fn p_eta(&self) -> usize {
        self.cells.first().map_or(0, |c| c.w.len())
    }

    pub fn cell_index(&self, region: usize, year: usize) -> Option<usize> {
        self.cells.iter().position(|c| c.region == region && c.year == year)
    }

    pub fn n_leks(&self) -> usize {
        self.cells.iter().map(|c| c.leks.len()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmixPriors {
    pub eta_var: f64,
}

impl From<&Priors> for NmixPriors {
    fn from(p: &Priors) -> Self {
        NmixPriors { eta_var: p.eta_var }
    }
}

#[derive(Clone, Debug)]
pub struct NmixState {
    pub eta: Vec<f64>,
    pub p: f64,
    /// Latent abundance per cell per lek.
    pub n: Vec<Vec<u32>>,
    pub eta_tuners: Vec<RwTuner>,
    pub n_tuner: IntTuner,
    pub iteration: u64,
}

impl NmixState {
    /// Abundance at the largest count, attendance 0.5, coefficients zero.
    pub fn initial(data: &GroundDataset) -> Self {
        NmixState {
            eta: vec![0.0; data.p_eta()],
            p: 0.5,
            n: data.cells.iter().map(|c| c.leks.iter().map(Lek::max_count).collect()).collect(),
            eta_tuners: (0..data.p_eta()).map(|_| RwTuner::new(0.1)).collect(),
            n_tuner: IntTuner::new(2),
            iteration: 0,
        }
    }

    pub fn adapt(&mut self, target: f64) {
        for t in &mut self.eta_tuners {
            t.adapt(target);
        }
        self.n_tuner.adapt(target);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn visits_ln_lik(counts: &[u32], n: u32, p: f64) -> f64 {
    counts.iter().map(|&f| binomial_ln_pmf(f as u64, n as u64, p)).sum()
}

/// Metropolis update of every latent lek abundance.
pub fn update_abundance<R: Rng + ?Sized>(
    state: &mut NmixState,
    data: &GroundDataset,
    proposal: NProposal,
    adapting: bool,
    rng: &mut R,
) -> Result<()> {
    for (c, cell) in data.cells.iter().enumerate() {
        let mu = dot(&cell.w, &state.eta).exp();
        let ln_mu = mu.ln();
        for (l, lek) in cell.leks.iter().enumerate() {
            let cur = state.n[c][l];
            let floor = lek.max_count();
            match proposal {
                NProposal::Walk => {
                    let width = state.n_tuner.width as i64;
                    let mut jump = rng.random_range(1..=width);
                    if rng.random::<bool>() {
                        jump = -jump;
                    }
                    let cand = cur as i64 + jump;
                    let accept = if cand < floor as i64 {
                        false
                    } else {
                        let cand = cand as u32;
                        let prior = (cand as f64 - cur as f64) * ln_mu - ln_factorial(cand as u64) + ln_factorial(cur as u64);
                        let diff = visits_ln_lik(&lek.counts, cand, state.p) - visits_ln_lik(&lek.counts, cur, state.p) + prior;
                        let ok = rng.random::<f64>().ln() < diff;
                        if ok {
                            state.n[c][l] = cand;
                        }
                        ok
                    };
                    state.n_tuner.record(accept, adapting);
                }
                NProposal::Prior => {
                    let cand = if mu > 0.0 {
                        Poisson::new(mu).map_err(|e| MeldError::Numerical(format!("Poisson({mu}): {e}")))?.sample(rng) as u32
                    } else {
                        0
                    };
                    if cand >= floor {
                        let diff = visits_ln_lik(&lek.counts, cand, state.p) - visits_ln_lik(&lek.counts, cur, state.p);
                        if rng.random::<f64>().ln() < diff {
                            state.n[c][l] = cand;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Beta draw of attendance from Binomial conjugacy under a uniform prior.
pub fn update_attendance<R: Rng + ?Sized>(state: &mut NmixState, data: &GroundDataset, rng: &mut R) -> Result<()> {
    let (mut flushed, mut missed) = (0.0, 0.0);
    for (c, cell) in data.cells.iter().enumerate() {
        for (l, lek) in cell.leks.iter().enumerate() {
            let n = state.n[c][l] as f64;
            for &f in &lek.counts {
                flushed += f as f64;
                missed += n - f as f64;
            }
        }
    }
    let beta = Beta::new(1.0 + flushed, 1.0 + missed).map_err(|e| MeldError::Numerical(e.to_string()))?;
    state.p = beta.sample(rng).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    Ok(())
}

/// Element-wise random walk on the abundance coefficients.
pub fn update_eta<R: Rng + ?Sized>(
    state: &mut NmixState,
    data: &GroundDataset,
    priors: &NmixPriors,
    adapting: bool,
    rng: &mut R,
) {
    let stats: Vec<(f64, f64)> = data
        .cells
        .iter()
        .enumerate()
        .map(|(c, cell)| (cell.leks.len() as f64, state.n[c].iter().map(|&n| n as f64).sum()))
        .collect();
    let mut lin: Vec<f64> = data.cells.iter().map(|c| dot(&c.w, &state.eta)).collect();
    for j in 0..state.eta.len() {
        let delta = state.eta_tuners[j].step * rng.sample::<f64, _>(StandardNormal);
        let old = state.eta[j];
        let new = old + delta;
        let mut diff = (old * old - new * new) / (2.0 * priors.eta_var);
        for (c, cell) in data.cells.iter().enumerate() {
            let x = cell.w[j];
            let (leks, total) = stats[c];
            if x == 0.0 || leks == 0.0 {
                continue;
            }
            let e_new = lin[c] + delta * x;
            diff += total * (e_new - lin[c]) - leks * (e_new.exp() - lin[c].exp());
        }
        let accept = rng.random::<f64>().ln() < diff;
        if accept {
            state.eta[j] = new;
            for (c, cell) in data.cells.iter().enumerate() {
                lin[c] += delta * cell.w[j];
            }
        }
        state.eta_tuners[j].record(accept, adapting);
    }
}

fn check_invariants(state: &NmixState, data: &GroundDataset) -> Result<()> {
    for (c, cell) in data.cells.iter().enumerate() {
        for (l, lek) in cell.leks.iter().enumerate() {
            if state.n[c][l] < lek.max_count() {
                return Err(MeldError::Internal(format!(
                    "lek abundance {} below its largest count {}",
                    state.n[c][l],
                    lek.max_count()
                )));
            }
        }
    }
    if !(state.p > 0.0 && state.p < 1.0) || state.eta.iter().any(|e| !e.is_finite()) {
        return Err(MeldError::Internal("ground parameters left their support".into()));
    }
    Ok(())
}

/// One sweep: abundances, attendance, then coefficients.
pub fn nmix_step<R: Rng + ?Sized>(
    state: &mut NmixState,
    data: &GroundDataset,
    priors: &NmixPriors,
    proposal: NProposal,
    adapting: bool,
    rng: &mut R,
) -> Result<()> {
    update_abundance(state, data, proposal, adapting, rng)?;
    update_attendance(state, data, rng)?;
    update_eta(state, data, priors, adapting, rng);
    state.iteration += 1;
    check_invariants(state, data)
}

/// 2 Σ N / S for dataset cell `cell` (equal sex ratio).
pub fn cell_density(state: &NmixState, data: &GroundDataset, cell: usize) -> f64 {
    let males: u64 = state.n[cell].iter().map(|&n| n as u64).sum();
    2.0 * males as f64 / data.cells[cell].area_km2
}

pub fn derive_density_ground(state: &NmixState, data: &GroundDataset, region: usize, year: usize) -> Result<f64> {
    let c = data
        .cell_index(region, year)
        .ok_or_else(|| MeldError::NoDraws(format!("ground region {region}, year {year} was not surveyed")))?;
    Ok(cell_density(state, data, c))
}

pub fn nmix_parameter_names(data: &GroundDataset) -> Vec<String> {
    let mut names = indexed_names("eta", data.p_eta());
    names.push("p".into());
    names
}

/// Run one ground chain.
pub fn run_nmix<R: Rng + ?Sized>(
    data: &GroundDataset,
    priors: &NmixPriors,
    proposal: NProposal,
    cfg: &Stage1Config,
    rng: &mut R,
) -> Result<Stage1Output> {
    cfg.validate()?;
    if data.cells.is_empty() {
        return Err(config("ground dataset has no surveyed site-years"));
    }
    let mut state = NmixState::initial(data);
    let mut reservoir = DensityReservoir::new(data.n_regions, data.n_years);
    for c in &data.cells {
        reservoir.add_cell(c.region, c.year);
    }
    let mut trace = Trace::new(nmix_parameter_names(data));
    for it in 0..cfg.iterations {
        let adapting = it < cfg.burn_in;
        nmix_step(&mut state, data, priors, proposal, adapting, rng)?;
        if adapting {
            if (it + 1) % cfg.adapt_batch == 0 {
                state.adapt(cfg.target_acceptance);
            }
            continue;
        }
        let kept = it - cfg.burn_in;
        if kept % cfg.reservoir_thin == 0 {
            for (c, cell) in data.cells.iter().enumerate() {
                reservoir.push(cell.region, cell.year, cell_density(&state, data, c));
            }
        }
        if kept % cfg.thin == 0 {
            let mut row = state.eta.clone();
            row.push(state.p);
            trace.push(it as u64, row);
        }
    }
    let mut acceptance: Vec<(String, f64)> = state
        .eta_tuners
        .iter()
        .enumerate()
        .map(|(j, t)| (format!("eta[{j}]"), t.acceptance_rate().unwrap_or(f64::NAN)))
        .collect();
    if proposal == NProposal::Walk {
        acceptance.push(("lek_abundance".into(), state.n_tuner.acceptance_rate().unwrap_or(f64::NAN)));
    }
    Ok(Stage1Output { reservoir, trace, acceptance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn one_lek(counts: Vec<u32>, w: Vec<f64>) -> GroundDataset {
        GroundDataset::new(
            1,
            1,
            vec![GroundCell { region: 0, year: 0, leks: vec![Lek { counts }], w, area_km2: 51.2 }],
        )
        .unwrap()
    }

    #[test]
    fn attendance_is_beta_seven_five() {
        let data = one_lek(vec![6], vec![1.0]);
        let mut st = NmixState::initial(&data);
        st.n[0][0] = 10;
        let mut rng = RngStream::new(8, 0);
        let n = 40_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                update_attendance(&mut st, &data, &mut rng).unwrap();
                st.p
            })
            .collect();
        // grid posterior ∝ p^6 (1-p)^4
        let grid: Vec<f64> = (1..4000).map(|k| k as f64 / 4000.0).collect();
        let w: Vec<f64> = grid.iter().map(|p| p.powi(6) * (1.0 - p).powi(4)).collect();
        let z: f64 = w.iter().sum();
        let gm = grid.iter().zip(&w).map(|(p, w)| p * w).sum::<f64>() / z;
        let gv = grid.iter().zip(&w).map(|(p, w)| (p - gm).powi(2) * w).sum::<f64>() / z;
        assert!((gm - 7.0 / 12.0).abs() < 1e-6);
        let m = draws.iter().sum::<f64>() / n as f64;
        assert!((m - gm).abs() < 3.0 * (gv / n as f64).sqrt());
    }

    #[test]
    fn zero_counts_and_small_mean_push_abundance_to_zero() {
        let data = one_lek(vec![0, 0, 0], vec![1.0]);
        let mut st = NmixState::initial(&data);
        st.eta = vec![-3.0];
        st.n[0][0] = 5;
        let mut rng = RngStream::new(9, 0);
        let mut zeros = 0;
        for _ in 0..5000 {
            update_abundance(&mut st, &data, NProposal::Walk, false, &mut rng).unwrap();
            zeros += (st.n[0][0] == 0) as u32;
        }
        assert!(zeros > 4500);
    }

    #[test]
    fn perfect_attendance_pins_abundance() {
        let data = one_lek(vec![7, 7, 7, 7, 7, 7], vec![1.0]);
        let mut st = NmixState::initial(&data);
        st.p = 1.0 - 1e-12;
        let mut rng = RngStream::new(10, 0);
        for _ in 0..1000 {
            update_abundance(&mut st, &data, NProposal::Prior, false, &mut rng).unwrap();
            update_abundance(&mut st, &data, NProposal::Walk, false, &mut rng).unwrap();
            assert_eq!(st.n[0][0], 7);
        }
    }

    #[test]
    fn density_arithmetic() {
        let data = GroundDataset::new(
            1,
            1,
            vec![GroundCell {
                region: 0,
                year: 0,
                leks: vec![Lek { counts: vec![1] }, Lek { counts: vec![1] }],
                w: vec![1.0],
                area_km2: 51.2,
            }],
        )
        .unwrap();
        let mut st = NmixState::initial(&data);
        st.n[0] = vec![10, 5];
        assert!((derive_density_ground(&st, &data, 0, 0).unwrap() - 30.0 / 51.2).abs() < 1e-15);
        st.n[0] = vec![20, 10];
        assert!((cell_density(&st, &data, 0) - 60.0 / 51.2).abs() < 1e-15);
        st.n[0] = vec![0, 0];
        assert_eq!(cell_density(&st, &data, 0), 0.0);
        assert!(derive_density_ground(&st, &data, 0, 1).is_err());
    }

    #[test]
    fn empty_dataset_is_config_error() {
        let data = GroundDataset::new(1, 1, vec![]).unwrap();
        let mut rng = RngStream::new(1, 0);
        let r = run_nmix(&data, &NmixPriors { eta_var: 100.0 }, NProposal::Walk, &Stage1Config::default(), &mut rng);
        assert!(matches!(r, Err(MeldError::Config(_))));
    }
}
