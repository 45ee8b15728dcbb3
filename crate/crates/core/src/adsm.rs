//! Aerial distance-sampling submodel: double-observer detections of groups
//! along transects, a super-population of `M` potential groups per surveyed
//! block-year, and a two-component zero-truncated Poisson for group size
//! (leks versus non-lek groups).

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::config::{Priors, Stage1Config};
use crate::error::{validation, MeldError, Result};
use crate::mcmc::{indexed_names, RwTuner, Trace};
use crate::reservoir::{DensityReservoir, Stage1Output};
use crate::stochastic::special::{gamma_ln_pdf, ln_logistic, ln_one_minus_logistic, logistic};
use crate::stochastic::ztp::ztp_ln_pmf_unchecked;
use crate::stochastic::{mvn_sample_canonical, sample_polya_gamma, sample_ztp};

/// Groups within this many metres of the transect are seen by one observer only.
pub const VISIBILITY_BOUNDARY_M: f64 = 7.0;

/// Number of observers to whom a group is visible.
pub fn visibility_b(d: f64, left: bool, z: bool) -> u8 {
    if !z {
        0
    } else if left && d > VISIBILITY_BOUNDARY_M {
        2
    } else {
        1
    }
}

/// Linear predictor of per-observer detection: (x_row, N, d)·β_ρ.
pub fn detection_logit(beta_rho: &[f64], x_row: &[f64], count: u32, d: f64) -> Result<f64> {
    if beta_rho.len() != x_row.len() + 2 {
        return Err(MeldError::Dimension(format!(
            "detection coefficients have {} entries, design row has {} (+2 for count and distance)",
            beta_rho.len(),
            x_row.len()
        )));
    }
    Ok(detection_logit_unchecked(beta_rho, x_row, count, d))
}

#[inline]
fn detection_logit_unchecked(beta_rho: &[f64], x_row: &[f64], count: u32, d: f64) -> f64 {
    let p = x_row.len();
    let mut eta = beta_rho[p] * count as f64 + beta_rho[p + 1] * d;
    for (b, x) in beta_rho[..p].iter().zip(x_row) {
        eta += b * x;
    }
    eta
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObservedGroup {
    /// Number of observers that detected the group (1 or 2).
    pub v: u8,
    /// Perpendicular distance from the transect, metres.
    pub d: f64,
    pub left: bool,
    pub count: u32,
}

/// One surveyed block-year.
#[derive(Clone, Debug, PartialEq)]
pub struct AerialCell {
    pub region: usize,
    pub year: usize,
    pub groups: Vec<ObservedGroup>,
    /// Ecoregion indicators for detection.
    pub x_rho: Vec<f64>,
    /// Covariate row shared by lek size and occupancy.
    pub x_lambda: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AerialDataset {
    pub n_regions: usize,
    pub n_years: usize,
    pub cells: Vec<AerialCell>,
    pub m_super: usize,
    pub nu_d: f64,
    pub area_km2: f64,
}

impl AerialDataset {
    pub fn new(
        n_regions: usize,
        n_years: usize,
        cells: Vec<AerialCell>,
        m_super: usize,
        nu_d: f64,
        area_km2: f64,
    ) -> Result<Self> {
        if !(nu_d > 0.0) || !(area_km2 > 0.0) || m_super == 0 {
            return Err(validation("aerial dataset needs positive M, detection distance and area"));
        }
        let mut seen = std::collections::HashSet::new();
        let (p_rho, p_lambda) = cells.first().map(|c| (c.x_rho.len(), c.x_lambda.len())).unwrap_or((0, 0));
        for c in &cells {
            if c.region >= n_regions || c.year >= n_years {
                return Err(validation(format!("aerial cell ({}, {}) outside the region/year range", c.region, c.year)));
            }
            if !seen.insert((c.region, c.year)) {
                return Err(validation(format!("aerial cell ({}, {}) listed twice", c.region, c.year)));
            }
            if c.x_rho.len() != p_rho || c.x_lambda.len() != p_lambda {
                return Err(MeldError::Dimension("aerial design rows differ in length".into()));
            }
            if c.groups.len() > m_super {
                return Err(validation(format!(
                    "aerial cell ({}, {}) has {} detected groups, more than M = {m_super}",
                    c.region,
                    c.year,
                    c.groups.len()
                )));
            }
            for g in &c.groups {
                if !(g.d >= 0.0 && g.d <= nu_d) {
                    return Err(validation(format!("detection distance {} outside [0, {nu_d}]", g.d)));
                }
                if g.count == 0 {
                    return Err(validation("detected group with zero individuals"));
                }
                let b = visibility_b(g.d, g.left, true);
                if g.v == 0 || g.v > b {
                    return Err(validation(format!(
                        "group at d = {} (left = {}) has v = {} but is visible to {b} observer(s)",
                        g.d, g.left, g.v
                    )));
                }
            }
        }
        Ok(AerialDataset { n_regions, n_years, cells, m_super, nu_d, area_km2 })
    }

    pub fn p_rho(&self) -> usize {
        self.cells.first().map_or(0, |c| c.x_rho.len())
    }

    pub fn p_lambda(&self) -> usize {
        self.cells.first().map_or(0, |c| c.x_lambda.len())
    }

    /// Smallest log lek rate x'β over surveyed cells.
    pub fn min_log_lek_rate(&self, beta_lambda: &[f64]) -> f64 {
        self.cells.iter().map(|c| dot(&c.x_lambda, beta_lambda)).fold(f64::INFINITY, f64::min)
    }

    pub fn cell_index(&self, region: usize, year: usize) -> Option<usize> {
        self.cells.iter().position(|c| c.region == region && c.year == year)
    }

    /// The super-population must leave room for undetected groups.
    pub fn check_m_margin(&self, margin: usize) -> Result<()> {
        let max_obs = self.cells.iter().map(|c| c.groups.len()).max().unwrap_or(0);
        if self.m_super < max_obs + margin {
            return Err(validation(format!(
                "M = {} is too small: a cell has {max_obs} detected groups and M must exceed that by at least {margin}",
                self.m_super
            )));
        }
        Ok(())
    }

    /// Remove every surveyed cell in the listed years.
    pub fn without_years(&self, years: &[usize]) -> AerialDataset {
        AerialDataset {
            cells: self.cells.iter().filter(|c| !years.contains(&c.year)).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Hyperparameters of the aerial submodel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdsmPriors {
    pub beta_rho_var: f64,
    pub beta_psi_var: f64,
    pub beta_lambda_var: f64,
    pub lambda0_shape: f64,
    pub lambda0_scale: f64,
}

impl From<&Priors> for AdsmPriors {
    fn from(p: &Priors) -> Self {
        AdsmPriors {
            beta_rho_var: p.beta_rho_var,
            beta_psi_var: p.beta_psi_var,
            beta_lambda_var: p.beta_lambda_var,
            lambda0_shape: p.lambda0_shape,
            lambda0_scale: p.lambda0_scale,
        }
    }
}

/// One super-population member.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slot {
    pub z: bool,
    pub omega: bool,
    pub n: u32,
    pub d: f64,
    pub left: bool,
    pub observed: bool,
    pub v: u8,
}

#[derive(Clone, Debug)]
pub struct AdsmTuners {
    pub beta_rho: Vec<RwTuner>,
    pub beta_lambda: Vec<RwTuner>,
    pub log_lambda0: RwTuner,
}

#[derive(Clone, Debug)]
pub struct AdsmState {
    pub beta_rho: Vec<f64>,
    pub beta_lambda: Vec<f64>,
    pub beta_psi: Vec<f64>,
    pub lambda0: f64,
    pub p_omega: f64,
    /// `M` slots per surveyed cell, cell-major; detected groups first.
    pub slots: Vec<Slot>,
    pub tuners: AdsmTuners,
    pub iteration: u64,
}

impl AdsmState {
    /// Coefficients at zero, λ₀ at its prior mean, detected groups members,
    /// augmented groups non-members with a single individual.
    pub fn initial<R: Rng + ?Sized>(data: &AerialDataset, priors: &AdsmPriors, rng: &mut R) -> Self {
        let m = data.m_super;
        let mut slots = Vec::with_capacity(data.cells.len() * m);
        for c in &data.cells {
            for g in &c.groups {
                slots.push(Slot { z: true, omega: g.count >= 3, n: g.count, d: g.d, left: g.left, observed: true, v: g.v });
            }
            for _ in c.groups.len()..m {
                slots.push(Slot {
                    z: false,
                    omega: false,
                    n: 1,
                    d: rng.random_range(0.0..data.nu_d),
                    left: rng.random::<bool>(),
                    observed: false,
                    v: 0,
                });
            }
        }
        let p_rho = data.p_rho();
        let mut rho_steps: Vec<RwTuner> = (0..p_rho).map(|_| RwTuner::new(0.2)).collect();
        rho_steps.push(RwTuner::new(0.02));
        rho_steps.push(RwTuner::new(0.2 / data.nu_d));
        AdsmState {
            beta_rho: vec![0.0; p_rho + 2],
            beta_lambda: vec![0.0; data.p_lambda()],
            beta_psi: vec![0.0; data.p_lambda()],
            // β_λ = 0 puts the lek rate at 1, so start λ₀ below it
            lambda0: (priors.lambda0_shape * priors.lambda0_scale).min(0.5),
            p_omega: 0.5,
            slots,
            tuners: AdsmTuners {
                beta_rho: rho_steps,
                beta_lambda: (0..data.p_lambda()).map(|_| RwTuner::new(0.1)).collect(),
                log_lambda0: RwTuner::new(0.3),
            },
            iteration: 0,
        }
    }

    pub fn cell_slots(&self, cell: usize, m: usize) -> &[Slot] {
        &self.slots[cell * m..(cell + 1) * m]
    }

    pub fn adapt(&mut self, target: f64) {
        for t in self.tuners.beta_rho.iter_mut().chain(self.tuners.beta_lambda.iter_mut()) {
            t.adapt(target);
        }
        self.tuners.log_lambda0.adapt(target);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// ln P(member group contributes no detections) for B observers.
#[inline]
fn ln_missed(eta: f64, b: u8) -> f64 {
    b as f64 * ln_one_minus_logistic(eta)
}

/// ZTP log-likelihood of `n` groups with total size `sum_n` at rate λ, without the factorials.
#[inline]
fn ztp_kernel(n: f64, sum_n: f64, lambda: f64) -> f64 {
    if n == 0.0 {
        return 0.0;
    }
    sum_n * lambda.ln() - n * (lambda + (-(-lambda).exp_m1()).ln())
}

/// Lek groups are the larger kind: in every surveyed cell the lek rate must
/// exceed the non-lek rate. The prior on (β_λ, λ₀) is truncated to this set,
/// which removes the label-swapped modes of the size mixture.
pub fn lek_order_holds(min_log_lek_rate: f64, lambda0: f64) -> bool {
    min_log_lek_rate > lambda0.ln()
}

/// P(ω = 1 | N) for a member group.
pub fn omega_prob(n: u32, lambda_cell: f64, lambda0: f64, p_omega: f64) -> f64 {
    let l1 = p_omega.ln() + ztp_ln_pmf_unchecked(n as u64, lambda_cell);
    let l0 = (1.0 - p_omega).ln() + ztp_ln_pmf_unchecked(n as u64, lambda0);
    logistic(l1 - l0)
}

/// Element-wise random-walk update of the lek-size coefficients, using member leks only.
pub fn update_beta_lambda<R: Rng + ?Sized>(
    state: &mut AdsmState,
    data: &AerialDataset,
    priors: &AdsmPriors,
    adapting: bool,
    rng: &mut R,
) {
    let m = data.m_super;
    let stats: Vec<(f64, f64)> = (0..data.cells.len())
        .map(|c| {
            state.cell_slots(c, m).iter().filter(|s| s.z && s.omega).fold((0.0, 0.0), |(n, sum), s| (n + 1.0, sum + s.n as f64))
        })
        .collect();
    let mut eta: Vec<f64> = data.cells.iter().map(|c| dot(&c.x_lambda, &state.beta_lambda)).collect();
    for j in 0..state.beta_lambda.len() {
        let step = state.tuners.beta_lambda[j].step;
        let delta = step * rng.sample::<f64, _>(StandardNormal);
        let old = state.beta_lambda[j];
        let new = old + delta;
        let lowest = data.cells.iter().zip(&eta).map(|(c, e)| e + delta * c.x_lambda[j]).fold(f64::INFINITY, f64::min);
        if !lek_order_holds(lowest, state.lambda0) {
            state.tuners.beta_lambda[j].record(false, adapting);
            continue;
        }
        let mut diff = (old * old - new * new) / (2.0 * priors.beta_lambda_var);
        for (c, cell) in data.cells.iter().enumerate() {
            let (n, sum) = stats[c];
            if n == 0.0 || cell.x_lambda[j] == 0.0 {
                continue;
            }
            let e_new = eta[c] + delta * cell.x_lambda[j];
            diff += ztp_kernel(n, sum, e_new.exp()) - ztp_kernel(n, sum, eta[c].exp());
        }
        let accept = rng.random::<f64>().ln() < diff;
        if accept {
            state.beta_lambda[j] = new;
            for (c, cell) in data.cells.iter().enumerate() {
                eta[c] += delta * cell.x_lambda[j];
            }
        }
        state.tuners.beta_lambda[j].record(accept, adapting);
    }
}

/// Element-wise random-walk update of the detection coefficients over member groups.
pub fn update_beta_rho<R: Rng + ?Sized>(
    state: &mut AdsmState,
    data: &AerialDataset,
    priors: &AdsmPriors,
    adapting: bool,
    rng: &mut R,
) {
    let m = data.m_super;
    let p = data.p_rho();
    // (cell, slot) of member groups with their visibility and detections
    let mut members: Vec<(usize, u32, f64, u8, u8)> = Vec::new();
    for c in 0..data.cells.len() {
        for s in state.cell_slots(c, m) {
            if s.z {
                members.push((c, s.n, s.d, s.v, visibility_b(s.d, s.left, true)));
            }
        }
    }
    let mut eta: Vec<f64> = members
        .iter()
        .map(|&(c, n, d, _, _)| detection_logit_unchecked(&state.beta_rho, &data.cells[c].x_rho, n, d))
        .collect();
    let ll = |e: f64, v: u8, b: u8| v as f64 * ln_logistic(e) + (b - v) as f64 * ln_one_minus_logistic(e);
    for j in 0..p + 2 {
        let delta = state.tuners.beta_rho[j].step * rng.sample::<f64, _>(StandardNormal);
        let old = state.beta_rho[j];
        let new = old + delta;
        let mut diff = (old * old - new * new) / (2.0 * priors.beta_rho_var);
        let col = |k: usize| -> f64 {
            let (c, n, d, _, _) = members[k];
            if j < p {
                data.cells[c].x_rho[j]
            } else if j == p {
                n as f64
            } else {
                d
            }
        };
        for (k, &(_, _, _, v, b)) in members.iter().enumerate() {
            let x = col(k);
            if x != 0.0 {
                diff += ll(eta[k] + delta * x, v, b) - ll(eta[k], v, b);
            }
        }
        let accept = rng.random::<f64>().ln() < diff;
        if accept {
            state.beta_rho[j] = new;
            for k in 0..members.len() {
                eta[k] += delta * col(k);
            }
        }
        state.tuners.beta_rho[j].record(accept, adapting);
    }
}

/// Pólya-Gamma Gibbs draw of the occupancy coefficients. Slots of one cell
/// share a design row, so the augmentation is done per cell with PG(M, ·).
pub fn update_beta_psi<R: Rng + ?Sized>(
    state: &mut AdsmState,
    data: &AerialDataset,
    priors: &AdsmPriors,
    rng: &mut R,
) -> Result<()> {
    let q = state.beta_psi.len();
    if q == 0 {
        return Ok(());
    }
    let m = data.m_super;
    let mut precision = nalgebra::DMatrix::<f64>::identity(q, q) / priors.beta_psi_var;
    let mut linear = nalgebra::DVector::<f64>::zeros(q);
    for (c, cell) in data.cells.iter().enumerate() {
        let members = state.cell_slots(c, m).iter().filter(|s| s.z).count() as f64;
        let psi_eta = dot(&cell.x_lambda, &state.beta_psi);
        let w = sample_polya_gamma(m as u32, psi_eta, rng)?;
        let kappa = members - 0.5 * m as f64;
        for a in 0..q {
            let xa = cell.x_lambda[a];
            if xa == 0.0 {
                continue;
            }
            linear[a] += xa * kappa;
            for b in 0..q {
                precision[(a, b)] += w * xa * cell.x_lambda[b];
            }
        }
    }
    let draw = mvn_sample_canonical(&precision, &linear, rng)?;
    state.beta_psi.copy_from_slice(draw.as_slice());
    Ok(())
}

/// Prior-proposal update of undetected groups' size, distance and side,
/// followed by a Gibbs draw of their membership.
pub fn update_groups<R: Rng + ?Sized>(state: &mut AdsmState, data: &AerialDataset, rng: &mut R) -> Result<()> {
    let m = data.m_super;
    let nu = data.nu_d;
    for (c, cell) in data.cells.iter().enumerate() {
        let lambda_c = dot(&cell.x_lambda, &state.beta_lambda).exp();
        let psi_eta = dot(&cell.x_lambda, &state.beta_psi);
        let ln_psi = ln_logistic(psi_eta);
        let ln_not_psi = ln_one_minus_logistic(psi_eta);
        for k in c * m..(c + 1) * m {
            let mut s = state.slots[k];
            if s.observed {
                continue;
            }
            if !s.z {
                // non-members contribute no likelihood: the prior proposal is always accepted
                s.omega = rng.random::<f64>() < state.p_omega;
                s.n = sample_ztp(if s.omega { lambda_c } else { state.lambda0 }, rng)? as u32;
                s.d = rng.random_range(0.0..nu);
                s.left = rng.random::<bool>();
            } else {
                let n_new = sample_ztp(if s.omega { lambda_c } else { state.lambda0 }, rng)? as u32;
                let d_new = rng.random_range(0.0..nu);
                let left_new = rng.random::<bool>();
                let cur = ln_missed(
                    detection_logit_unchecked(&state.beta_rho, &cell.x_rho, s.n, s.d),
                    visibility_b(s.d, s.left, true),
                );
                let prop = ln_missed(
                    detection_logit_unchecked(&state.beta_rho, &cell.x_rho, n_new, d_new),
                    visibility_b(d_new, left_new, true),
                );
                if rng.random::<f64>().ln() < prop - cur {
                    s.n = n_new;
                    s.d = d_new;
                    s.left = left_new;
                }
            }
            let miss = ln_missed(
                detection_logit_unchecked(&state.beta_rho, &cell.x_rho, s.n, s.d),
                visibility_b(s.d, s.left, true),
            );
            let p1 = logistic(ln_psi + miss - ln_not_psi);
            s.z = rng.random::<f64>() < p1;
            state.slots[k] = s;
        }
    }
    Ok(())
}

/// Gibbs draws of the lek indicators of member groups, then of the lek proportion.
pub fn update_omega<R: Rng + ?Sized>(state: &mut AdsmState, data: &AerialDataset, rng: &mut R) -> Result<()> {
    let m = data.m_super;
    for (c, cell) in data.cells.iter().enumerate() {
        let lambda_c = dot(&cell.x_lambda, &state.beta_lambda).exp();
        for k in c * m..(c + 1) * m {
            let s = &mut state.slots[k];
            if s.z {
                s.omega = rng.random::<f64>() < omega_prob(s.n, lambda_c, state.lambda0, state.p_omega);
            }
        }
    }
    sample_p_omega(state, rng)
}

/// Beta(1 + leks, 1 + non-leks) draw over member groups (uniform prior).
pub fn sample_p_omega<R: Rng + ?Sized>(state: &mut AdsmState, rng: &mut R) -> Result<()> {
    let (leks, others) = state
        .slots
        .iter()
        .filter(|s| s.z)
        .fold((0.0, 0.0), |(l, o), s| if s.omega { (l + 1.0, o) } else { (l, o + 1.0) });
    let beta = Beta::<f64>::new(1.0 + leks, 1.0 + others).map_err(|e| MeldError::Numerical(e.to_string()))?;
    state.p_omega = beta.sample(rng).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    Ok(())
}

/// Random walk on log λ₀ against its Gamma prior, truncated by the lek ordering.
pub fn update_lambda0<R: Rng + ?Sized>(
    state: &mut AdsmState,
    data: &AerialDataset,
    priors: &AdsmPriors,
    adapting: bool,
    rng: &mut R,
) {
    let (n, sum) = state
        .slots
        .iter()
        .filter(|s| s.z && !s.omega)
        .fold((0.0, 0.0), |(n, sum), s| (n + 1.0, sum + s.n as f64));
    let target = |l: f64| ztp_kernel(n, sum, l) + gamma_ln_pdf(l, priors.lambda0_shape, priors.lambda0_scale) + l.ln();
    let cur = state.lambda0;
    let prop = (cur.ln() + state.tuners.log_lambda0.step * rng.sample::<f64, _>(StandardNormal)).exp();
    let lowest = data.min_log_lek_rate(&state.beta_lambda);
    let accept = prop > 0.0
        && prop.is_finite()
        && lek_order_holds(lowest, prop)
        && rng.random::<f64>().ln() < target(prop) - target(cur);
    if accept {
        state.lambda0 = prop;
    }
    state.tuners.log_lambda0.record(accept, adapting);
}

fn check_invariants(state: &AdsmState, data: &AerialDataset) -> Result<()> {
    for s in &state.slots {
        if s.observed && !s.z {
            return Err(MeldError::Internal("a detected group lost membership".into()));
        }
        if s.z && s.n == 0 {
            return Err(MeldError::Internal("a member group has no individuals".into()));
        }
        if !s.observed && !(s.d >= 0.0 && s.d <= data.nu_d) {
            return Err(MeldError::Internal(format!("augmented distance {} outside the strip", s.d)));
        }
    }
    if !(state.p_omega > 0.0 && state.p_omega < 1.0) {
        return Err(MeldError::Internal(format!("lek proportion {} left (0, 1)", state.p_omega)));
    }
    if !(state.lambda0 > 0.0) || state.beta_lambda.iter().chain(&state.beta_rho).chain(&state.beta_psi).any(|b| !b.is_finite()) {
        return Err(MeldError::Internal("non-finite aerial parameter".into()));
    }
    if !lek_order_holds(data.min_log_lek_rate(&state.beta_lambda), state.lambda0) {
        return Err(MeldError::Internal("lek and non-lek size rates swapped order".into()));
    }
    Ok(())
}

/// One full sweep over all aerial unknowns.
pub fn adsm_step<R: Rng + ?Sized>(
    state: &mut AdsmState,
    data: &AerialDataset,
    priors: &AdsmPriors,
    adapting: bool,
    rng: &mut R,
) -> Result<()> {
    update_beta_lambda(state, data, priors, adapting, rng);
    update_beta_rho(state, data, priors, adapting, rng);
    update_beta_psi(state, data, priors, rng)?;
    update_groups(state, data, rng)?;
    update_omega(state, data, rng)?;
    update_lambda0(state, data, priors, adapting, rng);
    state.iteration += 1;
    check_invariants(state, data)
}

/// Individuals per km² in dataset cell `cell`: Σ z N / S.
pub fn cell_density(state: &AdsmState, data: &AerialDataset, cell: usize) -> f64 {
    let total: u64 = state.cell_slots(cell, data.m_super).iter().filter(|s| s.z).map(|s| s.n as u64).sum();
    total as f64 / data.area_km2
}

pub fn derive_density_aerial(state: &AdsmState, data: &AerialDataset, region: usize, year: usize) -> Result<f64> {
    let c = data
        .cell_index(region, year)
        .ok_or_else(|| MeldError::NoDraws(format!("aerial region {region}, year {year} was not surveyed")))?;
    Ok(cell_density(state, data, c))
}

pub fn adsm_parameter_names(data: &AerialDataset) -> Vec<String> {
    let mut names = indexed_names("beta_rho", data.p_rho() + 2);
    names.extend(indexed_names("beta_lambda", data.p_lambda()));
    names.extend(indexed_names("beta_psi", data.p_lambda()));
    names.push("lambda0".into());
    names.push("p_omega".into());
    names
}

fn parameter_row(state: &AdsmState) -> Vec<f64> {
    let mut row = state.beta_rho.clone();
    row.extend(&state.beta_lambda);
    row.extend(&state.beta_psi);
    row.push(state.lambda0);
    row.push(state.p_omega);
    row
}

/// Run one aerial chain: adapt during burn-in, then keep density and parameter draws.
pub fn run_adsm<R: Rng + ?Sized>(
    data: &AerialDataset,
    priors: &AdsmPriors,
    cfg: &Stage1Config,
    rng: &mut R,
) -> Result<Stage1Output> {
    cfg.validate()?;
    let mut state = AdsmState::initial(data, priors, rng);
    let mut reservoir = DensityReservoir::new(data.n_regions, data.n_years);
    for c in &data.cells {
        reservoir.add_cell(c.region, c.year);
    }
    let mut trace = Trace::new(adsm_parameter_names(data));
    for it in 0..cfg.iterations {
        let adapting = it < cfg.burn_in;
        adsm_step(&mut state, data, priors, adapting, rng)?;
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
            trace.push(it as u64, parameter_row(&state));
        }
    }
    let mut acceptance = Vec::new();
    for (j, t) in state.tuners.beta_rho.iter().enumerate() {
        acceptance.push((format!("beta_rho[{j}]"), t.acceptance_rate().unwrap_or(f64::NAN)));
    }
    for (j, t) in state.tuners.beta_lambda.iter().enumerate() {
        acceptance.push((format!("beta_lambda[{j}]"), t.acceptance_rate().unwrap_or(f64::NAN)));
    }
    acceptance.push(("lambda0".into(), state.tuners.log_lambda0.acceptance_rate().unwrap_or(f64::NAN)));
    Ok(Stage1Output { reservoir, trace, acceptance })
}
