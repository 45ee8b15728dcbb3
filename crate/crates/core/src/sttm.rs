//! Stage-2 joint model: a censored (tobit) spatio-temporal response over all
//! regions and years, driven by a first-order dynamic latent field, with the
//! observed densities drawn from the stage-1 reservoirs inside the sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::config::{InverseGammaPrior, PhiProposal, Priors, Stage2Config, TauStructure};
use crate::error::{config, MeldError, Result};
use crate::geometry::{icar_precision, Adjacency, PhiGrid};
use crate::mcmc::{indexed_names, Trace};
use crate::reservoir::ReservoirHandle;
use crate::stochastic::special::{ln_std_normal_cdf, normal_ln_pdf};
use crate::stochastic::{conditional_from_precision, mvn_sample_canonical, sample_truncated_normal};

/// Ridge added to the 2×2 autoregression system when the design is collinear.
const ALPHA_RIDGE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct SttmPriors {
    pub gamma_var: f64,
    pub sigma2_d: InverseGammaPrior,
    pub sigma2_tau_aerial: InverseGammaPrior,
    pub sigma2_tau_ground: InverseGammaPrior,
}

impl From<&Priors> for SttmPriors {
    fn from(p: &Priors) -> Self {
        SttmPriors {
            gamma_var: p.gamma_var,
            sigma2_d: p.sigma2_d,
            sigma2_tau_aerial: p.sigma2_tau_aerial,
            sigma2_tau_ground: p.sigma2_tau_ground,
        }
    }
}

/// Fixed inputs of the stage-2 sampler. Cells are numbered `t * n + i`.
#[derive(Clone, Debug)]
pub struct SttmModel<'a> {
    pub grid: &'a PhiGrid,
    /// Initial-state design, one row per region.
    pub x0: &'a DMatrix<f64>,
    /// Drought index entering year `t` is column `t` (the previous calendar year).
    pub w_lag: &'a DMatrix<f64>,
    pub n_aerial: usize,
    pub priors: SttmPriors,
    aerial_structure: DMatrix<f64>,
    aerial_rank: usize,
    observed: Vec<Option<&'a [f64]>>,
}

/// Per-cell reservoir slices in `t * n + i` order.
pub fn observed_cells(reservoirs: &ReservoirHandle, n_regions: usize, n_years: usize) -> Vec<Option<&[f64]>> {
    let mut out = Vec::with_capacity(n_regions * n_years);
    for t in 0..n_years {
        for i in 0..n_regions {
            out.push(reservoirs.draws(i, t));
        }
    }
    out
}

impl<'a> SttmModel<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &'a PhiGrid,
        x0: &'a DMatrix<f64>,
        w_lag: &'a DMatrix<f64>,
        n_aerial: usize,
        tau_structure: TauStructure,
        adjacency: &Adjacency,
        priors: SttmPriors,
        observed: Vec<Option<&'a [f64]>>,
    ) -> Result<Self> {
        if grid.is_empty() {
            return Err(config("range grid is empty"));
        }
        let n = grid.entry(0).precision.nrows();
        let n_years = w_lag.ncols();
        if x0.nrows() != n || w_lag.nrows() != n {
            return Err(MeldError::Dimension(format!(
                "designs have {} and {} rows for {n} regions",
                x0.nrows(),
                w_lag.nrows()
            )));
        }
        if n_aerial > n || adjacency.len() != n_aerial {
            return Err(MeldError::Dimension(format!(
                "{n_aerial} aerial blocks, adjacency over {}, {n} regions",
                adjacency.len()
            )));
        }
        if n_years == 0 {
            return Err(config("stage 2 needs at least one year"));
        }
        if observed.len() != n * n_years {
            return Err(MeldError::Dimension(format!("{} observation slots for {} cells", observed.len(), n * n_years)));
        }
        if let Some(k) = observed.iter().position(|o| matches!(o, Some(d) if d.is_empty())) {
            return Err(config(format!("reservoir for region {}, year {} is empty", k % n, k / n)));
        }
        if !observed.iter().any(Option::is_some) {
            return Err(config("no surveyed cells to fit"));
        }
        let (aerial_structure, aerial_rank) = match tau_structure {
            TauStructure::Icar => {
                let q = icar_precision(adjacency)?;
                (q, n_aerial.saturating_sub(1))
            }
            TauStructure::Diagonal => (DMatrix::identity(n_aerial, n_aerial), n_aerial),
        };
        Ok(SttmModel { grid, x0, w_lag, n_aerial, priors, aerial_structure, aerial_rank, observed })
    }

    pub fn n_regions(&self) -> usize {
        self.x0.nrows()
    }

    pub fn n_ground(&self) -> usize {
        self.n_regions() - self.n_aerial
    }

    pub fn n_years(&self) -> usize {
        self.w_lag.ncols()
    }

    pub fn q(&self) -> usize {
        self.x0.ncols()
    }

    pub fn observed(&self, region: usize, year: usize) -> Option<&'a [f64]> {
        self.observed[year * self.n_regions() + region]
    }

    /// Innovation precision Λ applied to a vector.
    pub fn apply_innovation(&self, v: &DVector<f64>, sigma2_aerial: f64, sigma2_ground: f64) -> DVector<f64> {
        let na = self.n_aerial;
        let mut out = DVector::zeros(v.len());
        if na > 0 {
            let head = &self.aerial_structure * v.rows(0, na) / sigma2_aerial;
            out.rows_mut(0, na).copy_from(&head);
        }
        for i in na..v.len() {
            out[i] = v[i] / sigma2_ground;
        }
        out
    }

    /// Dense innovation precision Λ.
    pub fn innovation_matrix(&self, sigma2_aerial: f64, sigma2_ground: f64) -> DMatrix<f64> {
        let n = self.n_regions();
        let na = self.n_aerial;
        let mut m = DMatrix::zeros(n, n);
        if na > 0 {
            m.view_mut((0, 0), (na, na)).copy_from(&(&self.aerial_structure / sigma2_aerial));
        }
        for i in na..n {
            m[(i, i)] = 1.0 / sigma2_ground;
        }
        m
    }

    /// Structure quadratic forms (aerial, ground) of an innovation vector.
    fn innovation_quad(&self, e: &DVector<f64>) -> (f64, f64) {
        let na = self.n_aerial;
        let head = e.rows(0, na);
        let aerial = if na > 0 { head.dot(&(&self.aerial_structure * head)) } else { 0.0 };
        let ground = e.rows(na, e.len() - na).norm_squared();
        (aerial, ground)
    }
}

/// Current values of every stage-2 unknown. Matrices are regions × years.
#[derive(Clone, Debug, PartialEq)]
pub struct SttmState {
    pub zeta: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Which reservoir draw each surveyed cell currently holds.
    pub y_index: Vec<Option<usize>>,
    pub gamma: DVector<f64>,
    pub alpha: [f64; 2],
    pub sigma2_d: f64,
    pub sigma2_tau_aerial: f64,
    pub sigma2_tau_ground: f64,
    pub phi_index: usize,
}

impl SttmState {
    /// Dispersed start: random reservoir picks, latent field at yearly means
    /// plus noise, random autoregression and range.
    pub fn initial<R: Rng + ?Sized>(model: &SttmModel, rng: &mut R) -> Self {
        let n = model.n_regions();
        let n_years = model.n_years();
        let mut y = DMatrix::zeros(n, n_years);
        let mut zeta = DMatrix::zeros(n, n_years);
        let mut y_index = vec![None; n * n_years];
        let mut all = Vec::new();
        for t in 0..n_years {
            let mut year_vals = Vec::new();
            for i in 0..n {
                if let Some(d) = model.observed(i, t) {
                    let k = rng.random_range(0..d.len());
                    y_index[t * n + i] = Some(k);
                    y[(i, t)] = d[k];
                    zeta[(i, t)] = if d[k] > 0.0 { d[k] } else { -0.05 * rng.random::<f64>() - 1e-6 };
                    year_vals.push(zeta[(i, t)]);
                }
            }
            let fill = if year_vals.is_empty() { 0.1 } else { year_vals.iter().sum::<f64>() / year_vals.len() as f64 };
            for i in 0..n {
                if model.observed(i, t).is_none() {
                    zeta[(i, t)] = fill;
                    y[(i, t)] = fill.max(0.0);
                }
            }
            all.extend(year_vals);
        }
        let mean = all.iter().sum::<f64>() / all.len().max(1) as f64;
        let var = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len().max(1) as f64).max(1e-3);
        let mut xi = DMatrix::zeros(n, n_years);
        for t in 0..n_years {
            let col_mean = zeta.column(t).mean();
            for i in 0..n {
                xi[(i, t)] = col_mean + 0.5 * var.sqrt() * (rng.random::<f64>() - 0.5);
            }
        }
        SttmState {
            zeta,
            xi,
            y,
            y_index,
            gamma: DVector::zeros(model.q()),
            alpha: [rng.random_range(0.3..0.9), rng.random_range(-0.1..0.1)],
            sigma2_d: var * rng.random_range(0.2..1.0),
            sigma2_tau_aerial: var * rng.random_range(0.2..1.0),
            sigma2_tau_ground: var * rng.random_range(0.2..1.0),
            phi_index: rng.random_range(0..model.grid.len()),
        }
    }

    pub fn phi(&self, model: &SttmModel) -> f64 {
        model.grid.entry(self.phi_index).phi
    }
}

fn column(m: &DMatrix<f64>, t: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[t * n..(t + 1) * n]
}

fn column_vec(m: &DMatrix<f64>, t: usize) -> DVector<f64> {
    DVector::from_column_slice(column(m, t))
}

/// Mean of ξ_t before the innovation: α₀ ξ_{t−1} + α₁ W_t, with ξ_{−1} = X₀γ.
pub fn forward_mean(model: &SttmModel, state: &SttmState, t: usize) -> DVector<f64> {
    let prev = previous_state(model, state, t);
    prev * state.alpha[0] + column_vec(model.w_lag, t) * state.alpha[1]
}

fn previous_state(model: &SttmModel, state: &SttmState, t: usize) -> DVector<f64> {
    if t == 0 {
        model.x0 * &state.gamma
    } else {
        column_vec(&state.xi, t - 1)
    }
}

/// Conditional mean and variance of ζ_it given the rest of year t.
pub fn zeta_conditional(model: &SttmModel, state: &SttmState, region: usize, year: usize) -> (f64, f64) {
    let precision = &model.grid.entry(state.phi_index).precision;
    let (mu, unit_var) = conditional_from_precision(precision, column(&state.xi, year), column(&state.zeta, year), region);
    (mu, unit_var * state.sigma2_d)
}

/// Log target of a candidate observed density under the censored response:
/// the mass below zero for a zero, the normal density otherwise.
pub fn meld_log_target(y: f64, mean: f64, var: f64) -> f64 {
    if y <= 0.0 {
        ln_std_normal_cdf(-mean / var.sqrt())
    } else {
        normal_ln_pdf(y, mean, var)
    }
}

/// Metropolis log-ratio for replacing the current density of a cell with
/// `candidate`, the proposal being a uniform reservoir pick.
pub fn meld_log_ratio(model: &SttmModel, state: &SttmState, region: usize, year: usize, candidate: f64) -> f64 {
    let (mu, var) = zeta_conditional(model, state, region, year);
    meld_log_target(candidate, mu, var) - meld_log_target(state.y[(region, year)], mu, var)
}

/// Try to swap the density at one surveyed cell for another reservoir draw.
pub fn meld_update_cell<R: Rng + ?Sized>(
    model: &SttmModel,
    state: &mut SttmState,
    region: usize,
    year: usize,
    rng: &mut R,
) -> Result<bool> {
    let draws = model
        .observed(region, year)
        .ok_or_else(|| MeldError::Internal(format!("cell ({region}, {year}) has no reservoir")))?;
    let k = rng.random_range(0..draws.len());
    let candidate = draws[k];
    let (mu, var) = zeta_conditional(model, state, region, year);
    let ratio = meld_log_target(candidate, mu, var) - meld_log_target(state.y[(region, year)], mu, var);
    if rng.random::<f64>().ln() >= ratio {
        return Ok(false);
    }
    let n = model.n_regions();
    state.y[(region, year)] = candidate;
    state.y_index[year * n + region] = Some(k);
    state.zeta[(region, year)] =
        if candidate > 0.0 { candidate } else { sample_truncated_normal(mu, var, f64::NEG_INFINITY, 0.0, rng)? };
    Ok(true)
}

/// Gibbs refresh of every latent response not pinned by a positive density:
/// censored at zero for surveyed zeros, free (and re-censored) when unsurveyed.
pub fn gibbs_zeta_latent<R: Rng + ?Sized>(model: &SttmModel, state: &mut SttmState, rng: &mut R) -> Result<()> {
    for t in 0..model.n_years() {
        for i in 0..model.n_regions() {
            let surveyed = model.observed(i, t).is_some();
            if surveyed && state.y[(i, t)] > 0.0 {
                continue;
            }
            let (mu, var) = zeta_conditional(model, state, i, t);
            if surveyed {
                state.zeta[(i, t)] = sample_truncated_normal(mu, var, f64::NEG_INFINITY, 0.0, rng)?;
            } else {
                let z = mu + var.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
                state.zeta[(i, t)] = z;
                state.y[(i, t)] = z.max(0.0);
            }
        }
    }
    Ok(())
}

/// Precision and linear term of the Gaussian full conditional of ξ_t.
pub fn xi_full_conditional(model: &SttmModel, state: &SttmState, t: usize) -> (DMatrix<f64>, DVector<f64>) {
    let rinv = &model.grid.entry(state.phi_index).precision;
    let lambda = model.innovation_matrix(state.sigma2_tau_aerial, state.sigma2_tau_ground);
    let last = t + 1 == model.n_years();
    let a0 = state.alpha[0];
    let mut precision = rinv / state.sigma2_d + &lambda;
    let mut linear = rinv * column_vec(&state.zeta, t) / state.sigma2_d + &lambda * forward_mean(model, state, t);
    if !last {
        precision += &lambda * (a0 * a0);
        let ahead = column_vec(&state.xi, t + 1) - column_vec(model.w_lag, t + 1) * state.alpha[1];
        linear += &lambda * ahead * a0;
    }
    (precision, linear)
}

pub fn gibbs_xi<R: Rng + ?Sized>(model: &SttmModel, state: &mut SttmState, rng: &mut R) -> Result<()> {
    for t in 0..model.n_years() {
        let (precision, linear) = xi_full_conditional(model, state, t);
        let draw = mvn_sample_canonical(&precision, &linear, rng).map_err(numerical("latent field"))?;
        state.xi.set_column(t, &draw);
    }
    Ok(())
}

fn numerical(what: &'static str) -> impl Fn(MeldError) -> MeldError {
    move |e| match e {
        MeldError::NotPositiveDefinite { pivot, value } => {
            MeldError::Numerical(format!("{what} precision not positive definite at pivot {pivot} ({value:e})"))
        }
        other => other,
    }
}

/// Conjugate draw of the initial-state coefficients.
pub fn gibbs_gamma<R: Rng + ?Sized>(model: &SttmModel, state: &mut SttmState, rng: &mut R) -> Result<()> {
    let q = model.q();
    if q == 0 {
        return Ok(());
    }
    let a0 = state.alpha[0];
    let lambda = model.innovation_matrix(state.sigma2_tau_aerial, state.sigma2_tau_ground);
    let lx = &lambda * model.x0;
    let mut precision = model.x0.transpose() * &lx * (a0 * a0);
    for k in 0..q {
        precision[(k, k)] += 1.0 / model.priors.gamma_var;
    }
    let target = column_vec(&state.xi, 0) - column_vec(model.w_lag, 0) * state.alpha[1];
    let linear = lx.transpose() * target * a0;
    state.gamma = mvn_sample_canonical(&precision, &linear, rng).map_err(numerical("initial-state"))?;
    Ok(())
}

/// Autoregression coefficients, one at a time, each a normal truncated to (−1, 1).
pub fn gibbs_alpha<R: Rng + ?Sized>(model: &SttmModel, state: &mut SttmState, rng: &mut R) -> Result<()> {
    let mut h = [[0.0; 2]; 2];
    let mut b = [0.0; 2];
    for t in 0..model.n_years() {
        let u0 = previous_state(model, state, t);
        let u1 = column_vec(model.w_lag, t);
        let target = column_vec(&state.xi, t);
        let l0 = model.apply_innovation(&u0, state.sigma2_tau_aerial, state.sigma2_tau_ground);
        let l1 = model.apply_innovation(&u1, state.sigma2_tau_aerial, state.sigma2_tau_ground);
        h[0][0] += u0.dot(&l0);
        h[0][1] += u1.dot(&l0);
        h[1][1] += u1.dot(&l1);
        b[0] += target.dot(&l0);
        b[1] += target.dot(&l1);
    }
    h[1][0] = h[0][1];
    for j in 0..2 {
        if h[j][j] < ALPHA_RIDGE {
            log::warn!("autoregression design for alpha[{j}] is near-singular; adding ridge");
        }
        let other = 1 - j;
        let prec = h[j][j] + ALPHA_RIDGE;
        let mean = (b[j] - h[j][other] * state.alpha[other]) / prec;
        state.alpha[j] = sample_truncated_normal(mean, 1.0 / prec, -1.0, 1.0, rng)?;
    }
    Ok(())
}

fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate).map_err(|e| MeldError::Numerical(format!("Gamma({shape}, 1/{rate}): {e}")))?;
    for _ in 0..100 {
        let x = 1.0 / g.sample(rng);
        if x.is_finite() && x > 0.0 {
            return Ok(x);
        }
    }
    Err(MeldError::Numerical(format!("inverse-gamma draw with shape {shape}, rate {rate} overflowed")))
}

/// Σ_t (ζ_t − ξ_t)' R⁻¹ (ζ_t − ξ_t) at support point `phi_index`.
pub fn response_quad(model: &SttmModel, state: &SttmState, phi_index: usize) -> f64 {
    let rinv = &model.grid.entry(phi_index).precision;
    (0..model.n_years())
        .map(|t| {
            let r = column_vec(&state.zeta, t) - column_vec(&state.xi, t);
            r.dot(&(rinv * &r))
        })
        .sum()
}

/// Conjugate inverse-gamma draws of the three variances. A component with no
/// regions keeps its value.
pub fn gibbs_variances<R: Rng + ?Sized>(model: &SttmModel, state: &mut SttmState, rng: &mut R) -> Result<()> {
    let n_years = model.n_years() as f64;
    let ss_d = response_quad(model, state, state.phi_index);
    let pd = &model.priors.sigma2_d;
    state.sigma2_d =
        sample_inverse_gamma(pd.shape + 0.5 * model.n_regions() as f64 * n_years, pd.rate() + 0.5 * ss_d, rng)?;

    let (mut ss_a, mut ss_g) = (0.0, 0.0);
    for t in 0..model.n_years() {
        let e = column_vec(&state.xi, t) - forward_mean(model, state, t);
        let (a, g) = model.innovation_quad(&e);
        ss_a += a;
        ss_g += g;
    }
    if model.aerial_rank > 0 {
        let pa = &model.priors.sigma2_tau_aerial;
        state.sigma2_tau_aerial =
            sample_inverse_gamma(pa.shape + 0.5 * model.aerial_rank as f64 * n_years, pa.rate() + 0.5 * ss_a, rng)?;
    }
    if model.n_ground() > 0 {
        let pg = &model.priors.sigma2_tau_ground;
        state.sigma2_tau_ground =
            sample_inverse_gamma(pg.shape + 0.5 * model.n_ground() as f64 * n_years, pg.rate() + 0.5 * ss_g, rng)?;
    }
    Ok(())
}

/// Log-likelihood of the latent responses as a function of the range index.
pub fn range_log_lik(model: &SttmModel, state: &SttmState, phi_index: usize) -> f64 {
    let entry = model.grid.entry(phi_index);
    -0.5 * model.n_years() as f64 * entry.ln_det - 0.5 * response_quad(model, state, phi_index) / state.sigma2_d
}

/// Metropolis step on the range over its discrete support.
pub fn mh_phi<R: Rng + ?Sized>(model: &SttmModel, state: &mut SttmState, proposal: PhiProposal, rng: &mut R) -> bool {
    let k = model.grid.len();
    if k < 2 {
        return false;
    }
    let candidate = match proposal {
        PhiProposal::Uniform => rng.random_range(0..k),
        PhiProposal::Neighbour => {
            let up = rng.random::<bool>();
            match (up, state.phi_index) {
                (false, 0) => return false,
                (true, i) if i + 1 == k => return false,
                (true, i) => i + 1,
                (false, i) => i - 1,
            }
        }
    };
    if candidate == state.phi_index {
        return true;
    }
    let ratio = range_log_lik(model, state, candidate) - range_log_lik(model, state, state.phi_index);
    if rng.random::<f64>().ln() < ratio {
        state.phi_index = candidate;
        true
    } else {
        false
    }
}

/// Accept counts of the Metropolis steps in one or more sweeps.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SweepStats {
    pub meld_aerial: (u64, u64),
    pub meld_ground: (u64, u64),
    pub phi: (u64, u64),
}

impl SweepStats {
    pub fn add(&mut self, other: &SweepStats) {
        for (a, b) in [
            (&mut self.meld_aerial, other.meld_aerial),
            (&mut self.meld_ground, other.meld_ground),
            (&mut self.phi, other.phi),
        ] {
            a.0 += b.0;
            a.1 += b.1;
        }
    }
}

fn rate((tries, accepts): (u64, u64)) -> f64 {
    if tries == 0 {
        f64::NAN
    } else {
        accepts as f64 / tries as f64
    }
}

/// One full sweep: densities, latent responses, latent field, initial-state
/// coefficients, autoregression, variances, range.
pub fn sttm_sweep<R: Rng + ?Sized>(
    model: &SttmModel,
    state: &mut SttmState,
    phi_proposal: PhiProposal,
    rng: &mut R,
) -> Result<SweepStats> {
    let mut stats = SweepStats::default();
    let n = model.n_regions();
    for t in 0..model.n_years() {
        for i in 0..n {
            if model.observed(i, t).is_none() {
                continue;
            }
            let accepted = meld_update_cell(model, state, i, t, rng)?;
            let slot = if i < model.n_aerial { &mut stats.meld_aerial } else { &mut stats.meld_ground };
            slot.0 += 1;
            slot.1 += accepted as u64;
        }
    }
    gibbs_zeta_latent(model, state, rng)?;
    gibbs_xi(model, state, rng)?;
    gibbs_gamma(model, state, rng)?;
    gibbs_alpha(model, state, rng)?;
    gibbs_variances(model, state, rng)?;
    stats.phi.0 += 1;
    stats.phi.1 += mh_phi(model, state, phi_proposal, rng) as u64;
    Ok(stats)
}

/// Number of cells breaking the censoring link or reservoir membership, plus
/// any parameter outside its support.
pub fn invariant_violations(model: &SttmModel, state: &SttmState) -> usize {
    let n = model.n_regions();
    let mut bad = 0;
    for t in 0..model.n_years() {
        for i in 0..n {
            let (y, z) = (state.y[(i, t)], state.zeta[(i, t)]);
            let tobit_ok = y >= 0.0 && if y > 0.0 { z == y } else { z <= 0.0 };
            let member_ok = match model.observed(i, t) {
                Some(d) => state.y_index[t * n + i].is_some_and(|k| k < d.len() && d[k] == y),
                None => state.y_index[t * n + i].is_none(),
            };
            bad += (!tobit_ok) as usize + (!member_ok) as usize;
        }
    }
    let params_ok = state.alpha.iter().all(|a| a.abs() < 1.0)
        && state.sigma2_d > 0.0
        && state.sigma2_tau_aerial > 0.0
        && state.sigma2_tau_ground > 0.0
        && state.phi_index < model.grid.len();
    bad + (!params_ok) as usize
}

pub fn sttm_parameter_names(q: usize) -> Vec<String> {
    let mut names = indexed_names("gamma", q);
    names.extend(["alpha[0]", "alpha[1]", "sigma2_d", "sigma2_tau_aerial", "sigma2_tau_ground", "phi"].map(String::from));
    names
}

fn parameter_row(model: &SttmModel, state: &SttmState) -> Vec<f64> {
    let mut row: Vec<f64> = state.gamma.iter().copied().collect();
    row.extend([
        state.alpha[0],
        state.alpha[1],
        state.sigma2_d,
        state.sigma2_tau_aerial,
        state.sigma2_tau_ground,
        state.phi(model),
    ]);
    row
}

/// Result of one stage-2 chain.
#[derive(Clone, Debug)]
pub struct Stage2Output {
    pub n_regions: usize,
    pub n_years: usize,
    pub trace: Trace,
    /// One row per retained iteration, cells in `t * n + i` order.
    pub y_draws: Vec<Vec<f64>>,
    pub meld_acceptance_aerial: f64,
    pub meld_acceptance_ground: f64,
    pub phi_acceptance: f64,
    /// Invariant failures summed over retained draws; zero for a sound run.
    pub invariant_violations: usize,
}

impl Stage2Output {
    pub fn cell_draws(&self, region: usize, year: usize) -> Vec<f64> {
        let k = year * self.n_regions + region;
        self.y_draws.iter().map(|row| row[k]).collect()
    }

    pub fn posterior_mean(&self, region: usize, year: usize) -> f64 {
        let d = self.cell_draws(region, year);
        d.iter().sum::<f64>() / d.len().max(1) as f64
    }
}

pub fn run_sttm<R: Rng + ?Sized>(model: &SttmModel, cfg: &Stage2Config, rng: &mut R) -> Result<Stage2Output> {
    cfg.validate()?;
    let mut state = SttmState::initial(model, rng);
    let mut trace = Trace::new(sttm_parameter_names(model.q()));
    let mut y_draws = Vec::with_capacity((cfg.iterations - cfg.burn_in) / cfg.thin + 1);
    let mut stats = SweepStats::default();
    let mut violations = 0;
    for it in 0..cfg.iterations {
        let sweep = sttm_sweep(model, &mut state, cfg.phi_proposal, rng)?;
        if it < cfg.burn_in {
            continue;
        }
        stats.add(&sweep);
        if (it - cfg.burn_in) % cfg.thin == 0 {
            violations += invariant_violations(model, &state);
            trace.push(it as u64, parameter_row(model, &state));
            y_draws.push(state.y.as_slice().to_vec());
        }
    }
    if violations > 0 {
        log::error!("{violations} invariant violations across retained stage-2 draws");
    }
    Ok(Stage2Output {
        n_regions: model.n_regions(),
        n_years: model.n_years(),
        trace,
        y_draws,
        meld_acceptance_aerial: rate(stats.meld_aerial),
        meld_acceptance_ground: rate(stats.meld_ground),
        phi_acceptance: rate(stats.phi),
        invariant_violations: violations,
    })
}

/// Posterior predictive density draws at the requested (region, year) cells.
pub fn predict_cells(output: &Stage2Output, targets: &[(usize, usize)]) -> Result<Vec<Vec<f64>>> {
    if output.y_draws.is_empty() {
        return Err(MeldError::NoDraws("stage 2 retained no draws".into()));
    }
    targets
        .iter()
        .map(|&(i, t)| {
            if i >= output.n_regions || t >= output.n_years {
                Err(crate::error::validation(format!("cell ({i}, {t}) is outside the fitted regions and years")))
            } else {
                Ok(output.cell_draws(i, t))
            }
        })
        .collect()
}
