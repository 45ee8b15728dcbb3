//! Joint-distribution tests: moments of parameters drawn straight from the
//! prior must match moments along a chain that alternates one sampler sweep
//! with a fresh draw of the data given the current parameters.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson, StandardNormal};
use survey_meld::adsm::{adsm_step, detection_logit, visibility_b, AdsmPriors, AdsmState, AerialCell, AerialDataset};
use survey_meld::config::{InverseGammaPrior, NProposal, PhiProposal, TauStructure};
use survey_meld::geometry::{build_phi_grid_from_distances, Adjacency, PhiGrid};
use survey_meld::nmix::{nmix_step, GroundCell, GroundDataset, Lek, NmixPriors, NmixState};
use survey_meld::rng::RngStream;
use survey_meld::stochastic::sample_ztp;
use survey_meld::stochastic::special::logistic;
use survey_meld::sttm::{invariant_violations, sttm_sweep, SttmModel, SttmPriors, SttmState};

use crate::support::{mean_difference_z, Outcome, Violations};

const DRAWS: usize = 20_000;
const WARMUP: usize = 2_000;
const ADAPT_BATCH: usize = 50;
const TARGET: f64 = 0.3;

/// Named test functions evaluated on both samples.
struct Moments {
    names: Vec<String>,
    iid: Vec<Vec<f64>>,
    chain: Vec<Vec<f64>>,
}

impl Moments {
    fn new(names: &[&str]) -> Self {
        Moments {
            names: names.iter().map(|s| s.to_string()).collect(),
            iid: vec![Vec::new(); names.len()],
            chain: vec![Vec::new(); names.len()],
        }
    }

    fn push_iid(&mut self, values: Vec<f64>) {
        for (col, v) in self.iid.iter_mut().zip(values) {
            col.push(v);
        }
    }

    fn push_chain(&mut self, values: Vec<f64>) {
        for (col, v) in self.chain.iter_mut().zip(values) {
            col.push(v);
        }
    }

    /// (all within 3 s.e., largest |z| with its name)
    fn verdict(&self) -> (bool, f64, String) {
        let mut worst = (0.0, String::new());
        for (k, name) in self.names.iter().enumerate() {
            let z = mean_difference_z(&self.iid[k], &self.chain[k]).abs();
            if z > worst.0 {
                worst = (z, name.clone());
            }
        }
        (worst.0 < 3.0, worst.0, worst.1)
    }
}

fn normal(rng: &mut RngStream, var: f64) -> f64 {
    var.sqrt() * rng.sample::<f64, _>(StandardNormal)
}

fn binomial(n: u64, p: f64, rng: &mut RngStream) -> u64 {
    Binomial::new(n, p).unwrap().sample(rng)
}

fn inverse_gamma(shape: f64, rate: f64, rng: &mut RngStream) -> f64 {
    1.0 / Gamma::new(shape, 1.0 / rate).unwrap().sample(rng)
}

// ---------------------------------------------------------------- aerial toy

const ADSM_M: usize = 4;

fn adsm_toy() -> (AerialDataset, AdsmPriors) {
    let cell = |region, slope: f64| AerialCell {
        region,
        year: 0,
        groups: Vec::new(),
        x_rho: vec![1.0],
        x_lambda: vec![1.0, slope],
    };
    let data = AerialDataset::new(2, 1, vec![cell(0, 0.5), cell(1, -0.5)], ADSM_M, 10.0, 1.0).unwrap();
    let priors = AdsmPriors {
        beta_rho_var: 0.25,
        beta_psi_var: 1.0,
        beta_lambda_var: 0.25,
        lambda0_shape: 2.0,
        lambda0_scale: 0.5,
    };
    (data, priors)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn adsm_from_prior(state: &mut AdsmState, data: &AerialDataset, priors: &AdsmPriors, rng: &mut RngStream) {
    for b in &mut state.beta_rho {
        *b = normal(rng, priors.beta_rho_var);
    }
    for b in &mut state.beta_psi {
        *b = normal(rng, priors.beta_psi_var);
    }
    // the size prior is truncated to a lek rate above λ₀ in every cell
    loop {
        for b in &mut state.beta_lambda {
            *b = normal(rng, priors.beta_lambda_var);
        }
        state.lambda0 = Gamma::new(priors.lambda0_shape, priors.lambda0_scale).unwrap().sample(rng);
        if data.cells.iter().all(|c| dot(&c.x_lambda, &state.beta_lambda) > state.lambda0.ln()) {
            break;
        }
    }
    state.p_omega = rng.random::<f64>();
    for (c, cell) in data.cells.iter().enumerate() {
        let psi = logistic(dot(&cell.x_lambda, &state.beta_psi));
        let lek_rate = dot(&cell.x_lambda, &state.beta_lambda).exp();
        for s in &mut state.slots[c * ADSM_M..(c + 1) * ADSM_M] {
            s.z = rng.random::<f64>() < psi;
            s.omega = rng.random::<f64>() < state.p_omega;
            s.n = sample_ztp(if s.omega { lek_rate } else { state.lambda0 }, rng).unwrap() as u32;
            s.d = rng.random_range(0.0..data.nu_d);
            s.left = rng.random::<bool>();
        }
    }
}

/// Double-observer detections of every member group given the parameters.
fn adsm_observe(state: &mut AdsmState, data: &AerialDataset, rng: &mut RngStream) {
    for (c, cell) in data.cells.iter().enumerate() {
        for s in &mut state.slots[c * ADSM_M..(c + 1) * ADSM_M] {
            s.v = if s.z {
                let b = visibility_b(s.d, s.left, true);
                let rho = logistic(detection_logit(&state.beta_rho, &cell.x_rho, s.n, s.d).unwrap());
                binomial(b as u64, rho, rng) as u8
            } else {
                0
            };
            s.observed = s.v > 0;
        }
    }
}

fn adsm_stats(state: &AdsmState) -> Vec<f64> {
    let members = state.slots.iter().filter(|s| s.z);
    let (count, total, leks) = members.fold((0.0, 0.0, 0.0), |(c, t, l), s| (c + 1.0, t + s.n as f64, l + s.omega as u8 as f64));
    let mut row = state.beta_rho.clone();
    row.extend(&state.beta_lambda);
    row.extend(&state.beta_psi);
    row.extend([state.lambda0, state.p_omega, count, total, leks, state.beta_psi[0].powi(2)]);
    row
}

fn adsm_geweke() -> Moments {
    let (data, priors) = adsm_toy();
    let mut moments = Moments::new(&[
        "beta_rho[0]",
        "beta_rho[1]",
        "beta_rho[2]",
        "beta_lambda[0]",
        "beta_lambda[1]",
        "beta_psi[0]",
        "beta_psi[1]",
        "lambda0",
        "p_omega",
        "members",
        "individuals",
        "lek members",
        "beta_psi[0]^2",
    ]);
    let mut rng = RngStream::new(401, 0);
    let mut state = AdsmState::initial(&data, &priors, &mut rng);
    for _ in 0..DRAWS {
        adsm_from_prior(&mut state, &data, &priors, &mut rng);
        moments.push_iid(adsm_stats(&state));
    }

    let mut rng = RngStream::new(401, 1);
    let mut state = AdsmState::initial(&data, &priors, &mut rng);
    adsm_from_prior(&mut state, &data, &priors, &mut rng);
    adsm_observe(&mut state, &data, &mut rng);
    for it in 0..WARMUP + DRAWS {
        let adapting = it < WARMUP;
        adsm_step(&mut state, &data, &priors, adapting, &mut rng).unwrap();
        adsm_observe(&mut state, &data, &mut rng);
        if adapting {
            if (it + 1) % ADAPT_BATCH == 0 {
                state.adapt(TARGET);
            }
        } else {
            moments.push_chain(adsm_stats(&state));
        }
    }
    moments
}

// ---------------------------------------------------------------- ground toy

const VISITS: usize = 3;

fn ground_data(counts: [[u32; VISITS]; 2]) -> GroundDataset {
    let leks = counts.iter().map(|c| Lek { counts: c.to_vec() }).collect();
    GroundDataset::new(1, 1, vec![GroundCell { region: 0, year: 0, leks, w: vec![1.0], area_km2: 1.0 }]).unwrap()
}

fn ground_counts(state: &NmixState, rng: &mut RngStream) -> [[u32; VISITS]; 2] {
    let mut out = [[0; VISITS]; 2];
    for (l, row) in out.iter_mut().enumerate() {
        for f in row.iter_mut() {
            *f = binomial(state.n[0][l] as u64, state.p, rng) as u32;
        }
    }
    out
}

fn nmix_from_prior(state: &mut NmixState, priors: &NmixPriors, rng: &mut RngStream) {
    state.eta[0] = normal(rng, priors.eta_var);
    state.p = rng.random::<f64>();
    let pois = Poisson::new(state.eta[0].exp()).unwrap();
    state.n = vec![(0..2).map(|_| pois.sample(rng) as u32).collect()];
}

fn nmix_stats(state: &NmixState) -> Vec<f64> {
    let total = (state.n[0][0] + state.n[0][1]) as f64;
    vec![state.eta[0], state.eta[0].powi(2), state.p, state.p.powi(2), total, total * total]
}

fn nmix_geweke() -> Moments {
    let priors = NmixPriors { eta_var: 0.5 };
    let mut moments = Moments::new(&["eta", "eta^2", "p", "p^2", "abundance", "abundance^2"]);
    let mut rng = RngStream::new(402, 0);
    let mut state = NmixState::initial(&ground_data([[0; VISITS]; 2]));
    for _ in 0..DRAWS {
        nmix_from_prior(&mut state, &priors, &mut rng);
        moments.push_iid(nmix_stats(&state));
    }

    let mut rng = RngStream::new(402, 1);
    nmix_from_prior(&mut state, &priors, &mut rng);
    let mut data = ground_data(ground_counts(&state, &mut rng));
    for it in 0..WARMUP + DRAWS {
        let adapting = it < WARMUP;
        nmix_step(&mut state, &data, &priors, NProposal::Walk, adapting, &mut rng).unwrap();
        data = ground_data(ground_counts(&state, &mut rng));
        if adapting {
            if (it + 1) % ADAPT_BATCH == 0 {
                state.adapt(TARGET);
            }
        } else {
            moments.push_chain(nmix_stats(&state));
        }
    }
    moments
}

// ---------------------------------------------------------------- stage-2 toy

const STTM_REGIONS: usize = 4;
const STTM_YEARS: usize = 3;

struct SttmToy {
    grid: PhiGrid,
    distances: DMatrix<f64>,
    x0: DMatrix<f64>,
    w_lag: DMatrix<f64>,
    adjacency: Adjacency,
    priors: SttmPriors,
}

impl SttmToy {
    fn new() -> Self {
        let coords: [(f64, f64); _] = [(0.0, 0.0), (1.0, 0.0), (0.3, 1.4), (1.8, 1.1)];
        let distances = DMatrix::from_fn(STTM_REGIONS, STTM_REGIONS, |a, b| {
            let (p, q) = (coords[a], coords[b]);
            ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
        });
        let ig = InverseGammaPrior::from_shape_rate(4.0, 3.0);
        SttmToy {
            grid: build_phi_grid_from_distances(&distances, &[0.5, 1.5, 4.0]).unwrap(),
            distances,
            x0: DMatrix::from_element(STTM_REGIONS, 1, 1.0),
            w_lag: DMatrix::from_row_slice(
                STTM_REGIONS,
                STTM_YEARS,
                &[0.5, -1.0, 0.2, 0.7, -0.8, 0.0, -0.3, 0.4, 1.1, -0.6, 0.9, 0.3],
            ),
            adjacency: Adjacency::from_edges(2, &[(0, 1)]).unwrap(),
            priors: SttmPriors { gamma_var: 1.0, sigma2_d: ig, sigma2_tau_aerial: ig, sigma2_tau_ground: ig },
        }
    }

    /// Every cell surveyed, each reservoir holding only the current density.
    fn model<'a>(&'a self, reservoirs: &'a [Vec<f64>]) -> SttmModel<'a> {
        SttmModel::new(
            &self.grid,
            &self.x0,
            &self.w_lag,
            2,
            TauStructure::Diagonal,
            &self.adjacency,
            self.priors.clone(),
            reservoirs.iter().map(|r| Some(r.as_slice())).collect(),
        )
        .unwrap()
    }

    fn from_prior(&self, state: &mut SttmState, rng: &mut RngStream) {
        let p = &self.priors;
        state.gamma = DVector::from_element(1, normal(rng, p.gamma_var));
        state.alpha = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        state.sigma2_d = inverse_gamma(p.sigma2_d.shape, p.sigma2_d.rate(), rng);
        state.sigma2_tau_aerial = inverse_gamma(p.sigma2_tau_aerial.shape, p.sigma2_tau_aerial.rate(), rng);
        state.sigma2_tau_ground = inverse_gamma(p.sigma2_tau_ground.shape, p.sigma2_tau_ground.rate(), rng);
        state.phi_index = rng.random_range(0..self.grid.len());
        let mut prev = &self.x0 * &state.gamma;
        for t in 0..STTM_YEARS {
            for i in 0..STTM_REGIONS {
                let var = if i < 2 { state.sigma2_tau_aerial } else { state.sigma2_tau_ground };
                state.xi[(i, t)] = state.alpha[0] * prev[i] + state.alpha[1] * self.w_lag[(i, t)] + normal(rng, var);
            }
            prev = state.xi.column(t).into_owned();
        }
    }

    /// Fresh responses given the latent field; returns single-draw reservoirs.
    fn observe(&self, state: &mut SttmState, rng: &mut RngStream) -> Vec<Vec<f64>> {
        let phi = self.grid.entry(state.phi_index).phi;
        let cov = self.distances.map(|d| (-d / phi).exp()) * state.sigma2_d;
        let l = cov.cholesky().unwrap().l();
        let mut reservoirs = vec![Vec::new(); STTM_REGIONS * STTM_YEARS];
        for t in 0..STTM_YEARS {
            let z = DVector::from_fn(STTM_REGIONS, |_, _| rng.sample::<f64, _>(StandardNormal));
            let zeta = state.xi.column(t) + &l * z;
            for i in 0..STTM_REGIONS {
                state.zeta[(i, t)] = zeta[i];
                state.y[(i, t)] = zeta[i].max(0.0);
                state.y_index[t * STTM_REGIONS + i] = Some(0);
                reservoirs[t * STTM_REGIONS + i] = vec![state.y[(i, t)]];
            }
        }
        reservoirs
    }
}

fn sttm_stats(state: &SttmState, grid: &PhiGrid) -> Vec<f64> {
    let zeros = state.y.iter().filter(|&&v| v == 0.0).count() as f64;
    vec![
        state.gamma[0],
        state.alpha[0],
        state.alpha[1],
        state.sigma2_d,
        state.sigma2_tau_aerial,
        state.sigma2_tau_ground,
        grid.entry(state.phi_index).phi,
        state.xi[(0, 0)],
        state.xi[(3, 2)],
        state.y.mean(),
        zeros / state.y.len() as f64,
    ]
}

fn sttm_geweke(violations: &mut Violations) -> Moments {
    let toy = SttmToy::new();
    let mut moments = Moments::new(&[
        "gamma[0]",
        "alpha[0]",
        "alpha[1]",
        "sigma2_d",
        "sigma2_tau_aerial",
        "sigma2_tau_ground",
        "phi",
        "xi[0,0]",
        "xi[3,2]",
        "mean y",
        "zero share",
    ]);
    let mut rng = RngStream::new(403, 0);
    let mut reservoirs = vec![vec![0.5]; STTM_REGIONS * STTM_YEARS];
    let mut state = SttmState::initial(&toy.model(&reservoirs), &mut rng);
    for _ in 0..DRAWS {
        toy.from_prior(&mut state, &mut rng);
        toy.observe(&mut state, &mut rng);
        moments.push_iid(sttm_stats(&state, &toy.grid));
    }

    let mut rng = RngStream::new(403, 1);
    toy.from_prior(&mut state, &mut rng);
    reservoirs = toy.observe(&mut state, &mut rng);
    let mut failures = 0;
    for _ in 0..DRAWS {
        {
            let model = toy.model(&reservoirs);
            sttm_sweep(&model, &mut state, PhiProposal::Uniform, &mut rng).unwrap();
            failures += invariant_violations(&model, &state);
        }
        moments.push_chain(sttm_stats(&state, &toy.grid));
        reservoirs = toy.observe(&mut state, &mut rng);
    }
    violations.add("geweke stage-2 toy", DRAWS, failures);
    moments
}

pub fn criterion_4(violations: &mut Violations) -> Outcome {
    let start = Instant::now();
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, moments) in [("aerial", adsm_geweke()), ("ground", nmix_geweke()), ("stage-2", sttm_geweke(violations))] {
        let (ok, z, worst) = moments.verdict();
        pass &= ok;
        notes.push(format!("{name}: {} moments, max |z| {z:.2} ({worst})", moments.names.len()));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 300.0;
    notes.push(format!("{DRAWS} transitions each, {secs:.1}s"));
    Outcome::new(4, pass, notes.join("; "))
}
