//! Brute-force references for the conditional-normal formulas and for the
//! per-cell melding ratio, built from full joint densities.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use survey_meld::config::{InverseGammaPrior, TauStructure};
use survey_meld::geometry::{build_phi_grid_from_distances, Adjacency};
use survey_meld::rng::RngStream;
use survey_meld::stochastic::{conditional_from_precision, conditional_normal, SpdMatrix};
use survey_meld::sttm::{meld_log_ratio, SttmModel, SttmPriors, SttmState};

use crate::support::Outcome;

fn random_spd(dim: usize, rng: &mut RngStream) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5
}

/// Quadratic form (x − μ)' C⁻¹ (x − μ) using an LU inverse.
fn joint_quad(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let inv = cov.clone().lu().try_inverse().expect("invertible");
    let r = x - mean;
    r.dot(&(inv * &r))
}

/// Conditional mean and variance of coordinate `k` read off the joint log
/// density, which is quadratic in x_k: a x² + b x + c with σ² = −1/(2a), μ = bσ².
fn conditional_by_quadratic_fit(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>, k: usize) -> (f64, f64) {
    let h = cov[(k, k)].sqrt();
    let log_joint = |u: f64| {
        let mut v = x.clone();
        v[k] = u;
        -0.5 * joint_quad(&v, mean, cov)
    };
    let centre = mean[k];
    let (fm, f0, fp) = (log_joint(centre - h), log_joint(centre), log_joint(centre + h));
    let a = (fp + fm - 2.0 * f0) / (2.0 * h * h);
    let slope = (fp - fm) / (2.0 * h);
    let var = -1.0 / (2.0 * a);
    // vertex of the parabola in coordinates centred at `centre`
    (centre + slope * var, var)
}

pub fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(201, 0);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let dim = 2 + trial % 7;
        let cov = random_spd(dim, &mut rng);
        let mean = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = DVector::from_fn(dim, |_, _| 2.0 * rng.sample::<f64, _>(StandardNormal));
        let k = rng.random_range(0..dim);
        let (mu_ref, var_ref) = conditional_by_quadratic_fit(&x, &mean, &cov, k);

        let others = DVector::from_iterator(dim - 1, (0..dim).filter(|&j| j != k).map(|j| x[j]));
        let spd = SpdMatrix::new(cov.clone()).unwrap();
        let (mu_a, var_a) = conditional_normal(&mean, &spd, k, &others).unwrap();
        let precision = cov.clone().lu().try_inverse().unwrap();
        let (mu_b, var_b) = conditional_from_precision(&precision, mean.as_slice(), x.as_slice(), k);
        for (mu, var) in [(mu_a, var_a), (mu_b, var_b)] {
            worst = worst
                .max((mu - mu_ref).abs() / mu_ref.abs().max(1.0))
                .max((var - var_ref).abs() / var_ref.max(1.0));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        2,
        worst < 1e-10 && secs < 1.0,
        format!("100 SPD matrices (dim 2..8), worst relative error {worst:.2e}, {secs:.3}s"),
    )
}

/// Six regions (a 2×2 aerial block and two ground sites), three years.
struct MeldInstance {
    grid: survey_meld::geometry::PhiGrid,
    x0: DMatrix<f64>,
    w_lag: DMatrix<f64>,
    distances: DMatrix<f64>,
    adjacency: Adjacency,
    reservoirs: Vec<Vec<f64>>,
}

const REGIONS: usize = 6;
const YEARS: usize = 3;

impl MeldInstance {
    fn new(rng: &mut RngStream) -> Self {
        let coords: [(f64, f64); _] = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.4, 2.1), (2.2, 0.7)];
        let distances = DMatrix::from_fn(REGIONS, REGIONS, |a, b| {
            let (p, q) = (coords[a], coords[b]);
            ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()
        });
        let grid = build_phi_grid_from_distances(&distances, &[0.3, 0.8, 2.0]).unwrap();
        let adjacency = Adjacency::from_edges(4, &[(0, 1), (0, 2), (1, 3), (2, 3)]).unwrap();
        let reservoirs = (0..REGIONS * YEARS)
            .map(|_| {
                (0..40)
                    .map(|_| if rng.random::<f64>() < 0.3 { 0.0 } else { rng.random_range(0.05..2.0) })
                    .collect()
            })
            .collect();
        MeldInstance {
            grid,
            x0: DMatrix::from_element(REGIONS, 1, 1.0),
            w_lag: DMatrix::from_fn(REGIONS, YEARS, |_, _| rng.sample::<f64, _>(StandardNormal)),
            distances,
            adjacency,
            reservoirs,
        }
    }

    fn model(&self) -> SttmModel<'_> {
        let ig = InverseGammaPrior::from_shape_rate(2.0, 1.0);
        SttmModel::new(
            &self.grid,
            &self.x0,
            &self.w_lag,
            4,
            TauStructure::Icar,
            &self.adjacency,
            SttmPriors { gamma_var: 10.0, sigma2_d: ig, sigma2_tau_aerial: ig, sigma2_tau_ground: ig },
            self.reservoirs.iter().map(|r| Some(r.as_slice())).collect(),
        )
        .unwrap()
    }

    /// Random state with every surveyed cell holding one of its reservoir draws.
    fn random_state(&self, model: &SttmModel, rng: &mut RngStream) -> SttmState {
        let mut state = SttmState::initial(model, rng);
        state.phi_index = rng.random_range(0..self.grid.len());
        state.sigma2_d = rng.random_range(0.3..2.0);
        for t in 0..YEARS {
            for i in 0..REGIONS {
                state.xi[(i, t)] = rng.random_range(-0.5..1.5);
                let k = rng.random_range(0..40);
                let y = self.reservoirs[t * REGIONS + i][k];
                state.y[(i, t)] = y;
                state.y_index[t * REGIONS + i] = Some(k);
                state.zeta[(i, t)] = if y > 0.0 { y } else { -rng.random_range(0.0..1.5) };
            }
        }
        state
    }

    /// Year-t response mean, covariance (from the kernel directly) and its LU inverse.
    fn year_moments(&self, state: &SttmState, t: usize) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let phi = self.grid.entry(state.phi_index).phi;
        let cov = self.distances.map(|d| (-d / phi).exp()) * state.sigma2_d;
        let inv = cov.clone().lu().try_inverse().expect("invertible");
        (DVector::from_fn(REGIONS, |r, _| state.xi[(r, t)]), cov, inv)
    }

    /// Log of the year-t response density, up to a constant, with ζ_it set to `u`.
    fn year_log_density(&self, state: &SttmState, i: usize, t: usize, u: f64) -> f64 {
        let (mean, _, inv) = self.year_moments(state, t);
        let mut z = DVector::from_fn(REGIONS, |r, _| state.zeta[(r, t)]);
        z[i] = u;
        let r = z - mean;
        -0.5 * r.dot(&(inv * &r))
    }

    /// Joint-density weight of an observed density: the density at ζ = y for
    /// y > 0, the censored mass below zero (by quadrature) for y = 0. All
    /// other years' factors cancel in the ratio and are left out.
    fn log_weight(&self, state: &SttmState, i: usize, t: usize, y: f64, reference: f64) -> f64 {
        if y > 0.0 {
            return self.year_log_density(state, i, t, y) - reference;
        }
        let (mean, cov, inv) = self.year_moments(state, t);
        let x = DVector::from_fn(REGIONS, |r, _| state.zeta[(r, t)]);
        let (mu, var) = conditional_by_quadratic_fit(&x, &mean, &cov, i);
        let sd = var.sqrt();
        let lower = mu - 14.0 * sd;
        if lower >= 0.0 {
            return f64::NEG_INFINITY;
        }
        let log_density = |u: f64| {
            let mut z = x.clone();
            z[i] = u;
            let r = z - &mean;
            -0.5 * r.dot(&(&inv * &r))
        };
        // composite Simpson on [lower, 0]
        let n = 20_000;
        let h = -lower / n as f64;
        let mut sum = 0.0;
        for k in 0..=n {
            let u = lower + k as f64 * h;
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * (log_density(u) - reference).exp();
        }
        (sum * h / 3.0).ln()
    }
}

pub fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = RngStream::new(301, 0);
    let instance = MeldInstance::new(&mut rng);
    let model = instance.model();
    let mut worst: f64 = 0.0;
    let mut zero_moves = 0;
    let mut states = 0;
    while states < 50 {
        let state = instance.random_state(&model, &mut rng);
        let i = rng.random_range(0..REGIONS);
        let t = rng.random_range(0..YEARS);
        let pool = &instance.reservoirs[t * REGIONS + i];
        let candidate = pool[rng.random_range(0..pool.len())];
        let current = state.y[(i, t)];
        let reference = instance.year_log_density(&state, i, t, state.zeta[(i, t)]);
        let num = instance.log_weight(&state, i, t, candidate, reference);
        let den = instance.log_weight(&state, i, t, current, reference);
        if !num.is_finite() || !den.is_finite() {
            continue;
        }
        states += 1;
        zero_moves += (candidate == 0.0 || current == 0.0) as usize;
        let got = meld_log_ratio(&model, &state, i, t, candidate);
        worst = worst.max((got - (num - den)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        3,
        worst < 1e-8 && secs < 10.0,
        format!("50 states of 6 regions x 3 years ({zero_moves} involving a zero), worst |log-ratio error| {worst:.2e}, {secs:.2}s"),
    )
}
