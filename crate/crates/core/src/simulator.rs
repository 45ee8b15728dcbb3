//! Synthetic surveys with known parameters.
//!
//! The density field is drawn first from the dynamic tobit model; groups and
//! leks are then allocated so that each surveyed cell carries (up to
//! rounding) the drawn density, and detections and visit counts are
//! simulated on top.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::adsm::{detection_logit, visibility_b, AerialDataset};
use crate::config::{TauStructure, ALL_STATIC_COLUMNS};
use crate::error::{validation, MeldError, Result};
use crate::geometry::{default_phi_support, exp_correlation, icar_precision, lattice_edges, Adjacency, SurveyGeometry};
use crate::ingestion::{
    assemble_designs, build_geometry, covariate_table, AdjacencyRecord, CovariateRecord, Designs, DetectionRecord,
    DivisionRecord, GeometryRecord, GroundCountRecord, MaskRecord, OverlapRecord, PdsiRecord, RegionKind, Side,
    SurveyTables,
};
use crate::stochastic::special::logistic;
use crate::stochastic::{mvn_sample, sample_ztp, ztp_mean};

/// Detected groups never exceed M minus this margin.
pub const M_MARGIN: usize = 5;

/// Generative parameters and design settings. Empty coefficient vectors are
/// filled with defaults sized to the design by [`TruthSpec::resolved`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthSpec {
    pub n_side: usize,
    pub block_km: f64,
    pub n_ground: usize,
    pub ground_area_km2: f64,
    pub n_years: usize,
    pub first_year: i32,
    pub n_ecoregions: usize,
    pub n_divisions: usize,
    pub static_columns: Vec<String>,
    pub m_super: usize,
    pub nu_d: f64,
    pub aerial_area_km2: f64,
    pub aerial_survey_prob: f64,
    pub ground_survey_prob: f64,
    pub visits_min: u32,
    pub visits_max: u32,
    pub pdsi_ar: f64,
    pub pdsi_sd: f64,
    /// Ecoregion intercepts, then group-size and distance effects.
    pub beta_rho: Vec<f64>,
    pub beta_lambda: Vec<f64>,
    pub beta_psi: Vec<f64>,
    pub lambda0: f64,
    pub p_omega: f64,
    pub eta: Vec<f64>,
    pub p: f64,
    pub gamma: Vec<f64>,
    pub alpha: [f64; 2],
    pub sigma2_d: f64,
    pub sigma2_tau_aerial: f64,
    pub sigma2_tau_ground: f64,
    pub phi: f64,
    pub phi_support: Vec<f64>,
    pub tau_structure: TauStructure,
}

impl Default for TruthSpec {
    fn default() -> Self {
        TruthSpec {
            n_side: 5,
            block_km: 15.0,
            n_ground: 4,
            ground_area_km2: 51.2,
            n_years: 8,
            first_year: 2005,
            n_ecoregions: 1,
            n_divisions: 2,
            static_columns: vec!["development".to_string()],
            m_super: 10,
            nu_d: 600.0,
            aerial_area_km2: 36.0,
            aerial_survey_prob: 0.6,
            ground_survey_prob: 1.0,
            visits_min: 2,
            visits_max: 3,
            pdsi_ar: 0.6,
            pdsi_sd: 1.5,
            beta_rho: Vec::new(),
            beta_lambda: Vec::new(),
            beta_psi: Vec::new(),
            lambda0: 1.2,
            p_omega: 0.8,
            eta: Vec::new(),
            p: 0.6,
            gamma: Vec::new(),
            alpha: [0.8, 0.05],
            sigma2_d: 0.04,
            sigma2_tau_aerial: 0.01,
            sigma2_tau_ground: 0.01,
            phi: 20_001.0,
            phi_support: default_phi_support(),
            tau_structure: TauStructure::Diagonal,
        }
    }
}

impl TruthSpec {
    pub fn p_lambda(&self) -> usize {
        self.n_ecoregions + self.static_columns.len() + 1
    }

    pub fn q(&self) -> usize {
        self.n_ecoregions + self.static_columns.len()
    }

    /// Fill unset coefficient vectors with defaults and check supports.
    pub fn resolved(&self) -> Result<TruthSpec> {
        let mut s = self.clone();
        let (e, k) = (s.n_ecoregions, s.static_columns.len());
        let fill = |v: &mut Vec<f64>, intercept: f64, slope: f64, last: Option<f64>| {
            if v.is_empty() {
                v.extend(std::iter::repeat_n(intercept, e));
                v.extend((0..k).map(|j| if j % 2 == 0 { slope } else { -slope }));
                v.extend(last);
            }
        };
        if s.beta_rho.is_empty() {
            s.beta_rho = vec![1.5; e];
            s.beta_rho.extend([0.0, -0.002]);
        }
        fill(&mut s.beta_lambda, 8f64.ln(), 0.1, Some(0.05));
        fill(&mut s.beta_psi, 0.0, 0.1, Some(0.05));
        fill(&mut s.eta, 5f64.ln(), 0.15, Some(0.1));
        fill(&mut s.gamma, 0.5, 0.1, None);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(validation(format!("truth: {msg}")));
        if self.n_side < 2 {
            return bad(format!("n_side must be at least 2, got {}", self.n_side));
        }
        if self.n_years == 0 || self.n_ecoregions == 0 || self.n_ecoregions > self.n_side || self.n_divisions == 0 {
            return bad("n_years, n_ecoregions (≤ n_side) and n_divisions must be positive".into());
        }
        for c in &self.static_columns {
            if !ALL_STATIC_COLUMNS.contains(&c.as_str()) {
                return bad(format!("unknown static column '{c}'"));
            }
        }
        if self.m_super <= M_MARGIN {
            return bad(format!("m_super must exceed {M_MARGIN}"));
        }
        if !(self.nu_d > 7.0) || !(self.aerial_area_km2 > 0.0) || !(self.block_km > 0.0) {
            return bad("nu_d, aerial_area_km2 and block_km must be positive (nu_d beyond 7 m)".into());
        }
        let side_m = self.ground_area_km2.sqrt() * 1000.0;
        if !(self.ground_area_km2 > 0.0) || side_m > self.n_side as f64 * self.block_km * 1000.0 {
            return bad("ground sites must be positive and fit inside the lattice".into());
        }
        for (name, v) in [("aerial_survey_prob", self.aerial_survey_prob), ("ground_survey_prob", self.ground_survey_prob)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if self.visits_min == 0 || self.visits_min > self.visits_max {
            return bad("visits_min must be positive and at most visits_max".into());
        }
        if !(self.pdsi_ar.abs() < 1.0) || !(self.pdsi_sd > 0.0) {
            return bad("pdsi_ar must lie in (−1, 1) and pdsi_sd be positive".into());
        }
        for (name, len, want) in [
            ("beta_rho", self.beta_rho.len(), self.n_ecoregions + 2),
            ("beta_lambda", self.beta_lambda.len(), self.p_lambda()),
            ("beta_psi", self.beta_psi.len(), self.p_lambda()),
            ("eta", self.eta.len(), self.p_lambda()),
            ("gamma", self.gamma.len(), self.q()),
        ] {
            if len != want {
                return bad(format!("{name} has {len} entries, the design needs {want}"));
            }
        }
        if !(self.lambda0 > 0.0) {
            return bad("lambda0 must be positive".into());
        }
        if !(self.p_omega > 0.0 && self.p_omega <= 1.0) || !(self.p > 0.0 && self.p <= 1.0) {
            return bad("p_omega and p must lie in (0, 1]".into());
        }
        if !self.alpha.iter().all(|a| a.abs() < 1.0) {
            return bad(format!("alpha = {:?} must lie in (−1, 1)²", self.alpha));
        }
        if !(self.sigma2_d > 0.0 && self.sigma2_tau_aerial > 0.0 && self.sigma2_tau_ground > 0.0) {
            return bad("variances must be positive".into());
        }
        if !self.phi_support.contains(&self.phi) {
            return bad(format!("phi = {} is not on the range support", self.phi));
        }
        Ok(())
    }

    pub fn years(&self) -> Vec<i32> {
        (self.first_year..self.first_year + self.n_years as i32).collect()
    }
}

/// Lattice and ground-site layout with its table rows.
#[derive(Clone, Debug)]
pub struct SimulatedLayout {
    pub geometry: SurveyGeometry,
    pub geometry_rows: Vec<GeometryRecord>,
    pub adjacency_rows: Vec<AdjacencyRecord>,
    pub overlap_rows: Vec<OverlapRecord>,
}

pub fn block_id(k: usize) -> String {
    format!("B{:03}", k + 1)
}

pub fn site_id(k: usize) -> String {
    format!("G{:02}", k + 1)
}

fn overlap_1d(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Square lattice of `n_side²` blocks with rook adjacency, plus ground sites
/// (squares of the given area) placed uniformly inside the lattice.
pub fn simulate_geometry<R: Rng + ?Sized>(
    n_side: usize,
    n_ground: usize,
    block_km: f64,
    ground_area_km2: f64,
    aerial_area_km2: f64,
    rng: &mut R,
) -> Result<SimulatedLayout> {
    if n_side < 2 {
        return Err(validation(format!("lattice side must be at least 2, got {n_side}")));
    }
    let block_m = block_km * 1000.0;
    let extent = n_side as f64 * block_m;
    let half = 0.5 * ground_area_km2.sqrt() * 1000.0;
    if !(half > 0.0) || 2.0 * half > extent {
        return Err(validation("ground sites must have positive area and fit inside the lattice"));
    }
    let mut geometry_rows = Vec::new();
    for r in 0..n_side {
        for c in 0..n_side {
            geometry_rows.push(GeometryRecord {
                region_id: block_id(r * n_side + c),
                kind: RegionKind::Aerial,
                x_m: (c as f64 + 0.5) * block_m,
                y_m: (r as f64 + 0.5) * block_m,
                area_km2: block_km * block_km,
            });
        }
    }
    let mut overlap_rows = Vec::new();
    for s in 0..n_ground {
        let x = rng.random_range(half..=extent - half);
        let y = rng.random_range(half..=extent - half);
        geometry_rows.push(GeometryRecord {
            region_id: site_id(s),
            kind: RegionKind::Ground,
            x_m: x,
            y_m: y,
            area_km2: ground_area_km2,
        });
        let site_area = 4.0 * half * half;
        let mut pieces = Vec::new();
        for r in 0..n_side {
            for c in 0..n_side {
                let (bx, by) = (c as f64 * block_m, r as f64 * block_m);
                let a = overlap_1d(x - half, x + half, bx, bx + block_m) * overlap_1d(y - half, y + half, by, by + block_m);
                if a > 1e-9 * site_area {
                    pieces.push((r * n_side + c, a));
                }
            }
        }
        let total: f64 = pieces.iter().map(|(_, a)| a).sum();
        for (b, a) in pieces {
            overlap_rows.push(OverlapRecord { site_id: site_id(s), block_id: block_id(b), weight: a / total });
        }
    }
    let adjacency_rows = lattice_edges(n_side)
        .into_iter()
        .map(|(a, b)| AdjacencyRecord { block_id_a: block_id(a), block_id_b: block_id(b) })
        .collect();
    let tables = SurveyTables { geometry: geometry_rows.clone(), adjacency: adjacency_rows, ..Default::default() };
    let geometry = build_geometry(&tables, aerial_area_km2)?;
    Ok(SimulatedLayout { geometry, geometry_rows, adjacency_rows: tables.adjacency, overlap_rows })
}

/// A latent aerial group in a surveyed cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGroup {
    pub region: usize,
    pub year: usize,
    pub n: u32,
    pub d: f64,
    pub left: bool,
    pub v: u8,
}

/// Everything the scorers need to compare fits against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub spec: TruthSpec,
    pub years: Vec<i32>,
    pub region_ids: Vec<String>,
    pub n_aerial: usize,
    /// Region-major: `xi[i][t]`.
    pub xi: Vec<Vec<f64>>,
    pub zeta: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub surveyed: Vec<Vec<bool>>,
    /// Density implied by the allocated groups or leks; `None` when unsurveyed.
    pub realized_density: Vec<Vec<Option<f64>>>,
    /// Largest |realized − y| over surveyed cells.
    pub quantization_gap: f64,
    pub groups: Vec<LatentGroup>,
    /// Latent lek abundances per (region, year) in ground cells.
    pub leks: Vec<(usize, usize, Vec<u32>)>,
}

#[derive(Clone, Debug)]
pub struct SimulatedSurvey {
    pub tables: SurveyTables,
    pub truth: TruthRecord,
}

fn stochastic_round<R: Rng + ?Sized>(x: f64, rng: &mut R) -> usize {
    let f = x.floor();
    (f as usize) + (rng.random::<f64>() < x - f) as usize
}

fn spread_uniformly<R: Rng + ?Sized>(total: usize, bins: usize, rng: &mut R) -> Vec<u32> {
    let mut out = vec![0u32; bins];
    for _ in 0..total {
        out[rng.random_range(0..bins)] += 1;
    }
    out
}

fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> Result<u64> {
    Ok(Binomial::new(n, p.clamp(0.0, 1.0)).map_err(|e| MeldError::Numerical(e.to_string()))?.sample(rng))
}

/// Innovation draw with precision blockdiag(S_A/σ²_A, I/σ²_G). The intrinsic
/// CAR part is drawn in its sum-to-zero subspace.
fn innovation<R: Rng + ?Sized>(
    n_aerial: usize,
    n_ground: usize,
    structure: &Option<(DMatrix<f64>, DVector<f64>)>,
    spec: &TruthSpec,
    rng: &mut R,
) -> DVector<f64> {
    let mut e = DVector::zeros(n_aerial + n_ground);
    match structure {
        Some((vectors, values)) => {
            for k in 0..n_aerial {
                if values[k] > 1e-9 {
                    let z: f64 = rng.sample(StandardNormal);
                    let scale = (spec.sigma2_tau_aerial / values[k]).sqrt() * z;
                    e.rows_mut(0, n_aerial).axpy(scale, &vectors.column(k), 1.0);
                }
            }
        }
        None => {
            for i in 0..n_aerial {
                e[i] = spec.sigma2_tau_aerial.sqrt() * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    for i in n_aerial..n_aerial + n_ground {
        e[i] = spec.sigma2_tau_ground.sqrt() * rng.sample::<f64, _>(StandardNormal);
    }
    e
}

/// Latent field, response and censored densities, regions × years.
pub fn simulate_field<R: Rng + ?Sized>(
    spec: &TruthSpec,
    geometry: &SurveyGeometry,
    designs: &Designs,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let n = geometry.n_regions();
    let n_years = designs.years.len();
    let structure = match spec.tau_structure {
        TauStructure::Diagonal => None,
        TauStructure::Icar => {
            let eig = SymmetricEigen::new(icar_precision(&geometry.adjacency)?);
            Some((eig.eigenvectors, eig.eigenvalues))
        }
    };
    let corr = exp_correlation(&geometry.distances(), spec.phi)?.scaled(spec.sigma2_d);
    let gamma = DVector::from_column_slice(&spec.gamma);
    let mut prev = &designs.x0 * gamma;
    let mut xi = DMatrix::zeros(n, n_years);
    let mut zeta = DMatrix::zeros(n, n_years);
    for t in 0..n_years {
        let e = innovation(geometry.n_aerial, geometry.n_ground, &structure, spec, rng);
        let cur = prev * spec.alpha[0] + designs.w_lag.column(t) * spec.alpha[1] + e;
        let z = mvn_sample(&cur, &corr, rng)?;
        xi.set_column(t, &cur);
        zeta.set_column(t, &z);
        prev = cur;
    }
    let y = zeta.map(|v| v.max(0.0));
    Ok((xi, zeta, y))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Simulate geometry, covariates, density field and both surveys.
pub fn simulate_surveys<R: Rng + ?Sized>(spec: &TruthSpec, rng: &mut R) -> Result<SimulatedSurvey> {
    let spec = spec.resolved()?;
    let layout = simulate_geometry(spec.n_side, spec.n_ground, spec.block_km, spec.ground_area_km2, spec.aerial_area_km2, rng)?;
    let geometry = &layout.geometry;
    let n_aerial = geometry.n_aerial;
    let n = geometry.n_regions();
    let years = spec.years();
    let n_years = years.len();

    let mut covariates = Vec::with_capacity(n_aerial);
    let mut divisions = Vec::with_capacity(n_aerial);
    for r in 0..spec.n_side {
        for c in 0..spec.n_side {
            let k = r * spec.n_side + c;
            let mut z = || rng.sample::<f64, _>(StandardNormal);
            covariates.push(CovariateRecord {
                block_id: block_id(k),
                ecoregion: format!("eco{}", c * spec.n_ecoregions / spec.n_side + 1),
                development: z(),
                crp: z(),
                grass_patch: z(),
                shrub: z(),
                woodland: z(),
            });
            divisions.push(DivisionRecord {
                block_id: block_id(k),
                division_id: format!("div{}", r * spec.n_divisions / spec.n_side + 1),
            });
        }
    }
    let mut pdsi = Vec::new();
    for d in 0..spec.n_divisions {
        let innov_sd = spec.pdsi_sd * (1.0 - spec.pdsi_ar * spec.pdsi_ar).sqrt();
        let mut x = spec.pdsi_sd * rng.sample::<f64, _>(StandardNormal);
        for year in (spec.first_year - 1)..(spec.first_year + n_years as i32) {
            pdsi.push(PdsiRecord { division_id: format!("div{}", d + 1), year, pdsi: x });
            x = spec.pdsi_ar * x + innov_sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut tables = SurveyTables {
        geometry: layout.geometry_rows.clone(),
        adjacency: layout.adjacency_rows.clone(),
        covariates,
        pdsi,
        divisions,
        overlap: layout.overlap_rows.clone(),
        ..Default::default()
    };
    let table = covariate_table(&tables, geometry)?;
    if table.ecoregions.len() != spec.n_ecoregions {
        return Err(validation("lattice too small for the requested ecoregions"));
    }
    let designs = assemble_designs(&table, geometry, &years, &spec.static_columns)?;
    let (xi, zeta, y) = simulate_field(&spec, geometry, &designs, rng)?;

    let mut surveyed = vec![vec![false; n_years]; n];
    let mut realized = vec![vec![None; n_years]; n];
    let mut groups = Vec::new();
    let mut leks = Vec::new();
    let mut gap: f64 = 0.0;
    for t in 0..n_years {
        for i in 0..n {
            let prob = if geometry.is_aerial(i) { spec.aerial_survey_prob } else { spec.ground_survey_prob };
            surveyed[i][t] = rng.random::<f64>() < prob;
            tables.survey_mask.push(MaskRecord {
                region_id: geometry.region_ids[i].clone(),
                year: years[t],
                surveyed: surveyed[i][t] as u8,
            });
            if !surveyed[i][t] {
                continue;
            }
            let density = if geometry.is_aerial(i) {
                let cell = allocate_aerial(&spec, &designs, i, t, y[(i, t)], rng)?;
                let total: u32 = cell.iter().map(|g| g.n).sum();
                let mut gid = 0;
                for g in &cell {
                    if g.v > 0 {
                        gid += 1;
                        tables.detections.push(DetectionRecord {
                            region_id: geometry.region_ids[i].clone(),
                            year: years[t],
                            group_id: gid,
                            v: g.v,
                            d_m: g.d,
                            side: if g.left { Side::Left } else { Side::Right },
                            count: g.n,
                        });
                    }
                }
                groups.extend(cell);
                total as f64 / spec.aerial_area_km2
            } else {
                let area = geometry.area(i);
                let sizes = allocate_ground(&spec, &designs, i, t, y[(i, t)], area, rng);
                for (l, &size) in sizes.iter().enumerate() {
                    let visits = rng.random_range(spec.visits_min..=spec.visits_max);
                    for j in 0..visits {
                        tables.ground_counts.push(GroundCountRecord {
                            site_id: geometry.region_ids[i].clone(),
                            year: years[t],
                            lek_id: format!("L{}", l + 1),
                            visit: j + 1,
                            males_flushed: binomial(size as u64, spec.p, rng)? as u32,
                        });
                    }
                }
                let total: u32 = sizes.iter().sum();
                leks.push((i, t, sizes));
                2.0 * total as f64 / area
            };
            gap = gap.max((density - y[(i, t)]).abs());
            realized[i][t] = Some(density);
        }
    }
    let truth = TruthRecord {
        years,
        region_ids: geometry.region_ids.clone(),
        n_aerial,
        xi: rows_of(&xi),
        zeta: rows_of(&zeta),
        y: rows_of(&y),
        surveyed,
        realized_density: realized,
        quantization_gap: gap,
        groups,
        leks,
        spec,
    };
    Ok(SimulatedSurvey { tables, truth })
}

/// Expected size of a member group: the lek/non-lek mixture of zero-truncated Poissons.
pub fn expected_group_size(spec: &TruthSpec, x_lambda: &[f64]) -> f64 {
    let lam: f64 = x_lambda.iter().zip(&spec.beta_lambda).map(|(x, b)| x * b).sum::<f64>().exp();
    spec.p_omega * ztp_mean(lam) + (1.0 - spec.p_omega) * ztp_mean(spec.lambda0)
}

/// Attempts at drawing a group configuration with the exact total before
/// falling back to sequential filling.
const ALLOCATION_TRIES: usize = 100_000;

/// Mixture mean group size with both rates multiplied by `scale`.
fn scaled_group_mean(spec: &TruthSpec, lek_rate: f64, scale: f64) -> f64 {
    spec.p_omega * ztp_mean(scale * lek_rate) + (1.0 - spec.p_omega) * ztp_mean(scale * spec.lambda0)
}

/// Group sizes for round(yS) individuals. The group count is Binomial(cap, ψ)
/// with cap = M minus the margin, sizes follow the lek/non-lek mixture, and a
/// configuration is kept only when it sums to the target, so sizes are drawn
/// from the mixture conditional on the total. ψ is set so the expected total
/// matches; when even ψ = 1 falls short both size rates are scaled up.
fn group_sizes<R: Rng + ?Sized>(spec: &TruthSpec, lek_rate: f64, individuals: u64, rng: &mut R) -> Result<Vec<u32>> {
    if individuals == 0 {
        return Ok(Vec::new());
    }
    let cap = (spec.m_super - M_MARGIN) as u64;
    let target = individuals as f64;
    let mut scale = 1.0;
    let mut psi = target / (cap as f64 * scaled_group_mean(spec, lek_rate, 1.0));
    if psi > 1.0 {
        psi = 1.0;
        let (mut lo, mut hi) = (1.0, 2.0);
        while cap as f64 * scaled_group_mean(spec, lek_rate, hi) < target {
            hi *= 2.0;
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if cap as f64 * scaled_group_mean(spec, lek_rate, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        scale = hi;
    }
    let draw_size = |rng: &mut R| -> Result<u64> {
        let rate = if rng.random::<f64>() < spec.p_omega { lek_rate } else { spec.lambda0 };
        sample_ztp(scale * rate, rng)
    };
    for _ in 0..ALLOCATION_TRIES {
        let groups = binomial(cap, psi, rng)?;
        if groups == 0 || groups > individuals {
            continue;
        }
        let mut sizes = Vec::with_capacity(groups as usize);
        let mut total = 0;
        for _ in 0..groups {
            let n = draw_size(rng)?;
            total += n;
            if total > individuals {
                break;
            }
            sizes.push(n as u32);
        }
        if total == individuals && sizes.len() == groups as usize {
            return Ok(sizes);
        }
    }
    log::warn!("no exact group configuration for {individuals} individuals; filling groups in turn");
    let mut sizes: Vec<u32> = Vec::new();
    let mut remaining = individuals;
    while remaining > 0 && (sizes.len() as u64) < cap {
        let n = draw_size(rng)?.min(remaining);
        sizes.push(n as u32);
        remaining -= n;
    }
    for _ in 0..remaining {
        let k = rng.random_range(0..sizes.len());
        sizes[k] += 1;
    }
    Ok(sizes)
}

/// Latent groups for one surveyed block-year, each detected by the
/// double-observer process.
fn allocate_aerial<R: Rng + ?Sized>(
    spec: &TruthSpec,
    designs: &Designs,
    region: usize,
    year: usize,
    density: f64,
    rng: &mut R,
) -> Result<Vec<LatentGroup>> {
    let individuals = (density * spec.aerial_area_km2).round() as u64;
    let lek_rate: f64 = designs.x_lambda[region][year].iter().zip(&spec.beta_lambda).map(|(x, b)| x * b).sum::<f64>().exp();
    let sizes = group_sizes(spec, lek_rate, individuals, rng)?;
    let x_rho = &designs.x_rho[region];
    sizes
        .into_iter()
        .map(|n| {
            let d = rng.random_range(0.0..spec.nu_d);
            let left = rng.random::<bool>();
            let b = visibility_b(d, left, true);
            let rho = logistic(detection_logit(&spec.beta_rho, x_rho, n, d)?);
            let v = binomial(b as u64, rho, rng)? as u8;
            Ok(LatentGroup { region, year, n, d, left, v })
        })
        .collect()
}

/// round(yS/2) males spread over about that many divided by the expected lek
/// size; given their total, iid Poisson lek sizes are uniform multinomial.
fn allocate_ground<R: Rng + ?Sized>(
    spec: &TruthSpec,
    designs: &Designs,
    region: usize,
    year: usize,
    density: f64,
    area: f64,
    rng: &mut R,
) -> Vec<u32> {
    let males = (density * area / 2.0).round() as usize;
    if males == 0 {
        return Vec::new();
    }
    let mu: f64 = designs.x_lambda[region][year].iter().zip(&spec.eta).map(|(x, b)| x * b).sum::<f64>().exp();
    let n_leks = stochastic_round(males as f64 / mu, rng).max(1);
    spread_uniformly(males, n_leks, rng)
}

/// Drop aerial cells in the listed year indices.
pub fn apply_scenario_mask(dataset: &AerialDataset, missing_years: &[usize]) -> AerialDataset {
    dataset.without_years(missing_years)
}

/// Table-level version: mark aerial cells of the listed calendar years
/// unsurveyed and remove their detections.
pub fn mask_aerial_years(tables: &SurveyTables, missing_years: &[i32]) -> SurveyTables {
    let aerial: std::collections::HashSet<&str> =
        tables.geometry.iter().filter(|g| g.kind == RegionKind::Aerial).map(|g| g.region_id.as_str()).collect();
    let mut out = tables.clone();
    for r in &mut out.survey_mask {
        if missing_years.contains(&r.year) && aerial.contains(r.region_id.as_str()) {
            r.surveyed = 0;
        }
    }
    out.detections.retain(|d| !missing_years.contains(&d.year));
    out
}

/// Adjacency of the lattice, for callers that only need the graph.
pub fn lattice_adjacency(n_side: usize) -> Result<Adjacency> {
    Adjacency::from_edges(n_side * n_side, &lattice_edges(n_side))
}
