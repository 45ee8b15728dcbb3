//! Spatial layout: aerial blocks and ground sites, lattice adjacency, and the
//! cached exponential correlation matrices indexed by range parameter.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{domain, validation, MeldError, Result};
use crate::stochastic::{Cholesky, SpdMatrix};

/// Undirected adjacency over aerial blocks, stored as sorted neighbour lists.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    neighbours: Vec<Vec<usize>>,
}

impl Adjacency {
    /// Build from an undirected edge list over `n` blocks. Duplicate edges are
    /// collapsed; self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbours = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(validation(format!("edge ({a}, {b}) references a block outside 0..{n}")));
            }
            if a == b {
                return Err(validation(format!("block {a} is listed as its own neighbour")));
            }
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
        for list in &mut neighbours {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Adjacency { neighbours })
    }

    /// Build from a dense 0/1 matrix, which must be symmetric with zero diagonal.
    pub fn from_matrix(m: &DMatrix<u8>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(MeldError::Dimension("adjacency matrix must be square".into()));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            if m[(i, i)] != 0 {
                return Err(validation(format!("adjacency diagonal at {i} is non-zero")));
            }
            for j in (i + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(validation(format!("adjacency not symmetric at ({i}, {j})")));
                }
                match m[(i, j)] {
                    0 => {}
                    1 => edges.push((i, j)),
                    v => return Err(validation(format!("adjacency entry ({i}, {j}) = {v} is not binary"))),
                }
            }
        }
        Adjacency::from_edges(n, &edges)
    }

    pub fn len(&self) -> usize {
        self.neighbours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbours.is_empty()
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbours[i].len()
    }

    pub fn to_matrix(&self) -> DMatrix<u8> {
        let n = self.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, list) in self.neighbours.iter().enumerate() {
            for &j in list {
                m[(i, j)] = 1;
            }
        }
        m
    }

    /// Number of connected components (breadth-first search).
    pub fn n_components(&self) -> usize {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut count = 0;
        let mut queue = std::collections::VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &self.neighbours[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }
}

/// Regions of the joint-response model: aerial blocks first, then ground sites.
#[derive(Clone, Debug)]
pub struct SurveyGeometry {
    pub region_ids: Vec<String>,
    pub n_aerial: usize,
    pub n_ground: usize,
    /// Projected coordinates in metres, aerial first.
    pub centroids: Vec<(f64, f64)>,
    pub adjacency: Adjacency,
    /// Effective surveyed area of one aerial block, km².
    pub block_area_aerial: f64,
    /// Area of each ground site, km².
    pub areas_ground: Vec<f64>,
}

impl SurveyGeometry {
    pub fn new(
        region_ids: Vec<String>,
        n_aerial: usize,
        centroids: Vec<(f64, f64)>,
        adjacency: Adjacency,
        block_area_aerial: f64,
        areas_ground: Vec<f64>,
    ) -> Result<Self> {
        let n = centroids.len();
        if region_ids.len() != n {
            return Err(MeldError::Dimension(format!("{} region ids for {n} centroids", region_ids.len())));
        }
        if n_aerial > n {
            return Err(MeldError::Dimension("more aerial blocks than regions".into()));
        }
        let n_ground = n - n_aerial;
        if adjacency.len() != n_aerial {
            return Err(MeldError::Dimension(format!(
                "adjacency covers {} blocks, geometry has {n_aerial}",
                adjacency.len()
            )));
        }
        if areas_ground.len() != n_ground {
            return Err(MeldError::Dimension(format!("{} ground areas for {n_ground} sites", areas_ground.len())));
        }
        if !(block_area_aerial > 0.0) {
            return Err(validation(format!("aerial block area must be positive, got {block_area_aerial}")));
        }
        if let Some((k, a)) = areas_ground.iter().enumerate().find(|(_, a)| !(**a > 0.0)) {
            return Err(validation(format!("ground site {} has non-positive area {a}", region_ids[n_aerial + k])));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (xi, yi) = centroids[i];
                let (xj, yj) = centroids[j];
                if ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt() <= 0.0 {
                    return Err(validation(format!(
                        "regions {} and {} share a centroid",
                        region_ids[i], region_ids[j]
                    )));
                }
            }
        }
        Ok(SurveyGeometry { region_ids, n_aerial, n_ground, centroids, adjacency, block_area_aerial, areas_ground })
    }

    pub fn n_regions(&self) -> usize {
        self.n_aerial + self.n_ground
    }

    pub fn is_aerial(&self, region: usize) -> bool {
        region < self.n_aerial
    }

    /// Area used to turn counts into densities, km².
    pub fn area(&self, region: usize) -> f64 {
        if self.is_aerial(region) {
            self.block_area_aerial
        } else {
            self.areas_ground[region - self.n_aerial]
        }
    }

    /// Euclidean distances between all region centroids, metres.
    pub fn distances(&self) -> DMatrix<f64> {
        let n = self.n_regions();
        DMatrix::from_fn(n, n, |i, j| {
            let (xi, yi) = self.centroids[i];
            let (xj, yj) = self.centroids[j];
            ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt()
        })
    }
}

/// Correlation matrix with entries exp(−d_ij / φ).
pub fn exp_correlation(distances: &DMatrix<f64>, phi: f64) -> Result<SpdMatrix> {
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(domain(format!("range parameter must be positive, got {phi}")));
    }
    let n = distances.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { (-distances[(i, j)] / phi).exp() });
    SpdMatrix::new(m)
}

/// Intrinsic CAR precision diag(A·1) − A. Singular by construction; never inverted.
pub fn icar_precision(adjacency: &Adjacency) -> Result<DMatrix<f64>> {
    if adjacency.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    if adjacency.n_components() != 1 {
        return Err(validation(format!(
            "aerial adjacency graph has {} connected components; the intrinsic CAR prior needs a connected lattice",
            adjacency.n_components()
        )));
    }
    let n = adjacency.len();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        q[(i, i)] = adjacency.degree(i) as f64;
        for &j in adjacency.neighbours(i) {
            q[(i, j)] = -1.0;
        }
    }
    Ok(q)
}

/// The default range support: 1, 1001, …, 99001 metres.
pub fn default_phi_support() -> Vec<f64> {
    (0..100).map(|k| 1.0 + 1000.0 * k as f64).collect()
}

/// Everything the samplers need about one support point.
#[derive(Clone, Debug)]
pub struct PhiEntry {
    pub phi: f64,
    pub cholesky: Cholesky,
    pub ln_det: f64,
    /// R(φ)⁻¹
    pub precision: DMatrix<f64>,
}

/// Correlation matrices precomputed over the discrete range support.
#[derive(Clone, Debug)]
pub struct PhiGrid {
    entries: Vec<PhiEntry>,
}

impl PhiGrid {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, index: usize) -> &PhiEntry {
        &self.entries[index]
    }

    pub fn support(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.phi).collect()
    }

    /// Index of the support point closest to `phi`.
    pub fn nearest_index(&self, phi: f64) -> usize {
        let mut best = 0;
        for (k, e) in self.entries.iter().enumerate() {
            if (e.phi - phi).abs() < (self.entries[best].phi - phi).abs() {
                best = k;
            }
        }
        best
    }
}

/// Factor the correlation matrix for every support value, in parallel.
pub fn build_phi_grid(geometry: &SurveyGeometry, support: &[f64]) -> Result<PhiGrid> {
    build_phi_grid_from_distances(&geometry.distances(), support)
}

pub fn build_phi_grid_from_distances(distances: &DMatrix<f64>, support: &[f64]) -> Result<PhiGrid> {
    if support.is_empty() {
        return Err(validation("range support is empty"));
    }
    if support.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(validation("range support must be strictly increasing"));
    }
    let n = distances.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if !(distances[(i, j)] > 0.0) {
                return Err(validation(format!("regions {i} and {j} are at zero distance")));
            }
        }
    }
    let entries: Result<Vec<PhiEntry>> = support
        .par_iter()
        .map(|&phi| {
            let correlation = exp_correlation(distances, phi)?;
            let cholesky = Cholesky::factor(correlation.matrix()).map_err(|e| match e {
                MeldError::NotPositiveDefinite { pivot, value } => MeldError::Numerical(format!(
                    "correlation matrix at range {phi} m is not positive definite (pivot {pivot} = {value:e})"
                )),
                other => other,
            })?;
            let ln_det = cholesky.ln_det();
            let precision = cholesky.inverse();
            Ok(PhiEntry { phi, cholesky, ln_det, precision })
        })
        .collect();
    Ok(PhiGrid { entries: entries? })
}

/// Rook-adjacency edges of an `n_side × n_side` lattice, row-major numbering.
pub fn lattice_edges(n_side: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for r in 0..n_side {
        for c in 0..n_side {
            let i = r * n_side + c;
            if c + 1 < n_side {
                edges.push((i, i + 1));
            }
            if r + 1 < n_side {
                edges.push((i, i + n_side));
            }
        }
    }
    edges
}
