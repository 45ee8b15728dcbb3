//! Stage-1 density draws per surveyed region-year: the quantity handed from
//! the survey submodels to the joint spatio-temporal model.

use std::collections::BTreeMap;

use crate::error::{MeldError, Result};
use crate::mcmc::Trace;

/// Retained density draws (individuals per km²) keyed by (region, year index).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensityReservoir {
    pub n_regions: usize,
    pub n_years: usize,
    cells: BTreeMap<(usize, usize), Vec<f64>>,
}

impl DensityReservoir {
    pub fn new(n_regions: usize, n_years: usize) -> Self {
        DensityReservoir { n_regions, n_years, cells: BTreeMap::new() }
    }

    /// Register a surveyed cell with no draws yet.
    pub fn add_cell(&mut self, region: usize, year: usize) {
        self.cells.entry((region, year)).or_default();
    }

    pub fn push(&mut self, region: usize, year: usize, density: f64) {
        debug_assert!(density >= 0.0);
        self.cells.entry((region, year)).or_default().push(density);
    }

    pub fn draws(&self, region: usize, year: usize) -> Option<&[f64]> {
        self.cells.get(&(region, year)).map(|v| v.as_slice())
    }

    pub fn is_surveyed(&self, region: usize, year: usize) -> bool {
        self.cells.contains_key(&(region, year))
    }

    pub fn cells(&self) -> impl Iterator<Item = ((usize, usize), &[f64])> {
        self.cells.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Smallest per-cell draw count, or `None` when there are no cells.
    pub fn min_draws(&self) -> Option<usize> {
        self.cells.values().map(|v| v.len()).min()
    }

    /// Append another reservoir's draws (e.g. from a second chain).
    pub fn merge(&mut self, other: &DensityReservoir) -> Result<()> {
        if other.n_regions != self.n_regions || other.n_years != self.n_years {
            return Err(MeldError::Dimension("cannot merge reservoirs of different shape".into()));
        }
        for (k, v) in &other.cells {
            self.cells.entry(*k).or_default().extend_from_slice(v);
        }
        Ok(())
    }

    /// Drop every cell of the listed years.
    pub fn without_years(&self, years: &[usize]) -> DensityReservoir {
        DensityReservoir {
            n_regions: self.n_regions,
            n_years: self.n_years,
            cells: self.cells.iter().filter(|((_, t), _)| !years.contains(t)).map(|(k, v)| (*k, v.clone())).collect(),
        }
    }

    pub fn mean(&self, region: usize, year: usize) -> Option<f64> {
        let d = self.draws(region, year)?;
        (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
    }

    pub fn sd(&self, region: usize, year: usize) -> Option<f64> {
        let d = self.draws(region, year)?;
        if d.len() < 2 {
            return None;
        }
        let m = d.iter().sum::<f64>() / d.len() as f64;
        Some((d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt())
    }
}

/// Result of one stage-1 chain.
#[derive(Clone, Debug)]
pub struct Stage1Output {
    pub reservoir: DensityReservoir,
    pub trace: Trace,
    /// Post-burn-in acceptance rate of every random-walk coordinate.
    pub acceptance: Vec<(String, f64)>,
}

/// Aerial and ground reservoirs together, in joint-model region numbering.
#[derive(Clone, Debug, Default)]
pub struct ReservoirHandle {
    pub aerial: DensityReservoir,
    pub ground: DensityReservoir,
}

impl ReservoirHandle {
    pub fn draws(&self, region: usize, year: usize) -> Option<&[f64]> {
        self.aerial.draws(region, year).or_else(|| self.ground.draws(region, year))
    }

    /// Every surveyed cell must carry at least `floor` draws.
    pub fn check_floor(&self, floor: usize) -> Result<()> {
        for res in [&self.aerial, &self.ground] {
            for ((i, t), d) in res.cells() {
                if d.is_empty() {
                    return Err(MeldError::Config(format!("reservoir for region {i}, year {t} is empty")));
                }
                if d.len() < floor {
                    return Err(MeldError::Config(format!(
                        "reservoir for region {i}, year {t} has {} draws, fewer than the floor {floor}",
                        d.len()
                    )));
                }
            }
        }
        Ok(())
    }
}
