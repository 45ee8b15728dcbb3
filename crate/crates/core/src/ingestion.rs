//! Input tables, covariate preparation and design assembly.
//!
//! Aerial blocks are numbered in geometry-file order, ground sites follow.
//! Years run from the first to the last year of the survey mask; the drought
//! series must also cover the year before the first.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adsm::{AerialCell, AerialDataset, ObservedGroup};
use crate::config::{DataPaths, ModelConfig, ALL_STATIC_COLUMNS};
use crate::error::{config, validation, MeldError, Result};
use crate::geometry::{Adjacency, SurveyGeometry};
use crate::nmix::{GroundCell, GroundDataset, Lek};

/// Tolerance on overlap weights summing to one per site.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    Aerial,
    Ground,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub region_id: String,
    pub kind: RegionKind,
    pub x_m: f64,
    pub y_m: f64,
    pub area_km2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyRecord {
    pub block_id_a: String,
    pub block_id_b: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovariateRecord {
    pub block_id: String,
    pub ecoregion: String,
    pub development: f64,
    pub crp: f64,
    pub grass_patch: f64,
    pub shrub: f64,
    pub woodland: f64,
}

impl CovariateRecord {
    pub fn value(&self, column: &str) -> Option<f64> {
        match column {
            "development" => Some(self.development),
            "crp" => Some(self.crp),
            "grass_patch" => Some(self.grass_patch),
            "shrub" => Some(self.shrub),
            "woodland" => Some(self.woodland),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdsiRecord {
    pub division_id: String,
    pub year: i32,
    pub pdsi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivisionRecord {
    pub block_id: String,
    pub division_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapRecord {
    pub site_id: String,
    pub block_id: String,
    pub weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub region_id: String,
    pub year: i32,
    pub group_id: u32,
    pub v: u8,
    pub d_m: f64,
    pub side: Side,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub region_id: String,
    pub year: i32,
    pub surveyed: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundCountRecord {
    pub site_id: String,
    pub year: i32,
    pub lek_id: String,
    pub visit: u32,
    pub males_flushed: u32,
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| validation(format!("cannot open {}: {e}", path.display())))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| validation(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Every input table in memory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurveyTables {
    pub geometry: Vec<GeometryRecord>,
    pub adjacency: Vec<AdjacencyRecord>,
    pub covariates: Vec<CovariateRecord>,
    pub pdsi: Vec<PdsiRecord>,
    pub divisions: Vec<DivisionRecord>,
    pub overlap: Vec<OverlapRecord>,
    pub detections: Vec<DetectionRecord>,
    pub survey_mask: Vec<MaskRecord>,
    pub ground_counts: Vec<GroundCountRecord>,
}

fn required<'p>(path: &'p Option<PathBuf>, name: &str) -> Result<&'p Path> {
    path.as_deref().ok_or_else(|| config(format!("data.{name} is not set")))
}

impl SurveyTables {
    pub fn read(paths: &DataPaths) -> Result<Self> {
        Ok(SurveyTables {
            geometry: read_csv(required(&paths.geometry, "geometry")?)?,
            adjacency: read_csv(required(&paths.adjacency, "adjacency")?)?,
            covariates: read_csv(required(&paths.covariates, "covariates")?)?,
            pdsi: read_csv(required(&paths.pdsi, "pdsi")?)?,
            divisions: read_csv(required(&paths.divisions, "divisions")?)?,
            overlap: read_csv(required(&paths.overlap, "overlap")?)?,
            detections: read_csv(required(&paths.detections, "detections")?)?,
            survey_mask: read_csv(required(&paths.survey_mask, "survey_mask")?)?,
            ground_counts: read_csv(required(&paths.ground_counts, "ground_counts")?)?,
        })
    }

    /// Write every table under its standard name in `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<DataPaths> {
        std::fs::create_dir_all(dir)?;
        let paths = DataPaths::in_dir(dir);
        let p = |o: &Option<PathBuf>| o.clone().expect("in_dir sets every path");
        write_csv(&p(&paths.geometry), &self.geometry)?;
        write_csv(&p(&paths.adjacency), &self.adjacency)?;
        write_csv(&p(&paths.covariates), &self.covariates)?;
        write_csv(&p(&paths.pdsi), &self.pdsi)?;
        write_csv(&p(&paths.divisions), &self.divisions)?;
        write_csv(&p(&paths.overlap), &self.overlap)?;
        write_csv(&p(&paths.detections), &self.detections)?;
        write_csv(&p(&paths.survey_mask), &self.survey_mask)?;
        write_csv(&p(&paths.ground_counts), &self.ground_counts)?;
        Ok(paths)
    }

    /// Calendar years spanned by the survey mask.
    pub fn years(&self) -> Result<Vec<i32>> {
        let lo = self.survey_mask.iter().map(|r| r.year).min();
        let hi = self.survey_mask.iter().map(|r| r.year).max();
        match (lo, hi) {
            (Some(lo), Some(hi)) => Ok((lo..=hi).collect()),
            _ => Err(validation("survey mask is empty")),
        }
    }
}

/// (x − mean)/sd with the population sd. A constant column is an error.
pub fn standardize(values: &[f64], column: &str) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(validation(format!("column '{column}' needs at least 2 values to standardize")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(validation(format!("column '{column}' is constant and cannot be standardized")));
    }
    Ok(values.iter().map(|v| (v - mean) / sd).collect())
}

/// Σ w_b x_b over the overlapping blocks of one site.
pub fn weight_ground_covariates(rows: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    if rows.is_empty() || rows.len() != weights.len() {
        return Err(validation("a ground site needs at least one overlapping block with one weight each"));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) || !weights.iter().any(|w| *w > 0.0) {
        return Err(validation("overlap weights must be non-negative with at least one positive"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(validation(format!("overlap weights sum to {total}, not 1")));
    }
    let p = rows[0].len();
    if rows.iter().any(|r| r.len() != p) {
        return Err(MeldError::Dimension("block covariate rows differ in length".into()));
    }
    let mut out = vec![0.0; p];
    for (r, w) in rows.iter().zip(weights) {
        for (o, x) in out.iter_mut().zip(r.iter()) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// Region layout from the geometry and adjacency tables.
pub fn build_geometry(tables: &SurveyTables, block_area_km2: f64) -> Result<SurveyGeometry> {
    let aerial: Vec<&GeometryRecord> = tables.geometry.iter().filter(|r| r.kind == RegionKind::Aerial).collect();
    let ground: Vec<&GeometryRecord> = tables.geometry.iter().filter(|r| r.kind == RegionKind::Ground).collect();
    let mut index = HashMap::new();
    for (k, r) in aerial.iter().chain(&ground).enumerate() {
        if index.insert(r.region_id.as_str(), k).is_some() {
            return Err(validation(format!("region id '{}' appears twice in the geometry table", r.region_id)));
        }
    }
    let mut edges = Vec::with_capacity(tables.adjacency.len());
    for e in &tables.adjacency {
        let a = block_index(&index, &e.block_id_a, aerial.len())?;
        let b = block_index(&index, &e.block_id_b, aerial.len())?;
        edges.push((a, b));
    }
    let adjacency = Adjacency::from_edges(aerial.len(), &edges)?;
    SurveyGeometry::new(
        aerial.iter().chain(&ground).map(|r| r.region_id.clone()).collect(),
        aerial.len(),
        aerial.iter().chain(&ground).map(|r| (r.x_m, r.y_m)).collect(),
        adjacency,
        block_area_km2,
        ground.iter().map(|r| r.area_km2).collect(),
    )
}

fn block_index(index: &HashMap<&str, usize>, id: &str, n_aerial: usize) -> Result<usize> {
    match index.get(id) {
        Some(&k) if k < n_aerial => Ok(k),
        Some(_) => Err(validation(format!("'{id}' is a ground site, not an aerial block"))),
        None => Err(validation(format!("block '{id}' is not in the geometry table"))),
    }
}

/// Block covariates aligned with the geometry, before design assembly.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateTable {
    pub ecoregions: Vec<String>,
    /// Ecoregion index of each aerial block.
    pub block_ecoregion: Vec<usize>,
    /// Raw static values, column name → one value per aerial block.
    pub static_raw: BTreeMap<String, Vec<f64>>,
    pub block_division: Vec<String>,
    pub pdsi: HashMap<(String, i32), f64>,
    /// Per ground site: (block index, weight).
    pub overlap: Vec<Vec<(usize, f64)>>,
}

pub fn covariate_table(tables: &SurveyTables, geometry: &SurveyGeometry) -> Result<CovariateTable> {
    let n_aerial = geometry.n_aerial;
    let block_pos: HashMap<&str, usize> =
        geometry.region_ids[..n_aerial].iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let site_pos: HashMap<&str, usize> =
        geometry.region_ids[n_aerial..].iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();

    let mut cov_rows: Vec<Option<&CovariateRecord>> = vec![None; n_aerial];
    for r in &tables.covariates {
        let k = *block_pos
            .get(r.block_id.as_str())
            .ok_or_else(|| validation(format!("covariate row for unknown block '{}'", r.block_id)))?;
        if cov_rows[k].replace(r).is_some() {
            return Err(validation(format!("block '{}' has two covariate rows", r.block_id)));
        }
    }
    let missing: Vec<&str> =
        (0..n_aerial).filter(|&k| cov_rows[k].is_none()).map(|k| geometry.region_ids[k].as_str()).collect();
    if !missing.is_empty() {
        return Err(validation(format!("blocks without covariates: {}", missing.join(", "))));
    }
    let cov_rows: Vec<&CovariateRecord> = cov_rows.into_iter().flatten().collect();
    for r in &cov_rows {
        for c in ALL_STATIC_COLUMNS {
            if !r.value(c).is_some_and(f64::is_finite) {
                return Err(validation(format!("block '{}' has a non-finite {c} value", r.block_id)));
            }
        }
    }

    let ecoregions: Vec<String> =
        cov_rows.iter().map(|r| r.ecoregion.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let block_ecoregion =
        cov_rows.iter().map(|r| ecoregions.iter().position(|e| *e == r.ecoregion).expect("label present")).collect();
    let static_raw = ALL_STATIC_COLUMNS
        .iter()
        .map(|c| (c.to_string(), cov_rows.iter().map(|r| r.value(c).expect("known column")).collect()))
        .collect();

    let mut block_division: Vec<Option<String>> = vec![None; n_aerial];
    for r in &tables.divisions {
        let k = *block_pos
            .get(r.block_id.as_str())
            .ok_or_else(|| validation(format!("division row for unknown block '{}'", r.block_id)))?;
        if block_division[k].replace(r.division_id.clone()).is_some() {
            return Err(validation(format!("block '{}' is assigned to two divisions", r.block_id)));
        }
    }
    let missing: Vec<&str> =
        (0..n_aerial).filter(|&k| block_division[k].is_none()).map(|k| geometry.region_ids[k].as_str()).collect();
    if !missing.is_empty() {
        return Err(validation(format!("blocks without a climate division: {}", missing.join(", "))));
    }

    let mut pdsi = HashMap::new();
    for r in &tables.pdsi {
        if !r.pdsi.is_finite() {
            return Err(validation(format!("non-finite drought index for {} {}", r.division_id, r.year)));
        }
        if pdsi.insert((r.division_id.clone(), r.year), r.pdsi).is_some() {
            return Err(validation(format!("duplicate drought index for {} {}", r.division_id, r.year)));
        }
    }

    let mut overlap = vec![Vec::new(); geometry.n_ground];
    for r in &tables.overlap {
        let s = *site_pos
            .get(r.site_id.as_str())
            .ok_or_else(|| validation(format!("overlap row for unknown site '{}'", r.site_id)))?;
        let b = *block_pos
            .get(r.block_id.as_str())
            .ok_or_else(|| validation(format!("overlap row for unknown block '{}'", r.block_id)))?;
        overlap[s].push((b, r.weight));
    }
    for (s, list) in overlap.iter().enumerate() {
        let total: f64 = list.iter().map(|(_, w)| w).sum();
        if list.is_empty() || (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(validation(format!(
                "overlap weights of site '{}' sum to {total}, not 1",
                geometry.region_ids[n_aerial + s]
            )));
        }
    }

    Ok(CovariateTable {
        ecoregions,
        block_ecoregion,
        static_raw,
        block_division: block_division.into_iter().flatten().collect(),
        pdsi,
        overlap,
    })
}

/// Design rows for every region. Ground rows are overlap-weighted block rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Designs {
    pub years: Vec<i32>,
    /// Names of the occupancy / group-size / abundance columns.
    pub lambda_columns: Vec<String>,
    /// Names of the initial-state columns.
    pub x0_columns: Vec<String>,
    /// Ecoregion indicators per region.
    pub x_rho: Vec<Vec<f64>>,
    /// Per region, per year.
    pub x_lambda: Vec<Vec<Vec<f64>>>,
    /// Regions × initial-state columns.
    pub x0: DMatrix<f64>,
    /// Regions × years; column t holds the drought index of the previous year.
    pub w_lag: DMatrix<f64>,
}

fn pdsi_lookup(table: &CovariateTable, division: &str, year: i32, gaps: &mut BTreeSet<(String, i32)>) -> f64 {
    match table.pdsi.get(&(division.to_string(), year)) {
        Some(v) => *v,
        None => {
            gaps.insert((division.to_string(), year));
            f64::NAN
        }
    }
}

/// Ecoregion indicators + standardized static columns (+ drought index for
/// the occupancy/size rows); the lagged drought index feeds the dynamics.
pub fn assemble_designs(
    table: &CovariateTable,
    geometry: &SurveyGeometry,
    years: &[i32],
    static_columns: &[String],
) -> Result<Designs> {
    if years.is_empty() {
        return Err(validation("no years to model"));
    }
    let n_aerial = geometry.n_aerial;
    let n = geometry.n_regions();
    let n_eco = table.ecoregions.len();
    let mut statics = Vec::with_capacity(static_columns.len());
    for c in static_columns {
        let raw = table.static_raw.get(c).ok_or_else(|| config(format!("unknown static covariate column '{c}'")))?;
        statics.push(standardize(raw, c)?);
    }
    let mut gaps = BTreeSet::new();
    // Block rows: eco one-hot, statics; then drought per year (current and previous).
    let block_static: Vec<Vec<f64>> = (0..n_aerial)
        .map(|b| {
            let mut row = vec![0.0; n_eco];
            row[table.block_ecoregion[b]] = 1.0;
            row.extend(statics.iter().map(|col| col[b]));
            row
        })
        .collect();
    let block_pdsi: Vec<Vec<f64>> = (0..n_aerial)
        .map(|b| {
            let first = years[0] - 1;
            (first..=*years.last().expect("non-empty")).map(|y| pdsi_lookup(table, &table.block_division[b], y, &mut gaps)).collect()
        })
        .collect();
    if !gaps.is_empty() {
        let list: Vec<String> = gaps.iter().map(|(d, y)| format!("{d}/{y}")).collect();
        return Err(validation(format!("drought index missing for division/year: {}", list.join(", "))));
    }

    let mut static_rows = block_static.clone();
    let mut pdsi_rows = block_pdsi.clone();
    for list in &table.overlap {
        let weights: Vec<f64> = list.iter().map(|(_, w)| *w).collect();
        let s_rows: Vec<&[f64]> = list.iter().map(|(b, _)| block_static[*b].as_slice()).collect();
        let p_rows: Vec<&[f64]> = list.iter().map(|(b, _)| block_pdsi[*b].as_slice()).collect();
        static_rows.push(weight_ground_covariates(&s_rows, &weights)?);
        pdsi_rows.push(weight_ground_covariates(&p_rows, &weights)?);
    }

    let x_rho = static_rows.iter().map(|r| r[..n_eco].to_vec()).collect();
    let x_lambda = (0..n)
        .map(|i| {
            (0..years.len())
                .map(|t| {
                    let mut row = static_rows[i].clone();
                    row.push(pdsi_rows[i][t + 1]);
                    row
                })
                .collect()
        })
        .collect();
    let q = n_eco + statics.len();
    let x0 = DMatrix::from_fn(n, q, |i, k| static_rows[i][k]);
    let w_lag = DMatrix::from_fn(n, years.len(), |i, t| pdsi_rows[i][t]);

    let mut x0_columns: Vec<String> = table.ecoregions.iter().map(|e| format!("eco_{e}")).collect();
    x0_columns.extend(static_columns.iter().cloned());
    let mut lambda_columns = x0_columns.clone();
    lambda_columns.push("pdsi".into());
    Ok(Designs { years: years.to_vec(), lambda_columns, x0_columns, x_rho, x_lambda, x0, w_lag })
}

/// Surveyed flag for every region-year; the mask must be complete.
pub fn survey_flags(tables: &SurveyTables, geometry: &SurveyGeometry, years: &[i32]) -> Result<Vec<Vec<bool>>> {
    let pos: HashMap<&str, usize> = geometry.region_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let mut flags: Vec<Vec<Option<bool>>> = vec![vec![None; years.len()]; geometry.n_regions()];
    for r in &tables.survey_mask {
        let i = *pos
            .get(r.region_id.as_str())
            .ok_or_else(|| validation(format!("survey mask names unknown region '{}'", r.region_id)))?;
        let t = (r.year - years[0]) as usize;
        if r.surveyed > 1 {
            return Err(validation(format!("survey flag for {} {} must be 0 or 1", r.region_id, r.year)));
        }
        if flags[i][t].replace(r.surveyed == 1).is_some() {
            return Err(validation(format!("survey mask lists {} {} twice", r.region_id, r.year)));
        }
    }
    let mut gaps = Vec::new();
    for (i, row) in flags.iter().enumerate() {
        for (t, f) in row.iter().enumerate() {
            if f.is_none() {
                gaps.push(format!("{}/{}", geometry.region_ids[i], years[t]));
            }
        }
    }
    if !gaps.is_empty() {
        let shown = gaps.len().min(20);
        return Err(validation(format!(
            "survey mask missing {} region-years: {}{}",
            gaps.len(),
            gaps[..shown].join(", "),
            if gaps.len() > shown { ", …" } else { "" }
        )));
    }
    Ok(flags.into_iter().map(|row| row.into_iter().flatten().collect()).collect())
}

/// Aerial and ground datasets from the detection and count tables.
pub fn build_datasets(
    tables: &SurveyTables,
    geometry: &SurveyGeometry,
    designs: &Designs,
    model: &ModelConfig,
) -> Result<(AerialDataset, GroundDataset)> {
    let years = &designs.years;
    let n_years = years.len();
    let n = geometry.n_regions();
    let flags = survey_flags(tables, geometry, years)?;
    let pos: HashMap<&str, usize> = geometry.region_ids.iter().enumerate().map(|(k, id)| (id.as_str(), k)).collect();
    let year_index = |y: i32, what: &str| -> Result<usize> {
        if y < years[0] || y > *years.last().expect("non-empty") {
            Err(validation(format!("{what} year {y} is outside the surveyed years")))
        } else {
            Ok((y - years[0]) as usize)
        }
    };

    let mut groups: BTreeMap<(usize, usize), BTreeMap<u32, ObservedGroup>> = BTreeMap::new();
    for r in &tables.detections {
        let i = *pos
            .get(r.region_id.as_str())
            .ok_or_else(|| validation(format!("detection in unknown region '{}'", r.region_id)))?;
        if !geometry.is_aerial(i) {
            return Err(validation(format!("detection recorded at ground site '{}'", r.region_id)));
        }
        let t = year_index(r.year, "detection")?;
        if !flags[i][t] {
            return Err(validation(format!("detection at {} {} but the cell is not surveyed", r.region_id, r.year)));
        }
        let g = ObservedGroup { v: r.v, d: r.d_m, left: r.side == Side::Left, count: r.count };
        if groups.entry((i, t)).or_default().insert(r.group_id, g).is_some() {
            return Err(validation(format!("group {} listed twice at {} {}", r.group_id, r.region_id, r.year)));
        }
    }
    let mut aerial_cells = Vec::new();
    for t in 0..n_years {
        for i in 0..geometry.n_aerial {
            if flags[i][t] {
                aerial_cells.push(AerialCell {
                    region: i,
                    year: t,
                    groups: groups.remove(&(i, t)).map(|m| m.into_values().collect()).unwrap_or_default(),
                    x_rho: designs.x_rho[i].clone(),
                    x_lambda: designs.x_lambda[i][t].clone(),
                });
            }
        }
    }
    let aerial = AerialDataset::new(n, n_years, aerial_cells, model.m_super, model.nu_d, model.aerial_area_km2)?;

    let mut leks: BTreeMap<(usize, usize), BTreeMap<&str, BTreeMap<u32, u32>>> = BTreeMap::new();
    for r in &tables.ground_counts {
        let i = *pos
            .get(r.site_id.as_str())
            .ok_or_else(|| validation(format!("ground count at unknown site '{}'", r.site_id)))?;
        if geometry.is_aerial(i) {
            return Err(validation(format!("ground count recorded at aerial block '{}'", r.site_id)));
        }
        let t = year_index(r.year, "ground count")?;
        if !flags[i][t] {
            return Err(validation(format!("ground count at {} {} but the cell is not surveyed", r.site_id, r.year)));
        }
        let visits = leks.entry((i, t)).or_default().entry(r.lek_id.as_str()).or_default();
        if visits.insert(r.visit, r.males_flushed).is_some() {
            return Err(validation(format!(
                "visit {} of lek {} at {} {} listed twice",
                r.visit, r.lek_id, r.site_id, r.year
            )));
        }
    }
    let mut ground_cells = Vec::new();
    for t in 0..n_years {
        for i in geometry.n_aerial..n {
            if flags[i][t] {
                let cell_leks = leks
                    .remove(&(i, t))
                    .map(|m| m.into_values().map(|v| Lek { counts: v.into_values().collect() }).collect())
                    .unwrap_or_default();
                ground_cells.push(GroundCell {
                    region: i,
                    year: t,
                    leks: cell_leks,
                    w: designs.x_lambda[i][t].clone(),
                    area_km2: geometry.area(i),
                });
            }
        }
    }
    let ground = GroundDataset::new(n, n_years, ground_cells)?;
    Ok((aerial, ground))
}

/// Everything a fit needs, prepared from the raw tables.
#[derive(Clone, Debug)]
pub struct FitInputs {
    pub geometry: SurveyGeometry,
    pub designs: Designs,
    pub aerial: AerialDataset,
    pub ground: GroundDataset,
}

pub fn prepare_inputs(tables: &SurveyTables, model: &ModelConfig) -> Result<FitInputs> {
    let geometry = build_geometry(tables, model.aerial_area_km2)?;
    let table = covariate_table(tables, &geometry)?;
    let years = tables.years()?;
    let designs = assemble_designs(&table, &geometry, &years, &model.static_columns)?;
    let (aerial, ground) = build_datasets(tables, &geometry, &designs, model)?;
    Ok(FitInputs { geometry, designs, aerial, ground })
}
