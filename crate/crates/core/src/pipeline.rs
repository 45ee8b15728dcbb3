//! Staged fitting, persistence of fits, prediction, scenario refits and
//! diagnosis. The command-line subcommands are thin wrappers over these.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adsm::{run_adsm, AdsmPriors};
use crate::config::{DataPaths, FitConfig};
use crate::diagnostics::{diagnostics_table, summarize, DiagnosticsRow};
use crate::error::{config, validation, MeldError, Result};
use crate::geometry::build_phi_grid;
use crate::ingestion::{prepare_inputs, read_csv, write_csv, FitInputs, SurveyTables};
use crate::mcmc::Trace;
use crate::nmix::{run_nmix, NmixPriors};
use crate::persist::{extension, read_cell_draws, read_trace, write_cell_draws, write_trace, Manifest};
use crate::reservoir::{DensityReservoir, ReservoirHandle, Stage1Output};
use crate::rng::RngStream;
use crate::simulator::{mask_aerial_years, simulate_surveys, TruthSpec, M_MARGIN};
use crate::sttm::{observed_cells, run_sttm, SttmModel, SttmPriors, Stage2Output};

/// Equal-tailed interval level used for reported summaries.
pub const INTERVAL_LEVEL: f64 = 0.9;

/// Stage-1 output of one chain; a submodel without data is skipped.
#[derive(Clone, Debug)]
pub struct Stage1Chain {
    pub aerial: Option<Stage1Output>,
    pub ground: Option<Stage1Output>,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub stage1: Vec<Stage1Chain>,
    /// Reservoirs pooled over stage-1 chains.
    pub reservoirs: ReservoirHandle,
    pub stage2: Vec<Stage2Output>,
    pub diagnostics: Option<Vec<DiagnosticsRow>>,
}

fn stream(chain: usize, part: u64) -> u64 {
    3 * chain as u64 + part
}

/// Run `f` on a pool of `threads` workers, or on the global pool for 0.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| MeldError::Internal(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn run_stage1_chain(inputs: &FitInputs, cfg: &FitConfig, chain: usize) -> Result<Stage1Chain> {
    let seed = cfg.run.seed;
    let (aerial, ground) = rayon::join(
        || -> Result<Option<Stage1Output>> {
            if inputs.aerial.cells.is_empty() {
                return Ok(None);
            }
            let mut rng = RngStream::new(seed, stream(chain, 0));
            run_adsm(&inputs.aerial, &AdsmPriors::from(&cfg.priors), &cfg.stage1, &mut rng).map(Some)
        },
        || -> Result<Option<Stage1Output>> {
            if inputs.ground.cells.is_empty() {
                return Ok(None);
            }
            let mut rng = RngStream::new(seed, stream(chain, 1));
            run_nmix(&inputs.ground, &NmixPriors::from(&cfg.priors), cfg.model.n_proposal, &cfg.stage1, &mut rng).map(Some)
        },
    );
    Ok(Stage1Chain { aerial: aerial?, ground: ground? })
}

/// Pool each submodel's reservoirs over chains.
pub fn pool_reservoirs(chains: &[Stage1Chain], n_regions: usize, n_years: usize) -> Result<ReservoirHandle> {
    let mut handle = ReservoirHandle {
        aerial: DensityReservoir::new(n_regions, n_years),
        ground: DensityReservoir::new(n_regions, n_years),
    };
    for c in chains {
        if let Some(a) = &c.aerial {
            handle.aerial.merge(&a.reservoir)?;
        }
        if let Some(g) = &c.ground {
            handle.ground.merge(&g.reservoir)?;
        }
    }
    Ok(handle)
}

fn stage1_diagnostics(
    chains: &[Stage1Chain],
    pick: impl Fn(&Stage1Chain) -> Option<&Stage1Output>,
) -> Result<Vec<DiagnosticsRow>> {
    let outs: Vec<&Stage1Output> = chains.iter().filter_map(pick).collect();
    if outs.len() < chains.len() || outs.is_empty() {
        return Ok(Vec::new());
    }
    let traces: Vec<Trace> = outs.iter().map(|o| o.trace.clone()).collect();
    let acc: Vec<Vec<(String, f64)>> = outs.iter().map(|o| o.acceptance.clone()).collect();
    diagnostics_table(&traces, &acc, INTERVAL_LEVEL)
}

/// Both stages for every chain: stage-1 submodels and chains concurrently,
/// then stage 2 once every stage-1 chain has finished.
pub fn fit(inputs: &FitInputs, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    inputs.aerial.check_m_margin(M_MARGIN)?;
    let n = inputs.geometry.n_regions();
    let n_years = inputs.designs.years.len();
    let chains = cfg.run.chains;

    let stage1: Vec<Stage1Chain> =
        (0..chains).into_par_iter().map(|c| run_stage1_chain(inputs, cfg, c)).collect::<Result<_>>()?;
    let reservoirs = pool_reservoirs(&stage1, n, n_years)?;
    reservoirs.check_floor(cfg.stage2.min_reservoir)?;

    let grid = build_phi_grid(&inputs.geometry, &cfg.model.phi_support)?;
    let model = SttmModel::new(
        &grid,
        &inputs.designs.x0,
        &inputs.designs.w_lag,
        inputs.geometry.n_aerial,
        cfg.model.tau_structure,
        &inputs.geometry.adjacency,
        SttmPriors::from(&cfg.priors),
        observed_cells(&reservoirs, n, n_years),
    )?;
    let stage2: Vec<Stage2Output> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(cfg.run.seed, stream(c, 2));
            run_sttm(&model, &cfg.stage2, &mut rng)
        })
        .collect::<Result<_>>()?;

    let diagnostics = if cfg.run.diagnostics {
        let mut rows = stage1_diagnostics(&stage1, |c| c.aerial.as_ref())?;
        rows.extend(stage1_diagnostics(&stage1, |c| c.ground.as_ref())?);
        let traces: Vec<Trace> = stage2.iter().map(|o| o.trace.clone()).collect();
        let acc: Vec<Vec<(String, f64)>> = stage2.iter().map(|o| vec![("phi".to_string(), o.phi_acceptance)]).collect();
        rows.extend(diagnostics_table(&traces, &acc, INTERVAL_LEVEL)?);
        Some(rows)
    } else {
        None
    };
    Ok(FitResult { stage1, reservoirs, stage2, diagnostics })
}

/// Posterior mean of every cell from draws pooled over chains, in `t * n + i` order.
pub fn pooled_means(outputs: &[Stage2Output]) -> Result<Vec<f64>> {
    let first = outputs.first().ok_or_else(|| MeldError::NoDraws("no stage-2 chains".into()))?;
    let width = first.n_regions * first.n_years;
    let mut sum = vec![0.0; width];
    let mut count = 0usize;
    for o in outputs {
        for row in &o.y_draws {
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(MeldError::NoDraws("stage 2 retained no draws".into()));
    }
    Ok(sum.into_iter().map(|s| s / count as f64).collect())
}

fn opt_rate(r: f64) -> Option<f64> {
    r.is_finite().then_some(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub stage1_acceptance: Vec<(String, Option<f64>)>,
    pub meld_acceptance_aerial: Option<f64>,
    pub meld_acceptance_ground: Option<f64>,
    pub phi_acceptance: Option<f64>,
    pub invariant_violations: usize,
}

/// Run-level facts that are not draws.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub region_ids: Vec<String>,
    pub n_aerial: usize,
    pub years: Vec<i32>,
    pub reservoir_cells_aerial: usize,
    pub reservoir_cells_ground: usize,
    pub min_reservoir_draws: Option<usize>,
    pub chains: Vec<ChainSummary>,
}

impl FitSummary {
    pub fn new(inputs: &FitInputs, result: &FitResult) -> Self {
        let chains = result
            .stage1
            .iter()
            .zip(&result.stage2)
            .enumerate()
            .map(|(c, (s1, s2))| {
                let stage1_acceptance = s1
                    .aerial
                    .iter()
                    .chain(s1.ground.iter())
                    .flat_map(|o| o.acceptance.iter().map(|(k, v)| (k.clone(), opt_rate(*v))))
                    .collect();
                ChainSummary {
                    chain: c,
                    stage1_acceptance,
                    meld_acceptance_aerial: opt_rate(s2.meld_acceptance_aerial),
                    meld_acceptance_ground: opt_rate(s2.meld_acceptance_ground),
                    phi_acceptance: opt_rate(s2.phi_acceptance),
                    invariant_violations: s2.invariant_violations,
                }
            })
            .collect();
        let min_a = result.reservoirs.aerial.min_draws();
        let min_g = result.reservoirs.ground.min_draws();
        FitSummary {
            region_ids: inputs.geometry.region_ids.clone(),
            n_aerial: inputs.geometry.n_aerial,
            years: inputs.designs.years.clone(),
            reservoir_cells_aerial: result.reservoirs.aerial.n_cells(),
            reservoir_cells_ground: result.reservoirs.ground.n_cells(),
            min_reservoir_draws: match (min_a, min_g) {
                (Some(a), Some(g)) => Some(a.min(g)),
                (a, g) => a.or(g),
            },
            chains,
        }
    }
}

fn reservoir_rows(res: &DensityReservoir, years: &[i32]) -> Vec<(u64, usize, i32, f64)> {
    res.cells()
        .flat_map(|((i, t), d)| d.iter().enumerate().map(move |(k, &v)| (k as u64, i, years[t], v)))
        .collect()
}

fn density_rows(out: &Stage2Output, years: &[i32]) -> Vec<(u64, usize, i32, f64)> {
    let n = out.n_regions;
    out.trace
        .iterations
        .iter()
        .zip(&out.y_draws)
        .flat_map(|(&it, row)| row.iter().enumerate().map(move |(k, &v)| (it, k % n, years[k / n], v)))
        .collect()
}

pub const SUMMARY_FILE: &str = "fit_summary.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

pub fn stage2_density_file(chain: usize, ext: &str) -> String {
    format!("stage2_density_chain{chain}.{ext}")
}

pub fn stage2_parameter_file(chain: usize, ext: &str) -> String {
    format!("stage2_parameters_chain{chain}.{ext}")
}

/// Write every output of a fit into `dir`, recording each in the manifest.
pub fn write_fit(dir: &Path, inputs: &FitInputs, cfg: &FitConfig, result: &FitResult, manifest: &mut Manifest) -> Result<()> {
    let format = cfg.run.draw_format;
    let ext = extension(format);
    let ids = &inputs.geometry.region_ids;
    let years = &inputs.designs.years;
    let mut written: Vec<PathBuf> = Vec::new();

    for (name, res) in [("aerial", &result.reservoirs.aerial), ("ground", &result.reservoirs.ground)] {
        let path = dir.join(format!("reservoir_{name}.{ext}"));
        write_cell_draws(&path, format, ids, &reservoir_rows(res, years))?;
        written.push(path);
    }
    for (c, s1) in result.stage1.iter().enumerate() {
        for (name, out) in [("aerial", &s1.aerial), ("ground", &s1.ground)] {
            if let Some(o) = out {
                let path = dir.join(format!("stage1_{name}_chain{c}.{ext}"));
                write_trace(&path, format, &o.trace)?;
                written.push(path);
            }
        }
    }
    for (c, s2) in result.stage2.iter().enumerate() {
        let path = dir.join(stage2_parameter_file(c, ext));
        write_trace(&path, format, &s2.trace)?;
        written.push(path);
        let path = dir.join(stage2_density_file(c, ext));
        write_cell_draws(&path, format, ids, &density_rows(s2, years))?;
        written.push(path);
    }
    if let Some(rows) = &result.diagnostics {
        let path = dir.join(DIAGNOSTICS_FILE);
        write_csv(&path, rows)?;
        written.push(path);
    }
    let path = dir.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&FitSummary::new(inputs, result))?)?;
    written.push(path);
    for p in &written {
        manifest.add_output(dir, p)?;
    }
    Ok(())
}

fn data_files(paths: &DataPaths) -> Vec<&Path> {
    [
        &paths.geometry,
        &paths.adjacency,
        &paths.covariates,
        &paths.pdsi,
        &paths.divisions,
        &paths.overlap,
        &paths.detections,
        &paths.survey_mask,
        &paths.ground_counts,
    ]
    .into_iter()
    .flatten()
    .map(PathBuf::as_path)
    .collect()
}

/// Read, fit and persist. The manifest is written first with `complete`
/// unset and rewritten once every output exists.
pub fn cmd_fit(cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let dir = &cfg.run.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut manifest = Manifest::new("fit", cfg.run.seed, cfg.run.chains, cfg.to_toml_string());
    for p in data_files(&cfg.data) {
        if p.exists() {
            manifest.add_input(p)?;
        }
    }
    manifest.write(dir)?;
    let tables = SurveyTables::read(&cfg.data)?;
    let inputs = prepare_inputs(&tables, &cfg.model)?;
    let result = with_threads(cfg.run.threads, || fit(&inputs, cfg))??;
    write_fit(dir, &inputs, cfg, &result, &mut manifest)?;
    manifest.complete = true;
    manifest.write(dir)?;
    log::info!("fit written to {}", dir.display());
    Ok(result)
}

/// Simulate a dataset and write its tables, truth record and a ready-to-run
/// fit configuration into `dir`.
pub fn cmd_simulate(spec: &TruthSpec, seed: u64, dir: &Path) -> Result<PathBuf> {
    let spec = spec.resolved()?;
    std::fs::create_dir_all(dir)?;
    let mut rng = RngStream::new(seed, 0);
    let sim = simulate_surveys(&spec, &mut rng)?;
    let data_dir = dir.join("data");
    sim.tables.write_dir(&data_dir)?;
    let truth_path = dir.join("truth.json");
    std::fs::write(&truth_path, serde_json::to_string_pretty(&sim.truth)?)?;

    let mut cfg = FitConfig::default();
    cfg.data = DataPaths::in_dir(Path::new("data"));
    cfg.model.m_super = spec.m_super;
    cfg.model.nu_d = spec.nu_d;
    cfg.model.aerial_area_km2 = spec.aerial_area_km2;
    cfg.model.tau_structure = spec.tau_structure;
    cfg.model.static_columns = spec.static_columns.clone();
    cfg.model.phi_support = spec.phi_support.clone();
    cfg.run.seed = seed;
    cfg.run.out_dir = PathBuf::from("fit");
    let cfg_path = dir.join("fit.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string())?;

    let mut manifest = Manifest::new("simulate", seed, 0, toml::to_string(&spec).map_err(|e| MeldError::Internal(e.to_string()))?);
    for p in data_files(&DataPaths::in_dir(&data_dir)) {
        manifest.add_output(dir, p)?;
    }
    manifest.add_output(dir, &truth_path)?;
    manifest.add_output(dir, &cfg_path)?;
    manifest.complete = true;
    manifest.write(dir)?;
    Ok(cfg_path)
}

/// Stage-2 density draws of a persisted fit, pooled over chains.
#[derive(Clone, Debug)]
pub struct StoredDraws {
    pub summary: FitSummary,
    /// Keyed by (region_id, year), in file order.
    pub cells: BTreeMap<(String, i32), Vec<f64>>,
}

/// A completed fit directory: manifest, summary and every density file.
pub fn load_fit(dir: &Path) -> Result<(Manifest, StoredDraws)> {
    let manifest = Manifest::read(dir)?;
    if manifest.command != "fit" {
        return Err(config(format!("{} holds a '{}' run, not a fit", dir.display(), manifest.command)));
    }
    if !manifest.complete {
        return Err(config(format!("fit at {} is incomplete", dir.display())));
    }
    let summary: FitSummary = serde_json::from_str(&std::fs::read_to_string(dir.join(SUMMARY_FILE))?)?;
    let mut cells: BTreeMap<(String, i32), Vec<f64>> = BTreeMap::new();
    for f in manifest.outputs.iter().filter(|f| f.path.starts_with("stage2_density_chain")) {
        for d in read_cell_draws(&dir.join(&f.path))? {
            cells.entry((d.region_id, d.year)).or_default().push(d.density);
        }
    }
    if cells.is_empty() {
        return Err(MeldError::NoDraws(format!("fit at {} has no stage-2 density draws", dir.display())));
    }
    Ok((manifest, StoredDraws { summary, cells }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetCell {
    pub region_id: String,
    pub year: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub region_id: String,
    pub year: i32,
    pub mean: f64,
    pub sd: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_zero: f64,
    pub surveyed: bool,
}

/// Summaries of the stage-2 draws at the requested cells, or at every cell.
pub fn predict(draws: &StoredDraws, targets: Option<&[TargetCell]>, surveyed: &dyn Fn(&str, i32) -> bool) -> Result<Vec<Prediction>> {
    let keys: Vec<(String, i32)> = match targets {
        Some(t) => t.iter().map(|c| (c.region_id.clone(), c.year)).collect(),
        None => draws.cells.keys().cloned().collect(),
    };
    keys.into_iter()
        .map(|(region_id, year)| {
            let d = draws
                .cells
                .get(&(region_id.clone(), year))
                .ok_or_else(|| validation(format!("cell {region_id}/{year} is not part of the fit")))?;
            let s = summarize(d, INTERVAL_LEVEL)?;
            let p_zero = d.iter().filter(|&&v| v == 0.0).count() as f64 / d.len() as f64;
            let surveyed = surveyed(&region_id, year);
            Ok(Prediction { region_id, year, mean: s.mean, sd: s.sd, ci_lo: s.ci_lo, ci_hi: s.ci_hi, p_zero, surveyed })
        })
        .collect()
}

/// Predict from a fit directory and write `predictions.csv` into `out`.
pub fn cmd_predict(fit_dir: &Path, targets: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let (_, draws) = load_fit(fit_dir)?;
    let targets: Option<Vec<TargetCell>> = targets.map(read_csv).transpose()?;
    let reservoir: HashMap<(String, i32), ()> = ["reservoir_aerial", "reservoir_ground"]
        .iter()
        .flat_map(|stem| ["csv", "bin"].map(|e| fit_dir.join(format!("{stem}.{e}"))))
        .filter(|p| p.exists())
        .map(|p| read_cell_draws(&p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .map(|d| ((d.region_id, d.year), ()))
        .collect();
    let surveyed = |r: &str, y: i32| reservoir.contains_key(&(r.to_string(), y));
    let rows = predict(&draws, targets.as_deref(), &surveyed)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("predictions.csv");
    write_csv(&path, &rows)?;
    Ok(path)
}

/// Recompute the diagnostics table from a fit's stored parameter draws.
pub fn cmd_diagnose(fit_dir: &Path, out: &Path) -> Result<Vec<DiagnosticsRow>> {
    let manifest = Manifest::read(fit_dir)?;
    let summary: FitSummary = serde_json::from_str(&std::fs::read_to_string(fit_dir.join(SUMMARY_FILE))?)?;
    let mut groups: BTreeMap<String, Vec<(usize, Trace)>> = BTreeMap::new();
    for f in &manifest.outputs {
        let stem = f.path.rsplit_once('.').map_or(f.path.as_str(), |(s, _)| s);
        let Some((kind, chain)) = stem.rsplit_once("_chain") else { continue };
        if kind.starts_with("stage1_") || kind == "stage2_parameters" {
            let chain: usize = chain.parse().map_err(|_| validation(format!("bad chain index in {}", f.path)))?;
            groups.entry(kind.to_string()).or_default().push((chain, read_trace(&fit_dir.join(&f.path))?));
        }
    }
    let mut rows = Vec::new();
    for (kind, mut traces) in groups {
        traces.sort_by_key(|(c, _)| *c);
        let acc: Vec<Vec<(String, f64)>> = traces
            .iter()
            .map(|(c, _)| {
                let Some(cs) = summary.chains.iter().find(|s| s.chain == *c) else { return Vec::new() };
                let mut v: Vec<(String, f64)> =
                    cs.stage1_acceptance.iter().filter_map(|(k, r)| r.map(|r| (k.clone(), r))).collect();
                if kind == "stage2_parameters" {
                    v.extend(cs.phi_acceptance.map(|r| ("phi".to_string(), r)));
                }
                v
            })
            .collect();
        let traces: Vec<Trace> = traces.into_iter().map(|(_, t)| t).collect();
        rows.extend(diagnostics_table(&traces, &acc, INTERVAL_LEVEL)?);
    }
    std::fs::create_dir_all(out)?;
    write_csv(&out.join(DIAGNOSTICS_FILE), &rows)?;
    Ok(rows)
}

/// A set of calendar years whose aerial surveys are withheld.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub missing_years: Vec<i32>,
}

fn years_list(spans: &[(i32, i32)]) -> Vec<i32> {
    spans.iter().flat_map(|&(a, b)| a..=b).collect()
}

impl Scenario {
    /// Named presets, `none`, or `drop:YYYY,YYYY-YYYY,...`.
    pub fn parse(name: &str) -> Result<Scenario> {
        let missing = match name {
            "none" => Vec::new(),
            "scenario1" => years_list(&[(2005, 2011), (2013, 2013), (2015, 2015), (2017, 2017), (2019, 2019), (2021, 2021)]),
            "scenario2" => years_list(&[(2005, 2011), (2015, 2015), (2017, 2017), (2019, 2019), (2021, 2021)]),
            "scenario3" => years_list(&[(2005, 2011), (2014, 2015), (2018, 2019)]),
            "scenario4" => years_list(&[(2005, 2011), (2013, 2013), (2016, 2016), (2019, 2019)]),
            other => {
                let list = other
                    .strip_prefix("drop:")
                    .ok_or_else(|| config(format!("unknown scenario '{other}'")))?;
                let mut years = Vec::new();
                for part in list.split(',').filter(|p| !p.is_empty()) {
                    let bad = || config(format!("bad year or range '{part}' in scenario '{other}'"));
                    match part.split_once('-') {
                        Some((a, b)) => years.extend(a.trim().parse::<i32>().map_err(|_| bad())?..=b.trim().parse::<i32>().map_err(|_| bad())?),
                        None => years.push(part.trim().parse::<i32>().map_err(|_| bad())?),
                    }
                }
                years
            }
        };
        Ok(Scenario { name: name.to_string(), missing_years: missing })
    }
}

/// Distance of a scenario fit from the reference, per 100 km².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub scenario: String,
    pub missing_years: String,
    /// |mean over cells of (scenario mean − reference mean)|.
    pub bias: f64,
    /// Root mean square of the same differences.
    pub rmse: f64,
    /// Per-draw RMSE against the reference means, averaged over draws.
    pub rmse_draw_averaged: f64,
}

/// Compare scenario draws with the reference posterior means over aerial
/// blocks and all years. Both are in `t * n + i` cell order.
pub fn score_scenario(scenario: &Scenario, reference_means: &[f64], outputs: &[Stage2Output], n_aerial: usize) -> Result<ScenarioScore> {
    let first = outputs.first().ok_or_else(|| MeldError::NoDraws("no scenario chains".into()))?;
    let n = first.n_regions;
    if reference_means.len() != n * first.n_years {
        return Err(MeldError::Dimension("reference and scenario fits cover different cells".into()));
    }
    let cells: Vec<usize> = (0..first.n_years).flat_map(|t| (0..n_aerial).map(move |i| t * n + i)).collect();
    if cells.is_empty() {
        return Err(validation("no aerial cells to score"));
    }
    let means = pooled_means(outputs)?;
    let diffs: Vec<f64> = cells.iter().map(|&k| 100.0 * (means[k] - reference_means[k])).collect();
    let m = cells.len() as f64;
    let bias = (diffs.iter().sum::<f64>() / m).abs();
    let rmse = (diffs.iter().map(|d| d * d).sum::<f64>() / m).sqrt();
    let mut per_draw = 0.0;
    let mut k_draws = 0usize;
    for o in outputs {
        for row in &o.y_draws {
            let ms = cells.iter().map(|&k| (100.0 * (row[k] - reference_means[k])).powi(2)).sum::<f64>() / m;
            per_draw += ms.sqrt();
            k_draws += 1;
        }
    }
    let missing_years = scenario.missing_years.iter().map(i32::to_string).collect::<Vec<_>>().join(" ");
    Ok(ScenarioScore {
        scenario: scenario.name.clone(),
        missing_years,
        bias,
        rmse,
        rmse_draw_averaged: per_draw / k_draws as f64,
    })
}

/// Refit with each scenario's aerial years withheld and score against the
/// reference posterior means.
pub fn run_scenarios(tables: &SurveyTables, cfg: &FitConfig, reference_means: &[f64], scenarios: &[Scenario]) -> Result<Vec<ScenarioScore>> {
    let mut cfg = cfg.clone();
    cfg.run.diagnostics = false;
    scenarios
        .par_iter()
        .map(|s| {
            let masked = mask_aerial_years(tables, &s.missing_years);
            let inputs = prepare_inputs(&masked, &cfg.model)?;
            let result = fit(&inputs, &cfg)?;
            score_scenario(s, reference_means, &result.stage2, inputs.geometry.n_aerial)
        })
        .collect()
}

/// Scenario refits against the completed fit in `reference_dir`; writes
/// `sensitivity.csv` into `out`.
pub fn cmd_sensitivity(cfg: &FitConfig, scenarios: &[Scenario], reference_dir: &Path, out: &Path) -> Result<Vec<ScenarioScore>> {
    cfg.validate()?;
    if scenarios.is_empty() {
        return Err(config("no scenarios requested"));
    }
    let (manifest, stored) = load_fit(reference_dir)
        .map_err(|e| config(format!("sensitivity needs a completed reference fit: {e}")))?;
    let summary = &stored.summary;
    let n = summary.region_ids.len();
    let mut reference_means = vec![0.0; n * summary.years.len()];
    for (t, &year) in summary.years.iter().enumerate() {
        for (i, id) in summary.region_ids.iter().enumerate() {
            let d = stored
                .cells
                .get(&(id.clone(), year))
                .ok_or_else(|| validation(format!("reference fit lacks cell {id}/{year}")))?;
            reference_means[t * n + i] = d.iter().sum::<f64>() / d.len() as f64;
        }
    }
    let tables = SurveyTables::read(&cfg.data)?;
    let scores = with_threads(cfg.run.threads, || run_scenarios(&tables, cfg, &reference_means, scenarios))??;
    std::fs::create_dir_all(out)?;
    let path = out.join("sensitivity.csv");
    write_csv(&path, &scores)?;
    let mut m = Manifest::new("sensitivity", cfg.run.seed, cfg.run.chains, cfg.to_toml_string());
    m.inputs.push(crate::persist::ManifestFile {
        path: reference_dir.join("manifest.json").display().to_string(),
        sha256: manifest.config_sha256.clone(),
    });
    m.add_output(out, &path)?;
    m.complete = true;
    m.write(out)?;
    Ok(scores)
}
