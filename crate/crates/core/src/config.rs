//! Run configuration, read from TOML with every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::geometry::default_phi_support;

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub geometry: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    pub pdsi: Option<PathBuf>,
    pub divisions: Option<PathBuf>,
    pub overlap: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub survey_mask: Option<PathBuf>,
    pub ground_counts: Option<PathBuf>,
}

impl DataPaths {
    /// Standard file names inside one directory, as written by `simulate`.
    pub fn in_dir(dir: &Path) -> Self {
        DataPaths {
            geometry: Some(dir.join("geometry.csv")),
            adjacency: Some(dir.join("adjacency.csv")),
            covariates: Some(dir.join("covariates.csv")),
            pdsi: Some(dir.join("pdsi.csv")),
            divisions: Some(dir.join("divisions.csv")),
            overlap: Some(dir.join("overlap.csv")),
            detections: Some(dir.join("detections.csv")),
            survey_mask: Some(dir.join("survey_mask.csv")),
            ground_counts: Some(dir.join("ground_counts.csv")),
        }
    }

    /// Resolve relative paths against `base` (the config file's directory).
    pub fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.geometry,
            &mut self.adjacency,
            &mut self.covariates,
            &mut self.pdsi,
            &mut self.divisions,
            &mut self.overlap,
            &mut self.detections,
            &mut self.survey_mask,
            &mut self.ground_counts,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum TauStructure {
    /// Intrinsic CAR precision over the aerial lattice.
    #[default]
    Icar,
    /// Independent aerial innovations.
    Diagonal,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum NProposal {
    /// Symmetric integer random walk.
    #[default]
    Walk,
    /// Independent draw from the Poisson prior.
    Prior,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhiProposal {
    #[default]
    Uniform,
    Neighbour,
}

/// How the two numbers of an inverse-gamma variance prior are read.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum InverseGammaReading {
    /// 1/σ² ~ Gamma(shape, scale): density ∝ x^(−shape−1) exp(−1/(scale·x)).
    #[default]
    PrecisionScale,
    /// density ∝ x^(−shape−1) exp(−scale/x).
    VarianceScale,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct InverseGammaPrior {
    pub shape: f64,
    pub scale: f64,
    pub reading: InverseGammaReading,
}

impl Default for InverseGammaPrior {
    fn default() -> Self {
        InverseGammaPrior { shape: 0.01, scale: 100.0, reading: InverseGammaReading::PrecisionScale }
    }
}

impl InverseGammaPrior {
    /// `b` in the density x^(−a−1) exp(−b/x).
    pub fn rate(&self) -> f64 {
        match self.reading {
            InverseGammaReading::PrecisionScale => 1.0 / self.scale,
            InverseGammaReading::VarianceScale => self.scale,
        }
    }

    /// Direct (shape, b) specification.
    pub fn from_shape_rate(shape: f64, rate: f64) -> Self {
        InverseGammaPrior { shape, scale: rate, reading: InverseGammaReading::VarianceScale }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    pub beta_rho_var: f64,
    pub beta_psi_var: f64,
    pub beta_lambda_var: f64,
    /// Gamma shape and scale for the non-lek mean group size.
    pub lambda0_shape: f64,
    pub lambda0_scale: f64,
    pub eta_var: f64,
    pub gamma_var: f64,
    pub sigma2_d: InverseGammaPrior,
    pub sigma2_tau_aerial: InverseGammaPrior,
    pub sigma2_tau_ground: InverseGammaPrior,
}

impl Default for Priors {
    fn default() -> Self {
        Priors {
            beta_rho_var: 2.25,
            beta_psi_var: 2.25,
            beta_lambda_var: 10.0,
            lambda0_shape: 1.78,
            lambda0_scale: 0.675,
            eta_var: 100.0,
            gamma_var: 100.0,
            sigma2_d: InverseGammaPrior::default(),
            sigma2_tau_aerial: InverseGammaPrior::default(),
            sigma2_tau_ground: InverseGammaPrior::default(),
        }
    }
}

impl Priors {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("beta_rho_var", self.beta_rho_var),
            ("beta_psi_var", self.beta_psi_var),
            ("beta_lambda_var", self.beta_lambda_var),
            ("lambda0_shape", self.lambda0_shape),
            ("lambda0_scale", self.lambda0_scale),
            ("eta_var", self.eta_var),
            ("gamma_var", self.gamma_var),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(config(format!("priors.{name} must be positive, got {v}")));
            }
        }
        for (name, ig) in [
            ("sigma2_d", &self.sigma2_d),
            ("sigma2_tau_aerial", &self.sigma2_tau_aerial),
            ("sigma2_tau_ground", &self.sigma2_tau_ground),
        ] {
            if !(ig.shape > 0.0) || !(ig.scale > 0.0) {
                return Err(config(format!("priors.{name} needs positive shape and scale")));
            }
        }
        Ok(())
    }
}

pub const ALL_STATIC_COLUMNS: [&str; 5] = ["development", "crp", "grass_patch", "shrub", "woodland"];

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Super-population size per aerial block-year.
    pub m_super: usize,
    /// Maximum detection distance, metres.
    pub nu_d: f64,
    /// Surveyed area of an aerial block, km².
    pub aerial_area_km2: f64,
    pub tau_structure: TauStructure,
    pub n_proposal: NProposal,
    /// Static covariate columns entering the designs, in order.
    pub static_columns: Vec<String>,
    /// Range support in metres.
    pub phi_support: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            m_super: 20,
            nu_d: 600.0,
            aerial_area_km2: 36.0,
            tau_structure: TauStructure::Icar,
            n_proposal: NProposal::Walk,
            static_columns: ALL_STATIC_COLUMNS.iter().map(|s| s.to_string()).collect(),
            phi_support: default_phi_support(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub iterations: usize,
    pub burn_in: usize,
    /// Thinning of stored parameter draws.
    pub thin: usize,
    /// Thinning of stored density draws.
    pub reservoir_thin: usize,
    /// Random-walk adaptation batch length during burn-in.
    pub adapt_batch: usize,
    pub target_acceptance: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            iterations: 60_000,
            burn_in: 10_000,
            thin: 10,
            reservoir_thin: 5,
            adapt_batch: 50,
            target_acceptance: 0.3,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        check_schedule("stage1", self.iterations, self.burn_in, self.thin)?;
        if self.reservoir_thin == 0 || self.adapt_batch == 0 {
            return Err(config("stage1.reservoir_thin and stage1.adapt_batch must be at least 1"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(config("stage1.target_acceptance must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub phi_proposal: PhiProposal,
    /// Minimum stage-1 draws required per surveyed cell.
    pub min_reservoir: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            iterations: 70_000,
            burn_in: 10_000,
            thin: 10,
            phi_proposal: PhiProposal::Uniform,
            min_reservoir: 1000,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        check_schedule("stage2", self.iterations, self.burn_in, self.thin)
    }
}

fn check_schedule(name: &str, iterations: usize, burn_in: usize, thin: usize) -> Result<()> {
    if thin == 0 {
        return Err(config(format!("{name}.thin must be at least 1")));
    }
    if burn_in >= iterations {
        return Err(config(format!(
            "{name}.burn_in ({burn_in}) must be smaller than {name}.iterations ({iterations})"
        )));
    }
    if (iterations - burn_in) / thin == 0 {
        return Err(config(format!("{name} retains no draws")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "snake_case")]
pub enum DrawFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub chains: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub out_dir: PathBuf,
    pub diagnostics: bool,
    pub draw_format: DrawFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            chains: 3,
            seed: 20_240_501,
            threads: 0,
            out_dir: PathBuf::from("out"),
            diagnostics: true,
            draw_format: DrawFormat::Csv,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub data: DataPaths,
    pub model: ModelConfig,
    pub priors: Priors,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub run: RunConfig,
}

impl FitConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Read a config file; relative data paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        if let Some(base) = path.parent() {
            cfg.data.resolve(base);
            if cfg.run.out_dir.is_relative() {
                cfg.run.out_dir = base.join(&cfg.run.out_dir);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.m_super == 0 {
            return Err(config("model.m_super must be positive"));
        }
        if !(m.nu_d > 7.0) {
            return Err(config(format!("model.nu_d must exceed the 7 m visibility boundary, got {}", m.nu_d)));
        }
        if !(m.aerial_area_km2 > 0.0) {
            return Err(config("model.aerial_area_km2 must be positive"));
        }
        if m.phi_support.is_empty() || m.phi_support.iter().any(|&p| !(p > 0.0)) {
            return Err(config("model.phi_support must be non-empty and positive"));
        }
        if m.phi_support.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(config("model.phi_support must be strictly increasing"));
        }
        for c in &m.static_columns {
            if !ALL_STATIC_COLUMNS.contains(&c.as_str()) {
                return Err(config(format!("unknown static covariate column '{c}'")));
            }
        }
        self.priors.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.run.chains == 0 {
            return Err(config("run.chains must be at least 1"));
        }
        if self.run.diagnostics && self.run.chains < 2 {
            return Err(config("convergence diagnostics need at least 2 chains (set run.diagnostics = false)"));
        }
        Ok(())
    }
}
