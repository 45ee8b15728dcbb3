use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use survey_meld::config::FitConfig;
use survey_meld::error::{config, Result};
use survey_meld::pipeline::{cmd_diagnose, cmd_fit, cmd_predict, cmd_sensitivity, cmd_simulate, Scenario};
use survey_meld::simulator::TruthSpec;

/// Two-stage melded fit of aerial and ground survey densities.
///
/// Every flag can also be set through an environment variable named
/// SURVEY_MELD_<FLAG>, e.g. SURVEY_MELD_SEED. Log verbosity follows
/// SURVEY_MELD_LOG (default "info").
#[derive(Parser, Debug)]
#[command(name = "survey-meld", version, about)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (fit config, or truth spec for `simulate`).
    #[arg(long, global = true, env = "SURVEY_MELD_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "SURVEY_MELD_SEED")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "SURVEY_MELD_CHAINS")]
    chains: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, env = "SURVEY_MELD_OUT")]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "SURVEY_MELD_THREADS")]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run both stages and write draws, diagnostics and a manifest.
    Fit,
    /// Write a synthetic dataset, its truth record and a fit config.
    Simulate,
    /// Refit with aerial years withheld and score against a reference fit.
    Sensitivity {
        /// scenario1..scenario4, none, or drop:YEAR,YEAR-YEAR (repeatable).
        #[arg(long = "scenario", required = true, env = "SURVEY_MELD_SCENARIO", value_delimiter = ';')]
        scenarios: Vec<String>,
        /// Reference fit directory; defaults to the config's output directory.
        #[arg(long, env = "SURVEY_MELD_REFERENCE")]
        reference: Option<PathBuf>,
    },
    /// Summaries of the stage-2 density draws at target cells.
    Predict {
        #[arg(long, env = "SURVEY_MELD_FIT")]
        fit: PathBuf,
        /// CSV with region_id and year columns; all cells when omitted.
        #[arg(long, env = "SURVEY_MELD_TARGETS")]
        targets: Option<PathBuf>,
    },
    /// Recompute convergence diagnostics from a fit's stored draws.
    Diagnose {
        #[arg(long, env = "SURVEY_MELD_FIT")]
        fit: PathBuf,
    },
}

fn load_fit_config(common: &Common) -> Result<FitConfig> {
    let path = common.config.as_ref().ok_or_else(|| config("--config is required"))?;
    let mut cfg = FitConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(c) = common.chains {
        cfg.run.chains = c;
    }
    if let Some(t) = common.threads {
        cfg.run.threads = t;
    }
    if let Some(o) = &common.out {
        cfg.run.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Fit => {
            cmd_fit(&load_fit_config(common)?)?;
        }
        Command::Simulate => {
            let spec = match &common.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| config(format!("cannot read {}: {e}", p.display())))?;
                    toml::from_str::<TruthSpec>(&text)?
                }
                None => TruthSpec::default(),
            };
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("sim"));
            let cfg_path = cmd_simulate(&spec, common.seed.unwrap_or(1), &out)?;
            println!("{}", cfg_path.display());
        }
        Command::Sensitivity { scenarios, reference } => {
            let mut cfg = load_fit_config(common)?;
            let reference = reference.unwrap_or_else(|| cfg.run.out_dir.clone());
            let out = common.out.clone().unwrap_or_else(|| reference.join("sensitivity"));
            // --out names the report directory here, not the reference.
            if common.out.is_some() {
                cfg.run.out_dir = reference.clone();
            }
            let scenarios = scenarios.iter().map(|s| Scenario::parse(s)).collect::<Result<Vec<_>>>()?;
            for s in cmd_sensitivity(&cfg, &scenarios, &reference, &out)? {
                println!("{}\tbias {:.4}\trmse {:.4}", s.scenario, s.bias, s.rmse);
            }
        }
        Command::Predict { fit, targets } => {
            let out = common.out.clone().unwrap_or_else(|| fit.clone());
            println!("{}", cmd_predict(&fit, targets.as_deref(), &out)?.display());
        }
        Command::Diagnose { fit } => {
            let out = common.out.clone().unwrap_or_else(|| fit.clone());
            for r in cmd_diagnose(&fit, &out)? {
                println!("{}\trhat {:.4}\tess {:.1}", r.parameter, r.rhat, r.ess);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SURVEY_MELD_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
