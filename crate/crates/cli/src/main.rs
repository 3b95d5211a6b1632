//! Config-driven experiment runner.
//!
//! ```text
//! blochhom <scenario> --config path [--output dir] [--seed k]
//! ```
//!
//! Exit status: 0 on success, 1 on a compute error or failed verification,
//! 2 on an invalid configuration (nothing is written in that case).
//! Thread count follows `RAYON_NUM_THREADS`; log level follows `RUST_LOG`.

mod config;
mod scenarios;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use serde::Serialize;

use config::{ExperimentConfig, Params, Scenario, ValidatedRun};
use scenarios::Outputs;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Compute(#[from] blochhom::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "blochhom", version, about = "Bloch-wave homogenization experiments")]
struct Cli {
    /// Scenario to run; must match `scenario` in the config.
    #[arg(value_enum)]
    scenario: Scenario,
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    scenario: &'static str,
    config: &'a ExperimentConfig,
    outputs: &'a [String],
    /// Seconds since the Unix epoch; the only non-deterministic field.
    generated_at: u64,
}

fn prepare(cli: &Cli) -> Result<ValidatedRun, CliError> {
    let mut cfg = ExperimentConfig::from_file(&cli.config)?;
    if cfg.scenario != cli.scenario {
        return Err(CliError::Config(format!(
            "command line asks for {} but the config declares {}",
            cli.scenario.name(),
            cfg.scenario.name()
        )));
    }
    if let Some(dir) = &cli.output {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()
}

/// Returns whether every verification passed.
fn execute(run: &ValidatedRun) -> Result<bool, CliError> {
    let cfg = &run.config;
    let a = &run.coefficient;
    let n = &cfg.numerics;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let passed = match &run.params {
        Params::Bands(p) => scenarios::bands(a, n, p, &mut out).map(|_| true)?,
        Params::Cell(p) => scenarios::cell(a, n, p, &mut out).map(|_| true)?,
        Params::Tensor(p) => scenarios::tensor(a, n, p, &mut out).map(|_| true)?,
        Params::Derivs(p) => scenarios::derivs(a, n, p, &mut out).map(|_| true)?,
        Params::SweepRho(p) => scenarios::sweep_rho(a, n, p, &mut out).map(|_| true)?,
        Params::Supercell(p) => scenarios::supercell(a, n, p, cfg.seed, &mut out).map(|_| true)?,
        Params::TransformLimit(p) => scenarios::transform_limit(a, n, p, &mut out).map(|_| true)?,
        Params::VerifyAll(p) => verify::verify_all(a, n, p, cfg.seed, &mut out)?,
    };
    let files = out.files.clone();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        scenario: cfg.scenario.name(),
        config: cfg,
        outputs: &files,
        generated_at: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    out.json("manifest.json", &manifest)?;
    log::info!("wrote {} artifacts to {}", files.len() + 1, out.dir().display());
    Ok(passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = prepare(&cli).and_then(|run| execute(&run));
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed; see verify.json");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
