use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use treg::error::TregError;
use treg::harness::config::{ExperimentKind, RunConfig};
use treg::harness::{experiments, validate, Workspace};

#[derive(Parser)]
#[command(name = "treg", version, about = "Text-regularized latent diffusion inverse solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (key = value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `experiment.restarts`.
    #[arg(long)]
    restarts: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// One reconstruction.
    Solve(Common),
    /// ambiguity, symmetry or convergence.
    Experiment {
        kind: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Runs every oracle suite.
    Validate(Common),
    /// Prints the resolved configuration.
    ShowConfig(Common),
}

fn load(common: &Common, required: bool) -> Result<RunConfig, TregError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None if required => {
            return Err(TregError::Config {
                field: "--config".into(),
                reason: "a configuration file is required".into(),
            })
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(n) = common.restarts {
        cfg.experiment.restarts = n;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode, TregError> {
    match cli.command {
        Command::Solve(common) => {
            let ws = Workspace::build(load(&common, true)?)?;
            let out = ws.config.output_dir.clone();
            let report = experiments::solve(&ws, &out)?;
            let r = &report.restarts[0];
            println!(
                "wrote {} files to {}; y-MSE {:.6}{}",
                report.manifest.len() + 1,
                out.display(),
                r.y_mse.unwrap_or(f64::NAN),
                r.psnr.map(|p| format!(", PSNR {p:.2} dB")).unwrap_or_default()
            );
        }
        Command::Experiment { kind, common } => {
            let cfg = load(&common, true)?;
            let kind = match kind {
                Some(k) => k.parse::<ExperimentKind>()?,
                None => cfg.experiment.kind.ok_or_else(|| TregError::Config {
                    field: "experiment.kind".into(),
                    reason: "name an experiment: ambiguity, symmetry or convergence".into(),
                })?,
            };
            let ws = Workspace::build(cfg)?;
            let out = ws.config.output_dir.clone();
            let report = experiments::run_experiment(kind, &ws, &out)?;
            println!("{}", serde_json::to_string_pretty(&report.aggregate)?);
            println!("wrote {} files to {}", report.manifest.len() + 1, out.display());
            if report.restarts.iter().any(|r| r.error.is_some()) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Validate(common) => {
            let cfg = load(&common, false)?;
            let ws = match common.config {
                Some(_) => Some(Workspace::build(cfg.clone())?),
                None => None,
            };
            let outcomes = validate::run_all(cfg.seed, ws.as_ref())?;
            for o in &outcomes {
                println!("{o}");
            }
            if outcomes.iter().any(|o| !o.passed) {
                return Ok(ExitCode::from(1));
            }
        }
        Command::ShowConfig(common) => print!("{}", load(&common, false)?.to_text()),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(2),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
