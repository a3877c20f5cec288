use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use geocausal_cli::stages::STAGES;
use geocausal_cli::{CliResult, Run, RunConfig};

#[derive(Parser)]
#[command(
    name = "geocausal",
    version,
    about = "Satellite-image confounding adjustment for aid-effect estimates"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Random seed (required here or in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for all outputs.
    #[arg(short, long, global = true)]
    output_dir: Option<PathBuf>,
    /// Parallel funder×sector jobs.
    #[arg(short, long, global = true)]
    workers: Option<usize>,
    /// Override any config key, e.g. `--set train.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic world with known treatment effects.
    Simulate,
    /// Assemble funder×sector panels from raw or simulated inputs.
    BuildPanel,
    /// Cross-fit propensity models for each model specification.
    Train,
    /// Compute ATEs for every selected specification.
    Estimate,
    /// AUC, salience, canonical correlation, meta-regression and two-way FE.
    Analyze,
    /// Draw the ATE and AUC figures as SVG.
    Plot,
    /// Write a single-page HTML report.
    Report,
    /// Run every stage in order.
    All,
}

impl Command {
    fn stages(self) -> Vec<&'static str> {
        match self {
            Command::Simulate => vec!["simulate"],
            Command::BuildPanel => vec!["build-panel"],
            Command::Train => vec!["train"],
            Command::Estimate => vec!["estimate"],
            Command::Analyze => vec!["analyze"],
            Command::Plot => vec!["plot"],
            Command::Report => vec!["report"],
            Command::All => STAGES.to_vec(),
        }
    }
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn run(cli: &Cli) -> CliResult<()> {
    let mut overrides = Vec::new();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(d) = &cli.output_dir {
        overrides.push(format!("output_dir={}", toml_string(&d.to_string_lossy())));
    }
    if let Some(w) = cli.workers {
        overrides.push(format!("workers={w}"));
    }
    overrides.extend(cli.set.iter().cloned());
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let mut run = Run::open(cfg)?;
    for stage in cli.command.stages() {
        if cli.command.stages().len() > 1 && stage == "simulate" && run.cfg.inputs.projects.is_some() {
            continue;
        }
        log::info!("running {stage}");
        run.run_stage(stage)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
