use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use firesite::pipeline::{self, PipelineConfig, PipelineError, PipelineResult, StageReport};

/// Fire-station siting: demand model, service quality, candidate
/// clustering, coverage optimization and stochastic selection.
#[derive(Parser)]
#[command(name = "firesite", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for inputs left unset and for all outputs.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Property CSV.
    #[arg(long, global = true)]
    properties: Option<PathBuf>,
    /// Number of stations to add.
    #[arg(long, short, global = true)]
    p: Option<usize>,
    /// Any configuration key, as `key=value`; may repeat.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a synthetic city (network, properties, stations, truth).
    Synth,
    /// Train the demand forest and report held-out metrics.
    Train,
    /// Predict demand and compute SQI against existing stations.
    Score,
    /// Cluster low-quality properties and propose candidates.
    Cluster,
    /// Pick candidates with the exact and greedy coverage solvers.
    Cover,
    /// Run the stochastic epsilon-greedy campaign over the candidates.
    Campaign,
    /// Run every stage from training through the campaign.
    Plan,
}

fn build_config(common: &Common) -> PipelineResult<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::from_file(path)?,
        None => PipelineConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| PipelineError::Validation(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(dir) = &common.out_dir {
        config.out_dir = dir.clone();
    }
    if let Some(path) = &common.properties {
        config.properties = Some(path.clone());
    }
    if let Some(p) = common.p {
        config.p = p;
    }
    config.validate()?;
    Ok(config)
}

fn run(command: Command, config: &PipelineConfig) -> PipelineResult<StageReport> {
    match command {
        Command::Synth => pipeline::cmd_synth(config),
        Command::Train => pipeline::cmd_train(config),
        Command::Score => pipeline::cmd_score(config),
        Command::Cluster => pipeline::cmd_cluster(config),
        Command::Cover => pipeline::cmd_cover(config),
        Command::Campaign => pipeline::cmd_campaign(config),
        Command::Plan => pipeline::cmd_plan(config),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_config(&cli.common).and_then(|config| run(cli.command, &config));
    match result {
        Ok(report) => {
            for note in &report.notes {
                println!("{note}");
            }
            for path in &report.outputs {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
