//! `pyrdpm`: extract features, train, detect and evaluate from one config.

mod commands;
mod config;
mod error;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pyrdpm::eval::Protocol;

use config::{Overrides, RunConfig};
use error::CliResult;

#[derive(Parser)]
#[command(name = "pyrdpm", version, about = "Root-filter detector over normalized feature pyramids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write FPD1 feature dumps and a manifest for every image.
    Extract(Common),
    /// Train a model from annotations.
    Train(Common),
    /// Run a model over every image or dump.
    Detect(Common),
    /// Score detections against annotations.
    Eval(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Detection score threshold; `inf` yields no detections.
    #[arg(long, allow_negative_numbers = true)]
    threshold: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    /// Number of aspect-ratio components.
    #[arg(long)]
    components: Option<usize>,
    /// Output path: feature directory, model file, detections file or
    /// curve directory depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Read features from FPD1 dumps in this directory.
    #[arg(long)]
    features_dir: Option<PathBuf>,
    #[arg(long, value_parser = parse_protocol)]
    protocol: Option<Protocol>,
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|_| format!("expected discrete or continuous, got {s:?}"))
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, cmd): (&Common, fn(&RunConfig, Option<&PathBuf>) -> CliResult<()>) = match &cli.command {
        Command::Extract(c) => (c, commands::extract),
        Command::Train(c) => (c, commands::train),
        Command::Detect(c) => (c, commands::detect),
        Command::Eval(c) => (c, commands::eval),
    };
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: common.seed,
        threshold: common.threshold,
        nms_iou: common.nms_iou,
        components: common.components,
        features_dir: common.features_dir.clone(),
        protocol: common.protocol,
    });
    cfg.validate()?;
    cmd(&cfg, common.out.as_ref())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pyrdpm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
