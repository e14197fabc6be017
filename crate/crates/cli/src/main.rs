//! `egoav` — one entry point for the full workflow: corpus generation,
//! normalization stats, masked pretraining, the channel-masking-frequency
//! sweep, downstream finetuning/evaluation, and attention-map emission.

mod cmd;
mod config;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Command failure with the exit code it maps to: config errors exit 2,
/// runtime errors exit 1.
#[derive(Debug)]
pub enum CmdError {
    Config(String),
    Runtime(String),
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CmdError::Config(m) => write!(f, "config error: {m}"),
            CmdError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(name = "egoav", version, about)]
pub struct Cli {
    /// Layered config file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root that all relative paths resolve against.
    #[arg(long, global = true)]
    workdir: Option<PathBuf>,
    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Small CPU-friendly model/profile for smoke runs.
    #[arg(long, global = true)]
    tiny: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic binaural scene corpus with a manifest.
    Generate(cmd::generate::Args),
    /// Compute corpus normalization statistics.
    Stats(cmd::stats::Args),
    /// Pretrain the masked audio-visual autoencoder.
    Pretrain(cmd::pretrain::Args),
    /// Pretrain + evaluate across channel-masking frequencies r.
    SweepR(cmd::sweep::Args),
    /// Finetune the active-speaker-detection head on a pretrained backbone.
    FinetuneAsd(cmd::asd::FinetuneArgs),
    /// Score ASD predictions (offline CSV path).
    EvalAsd(cmd::asd::EvalArgs),
    /// Train the ratio-mask denoiser.
    FinetuneDenoise(cmd::denoise::FinetuneArgs),
    /// Evaluate denoising at fixed SNR levels.
    EvalDenoise(cmd::denoise::EvalArgs),
    /// Emit attention heatmaps for a clip.
    Attend(cmd::attend::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = run(&cli);
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CmdError::Config(_) => ExitCode::from(2),
                CmdError::Runtime(_) => ExitCode::from(1),
            }
        }
    }
}

/// Global context shared by every command after layering.
pub struct Ctx {
    pub workdir: PathBuf,
    pub seed: u64,
    pub tiny: bool,
    pub base: config::FileConfig,
}

fn run(cli: &Cli) -> Result<(), CmdError> {
    let mut base = config::base_config(cli.config.as_deref())?;
    // flags win over file and environment
    if let Some(w) = &cli.workdir {
        base.workdir = Some(w.clone());
    }
    if let Some(s) = cli.seed {
        base.seed = Some(s);
    }
    if cli.tiny {
        base.tiny = Some(true);
    }
    let ctx = Ctx {
        workdir: base.workdir.clone().unwrap_or_else(|| PathBuf::from(".")),
        seed: base.seed.unwrap_or(0),
        tiny: base.tiny.unwrap_or(false),
        base: base.clone(),
    };
    match &cli.command {
        Command::Generate(args) => cmd::generate::run(&ctx, args),
        Command::Stats(args) => cmd::stats::run(&ctx, args),
        Command::Pretrain(args) => cmd::pretrain::run(&ctx, args),
        Command::SweepR(args) => cmd::sweep::run(&ctx, args),
        Command::FinetuneAsd(args) => cmd::asd::run_finetune(&ctx, args),
        Command::EvalAsd(args) => cmd::asd::run_eval(&ctx, args),
        Command::FinetuneDenoise(args) => cmd::denoise::run_finetune(&ctx, args),
        Command::EvalDenoise(args) => cmd::denoise::run_eval(&ctx, args),
        Command::Attend(args) => cmd::attend::run(&ctx, args),
    }
}
