use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use qana_cli::commands;
use qana_cli::RunConfig;
use qana_core::QanaError;

/// Quantization-aware CNN training, CNN-to-SNN conversion and spiking
/// inference.
#[derive(Parser)]
#[command(
    name = "qana",
    version,
    after_help = "Set QANA_LOG=info (or debug) for progress logging."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic 7-class dermatoscopy-like dataset
    Synth(Common),
    /// Quality-filter, resize, split and SMOTE-balance a dataset
    Preprocess(Common),
    /// Train the network on the training split
    Train(Common),
    /// Per-class metrics of a trained model
    Eval(Common),
    /// Fold, calibrate, quantize and map a model to a spiking network
    Convert(Common),
    /// Compare the spiking network with its dequantized counterpart
    Verify(Common),
    /// Classify images with the spiking network
    Infer(Common),
    /// Fit per-class spike-count thresholds
    Calibrate(Common),
    /// Print every configuration key with its default
    Keys,
}

#[derive(Args)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Simulation window in time steps
    #[arg(long = "T", value_name = "STEPS")]
    window: Option<usize>,
    /// Override any configuration key
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for pair in &self.set {
            cfg.set_pair(pair)?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(o) = &self.out {
            cfg.set("out", &o.to_string_lossy())?;
        }
        if let Some(t) = self.window {
            cfg.set("T", &t.to_string())?;
        }
        Ok(cfg)
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<QanaError>() {
        Some(QanaError::Config(_)) | None => 2,
        Some(QanaError::Io(_)) => 3,
        Some(QanaError::Corrupt(_) | QanaError::Version { .. } | QanaError::Decode { .. }) => 4,
        Some(_) => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QANA_LOG", "warn")).init();
    let cli = Cli::parse();
    let (name, common) = match &cli.command {
        Command::Keys => {
            print!("{}", RunConfig::documentation());
            return ExitCode::SUCCESS;
        }
        Command::Synth(c) => ("synth", c),
        Command::Preprocess(c) => ("preprocess", c),
        Command::Train(c) => ("train", c),
        Command::Eval(c) => ("eval", c),
        Command::Convert(c) => ("convert", c),
        Command::Verify(c) => ("verify", c),
        Command::Infer(c) => ("infer", c),
        Command::Calibrate(c) => ("calibrate", c),
    };
    let result = common.resolve().and_then(|cfg| match name {
        "synth" => commands::cmd_synth(&cfg),
        "preprocess" => commands::cmd_preprocess(&cfg),
        "train" => commands::cmd_train(&cfg),
        "eval" => commands::cmd_eval(&cfg),
        "convert" => commands::cmd_convert(&cfg),
        "verify" => commands::cmd_verify(&cfg),
        "infer" => commands::cmd_infer(&cfg),
        _ => commands::cmd_calibrate(&cfg),
    });
    match result {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {name}: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
