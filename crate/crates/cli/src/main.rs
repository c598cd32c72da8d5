//! `sidewalk`: synthesize data, train the detector, and run it on frames.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric or
//! training failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sidewalk_core::vae::Preset;

#[derive(Parser, Debug)]
#[command(name = "sidewalk", version, about = "Sidewalk hazard detection with a VAE and a one-class SVM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a deterministic synthetic corpus (train, ocsvm and test splits).
    Synth(SynthArgs),
    /// Train the autoencoder on the frames of a directory.
    TrainVae(TrainVaeArgs),
    /// Print the score quantile of normal frames, a threshold candidate.
    Calibrate(CalibrateArgs),
    /// Fit normalizer, PCA and one-class SVM on non-hazardous anomaly frames.
    TrainOcsvm(TrainOcsvmArgs),
    /// Classify frames and write the alert stream.
    Infer(InferArgs),
    /// Score a labeled set: ROC curve, AUC and confusion matrix.
    Eval(EvalArgs),
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 300)]
    pub test_normal: usize,
    #[arg(long, default_value_t = 150)]
    pub test_nonhazard: usize,
    #[arg(long, default_value_t = 150)]
    pub test_hazard: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Non-hazardous anomaly frames for the one-class SVM split.
    #[arg(long, default_value_t = 150)]
    pub ocsvm: usize,
    /// Fraction of training frames replaced by non-hazardous anomalies.
    #[arg(long, default_value_t = 0.0)]
    pub contamination: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    Desk,
    Canonical,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Canonical => Preset::Canonical,
        }
    }
}

#[derive(clap::Args, Debug)]
pub struct TrainVaeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = PresetArg::Desk)]
    pub preset: PresetArg,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Frames to calibrate on. When the directory has a labels file only the
    /// frames labeled normal are used.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.995)]
    pub quantile: f64,
    #[arg(long, default_value_t = 10)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Store the threshold in the bundle's pipeline settings.
    #[arg(long)]
    pub write: bool,
}

#[derive(clap::Args, Debug)]
pub struct TrainOcsvmArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub nu: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.95)]
    pub pca_var: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Defaults to the threshold stored by `calibrate --write`.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub alerts: PathBuf,
    /// Directory for grayscale error heatmaps of hazard frames.
    #[arg(long)]
    pub heatmaps: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    VaeOnly,
    Hybrid,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub data: PathBuf,
    /// Labels file; defaults to `labels.csv` inside `--data`.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub roc: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Mode::Hybrid)]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
