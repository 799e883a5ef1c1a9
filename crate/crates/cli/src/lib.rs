//! Command-line pipeline: synthesize scenes, raise road patches, train,
//! score, evaluate and export score maps.
//!
//! Exit codes: 0 on success, 1 when a stage rejects its input, 2 on misuse
//! of the command line.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod export;
pub mod provenance;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndp_core::ScoreMethod;

pub use config::PipelineConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONTRACT: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] ndp_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(_) => EXIT_CONTRACT,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ndp", version, about = "Prior-reweighted OOD scoring for LiDAR scans")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline config file (`section.key = value`); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn enabled(self) -> bool {
        self == Switch::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Entropy,
    Energy,
    Ee,
    Maxlogit,
}

impl From<MethodArg> for ScoreMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Entropy => ScoreMethod::Entropy,
            MethodArg::Energy => ScoreMethod::Energy,
            MethodArg::Ee => ScoreMethod::ExtendedEnergy,
            MethodArg::Maxlogit => ScoreMethod::MaxLogit,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate labeled synthetic scenes.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Number of scenes.
        #[arg(long)]
        scenes: Option<usize>,
        /// Approximate labeled points per scene.
        #[arg(long)]
        points: Option<usize>,
        /// Primitive anomalies placed on the road of each scene.
        #[arg(long)]
        anomalies: Option<usize>,
    },
    /// Apply one Perlin Raise to every scan of a dataset.
    Raise {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a backbone and prior on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train the prior weighting (`off` trains the static score only).
        #[arg(long, value_enum)]
        ndp: Option<Switch>,
    },
    /// Write per-point anomaly scores for every scan.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the method the model was trained with.
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Defaults to whether the model was trained with the prior.
        #[arg(long, value_enum)]
        ndp: Option<Switch>,
    },
    /// Compute point- and object-level metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset with clouds and ground-truth labels.
        #[arg(long, alias = "data")]
        labels: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Decision threshold for object-level clustering.
        #[arg(long, conflicts_with = "gamma_from_tpr")]
        gamma: Option<f64>,
        /// Choose the threshold reaching this true-positive rate.
        #[arg(long)]
        gamma_from_tpr: Option<f64>,
        /// Calibration dataset for `--gamma-from-tpr`; the evaluated set is used otherwise.
        #[arg(long, requires = "calib_scores")]
        calib_labels: Option<PathBuf>,
        #[arg(long, requires = "calib_labels")]
        calib_scores: Option<PathBuf>,
    },
    /// Render a score map as a PNG raster and a colored PLY cloud.
    ExportMap {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
        /// Output prefix; `.png` and `.ply` are appended.
        #[arg(long)]
        out: PathBuf,
        /// Meters per pixel.
        #[arg(long, default_value_t = 0.1)]
        resolution: f64,
    },
}

/// Parses arguments and runs one subcommand, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
