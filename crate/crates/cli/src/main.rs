//! `dfrq`: height-fields in, reflectance datasets, networks, slices and
//! metrics out.
//!
//! Exit codes: 0 success, 2 usage, 3 data or file format, 4 numeric failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "dfrq", about = "Diffractive reflectance pipeline", version = version_text())]
struct Cli {
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// key = value file of flag defaults; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a height-field file.
    #[command(subcommand)]
    GenHeightfield(HeightfieldKind),
    /// Evaluate the forward model over a key grid.
    #[command(args_override_self = true)]
    GenDataset(GenDatasetArgs),
    /// Fit a network to a dataset.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Render a BRDF slice from a model or from the forward model.
    #[command(args_override_self = true)]
    Slice(SliceArgs),
    /// Compare two slices, or a model against a dataset w-slice.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeightfieldKind {
    /// Sawtooth blazed grating.
    #[command(args_override_self = true)]
    Blazed(BlazedArgs),
    /// Synthetic compact-disc pit pattern.
    #[command(args_override_self = true)]
    Cd(CdArgs),
    /// Uniform random elevations, optionally Gaussian windowed.
    #[command(args_override_self = true)]
    Random(RandomArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct BlazedArgs {
    #[arg(long, default_value_t = 2.5)]
    pub period_um: f64,
    #[arg(long, default_value_t = 0.25)]
    pub height_um: f64,
    #[arg(long, default_value_t = 100.0)]
    pub extent_um: f64,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CdArgs {
    #[arg(long, default_value_t = 1.6)]
    pub track_pitch_um: f64,
    #[arg(long, default_value_t = 0.12)]
    pub pit_depth_um: f64,
    #[arg(long, default_value_t = 0.3)]
    pub bit_length_um: f64,
    #[arg(long, default_value_t = 65.0)]
    pub extent_um: f64,
    #[arg(long, default_value_t = 1024)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RandomArgs {
    #[arg(long, default_value_t = 0.25)]
    pub max_height_um: f64,
    #[arg(long, default_value_t = 32.0)]
    pub extent_um: f64,
    #[arg(long, default_value_t = 512)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Multiply by a centred Gaussian of this standard deviation.
    #[arg(long)]
    pub window_sigma_um: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Regular,
    Simple,
    SimpleMax,
}

#[derive(Debug, Args, Serialize)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub heightfield: PathBuf,
    #[arg(long, value_enum, default_value_t = SchemeArg::SimpleMax)]
    pub scheme: SchemeArg,
    #[arg(long, default_value_t = 16.25)]
    pub sigma_s_um: f64,
    #[arg(long, default_value_t = 1001)]
    pub res_u: usize,
    #[arg(long, default_value_t = 1001)]
    pub res_v: usize,
    #[arg(long, default_value_t = 11)]
    pub res_w: usize,
    /// Taylor truncation tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    /// Coherence window cutoff in units of sigma_f.
    #[arg(long, default_value_t = 3.0)]
    pub truncation_sigmas: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Frequencies as `m_uv,m_w` or `m_u,m_v,m_w` with m_u = m_v.
    #[arg(long, default_value = "19,4")]
    pub encoding: String,
    /// Add the u+v and u-v feature ladders.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub diagonal: bool,
    #[arg(long, default_value_t = 464)]
    pub first_hidden: usize,
    /// Number of hidden layers.
    #[arg(long, default_value_t = 8)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.618_033_988_749_894_9)]
    pub ratio: f64,
    /// Explicit hidden sizes, e.g. `108,66,40,24`; replaces the funnel flags.
    #[arg(long, conflicts_with_all = ["first_hidden", "depth", "ratio"])]
    pub hidden: Option<String>,
    #[arg(long, default_value = "relu")]
    pub activation: String,
    #[arg(long, default_value_t = 48.0)]
    pub bmax: f64,
    #[arg(long, default_value_t = 8.0)]
    pub power: f64,
    /// `held-out:4,7,10`, `random:<fraction>[:seed]` or `none`.
    #[arg(long, default_value = "held-out:4,7,10")]
    pub split: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 4096)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Epochs without improvement before the learning rate is cut.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long, default_value_t = 0.5)]
    pub decay: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub min_lr: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// TrainReport JSON; defaults to `<out>.report.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SourceArg {
    Model,
    DatasetGt,
}

#[derive(Debug, Args, Serialize)]
pub struct SliceArgs {
    #[arg(long, value_enum, default_value_t = SourceArg::Model)]
    pub source: SourceArg,
    /// Network file, for `--source model`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Height-field file, for `--source dataset-gt`.
    #[arg(long)]
    pub heightfield: Option<PathBuf>,
    /// Dataset whose coherence and accuracy settings the ground truth reuses.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Coherence window when no dataset is given.
    #[arg(long, conflicts_with = "dataset")]
    pub sigma_s_um: Option<f64>,
    #[arg(long, conflicts_with = "dataset")]
    pub epsilon: Option<f64>,
    /// Incident polar angle, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub theta_i: f64,
    /// Incident azimuth, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub phi_i: f64,
    #[arg(long, default_value_t = 512)]
    pub res: usize,
    /// Exposure in reflectance units.
    #[arg(long, default_value_t = 2000.0)]
    pub exposure: f64,
    #[arg(long, default_value_t = 1.5)]
    pub ior: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    pub fresnel: bool,
    /// PPM path; the raw `.im` sidecar and `.json` metadata sit next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Ground-truth `.im` sidecar written by `slice`.
    #[arg(long, requires = "pred_slice", conflicts_with_all = ["dataset", "model", "w_slice"])]
    pub gt_slice: Option<PathBuf>,
    #[arg(long, requires = "gt_slice")]
    pub pred_slice: Option<PathBuf>,
    /// Dataset whose w-slice is the ground truth.
    #[arg(long, requires_all = ["model", "w_slice"])]
    pub dataset: Option<PathBuf>,
    #[arg(long, requires = "dataset")]
    pub model: Option<PathBuf>,
    /// 1-based w-slice number.
    #[arg(long, requires = "dataset")]
    pub w_slice: Option<usize>,
    /// Exposure for dataset comparisons, or to override slice metadata.
    #[arg(long)]
    pub exposure: Option<f64>,
    /// Write the metrics record here as one JSON line.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn version_text() -> String {
    format!("{} (formats: {})", env!("CARGO_PKG_VERSION"), dfrq::formats::summary())
}

/// How a command failed, which decides the exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<dfrq::Error> for Failure {
    fn from(e: dfrq::Error) -> Self {
        use dfrq::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidArgument(_) => Failure::Usage(msg),
            E::Format(_) | E::Io(_) | E::Json(_) | E::DimensionMismatch { .. } => Failure::Data(msg),
            E::NumericRange(_) | E::OutOfBand { .. } | E::Diverged { .. } => Failure::Numeric(msg),
        }
    }
}

fn subcommand_depth(name: &str) -> usize {
    if name == "gen-heightfield" { 2 } else { 1 }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args().collect(), subcommand_depth) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let matches = Cli::command().get_matches_from(args);
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
