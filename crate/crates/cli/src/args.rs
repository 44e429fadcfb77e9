use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sardine_core::Format;

#[derive(Debug, Parser)]
#[command(name = "sardine", version, about = "Residual-CNN despeckling for SAR imagery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inject speckle into every raster of a directory.
    #[command(args_override_self = true)]
    Simulate(SimulateArgs),
    /// Build a clean/noisy patch set.
    #[command(args_override_self = true)]
    BuildDataset(BuildDatasetArgs),
    /// Train a model on a patch set.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Despeckle one raster with a trained model.
    #[command(args_override_self = true)]
    Despeckle(DespeckleArgs),
    /// Compute quality metrics and write them as CSV.
    #[command(args_override_self = true)]
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sequential reductions for bit-reproducible results.
    #[arg(long)]
    pub deterministic: bool,
    /// Worker threads (default: SARDINE_THREADS, else all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// key=value file of default flags; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Amplitude,
    Intensity,
}

impl From<FormatArg> for Format {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Amplitude => Format::Amplitude,
            FormatArg::Intensity => Format::Intensity,
        }
    }
}

#[derive(Debug, Args)]
pub struct Speckle {
    /// Number of looks of the speckle.
    #[arg(long, default_value_t = 1)]
    pub looks: u32,
    #[arg(long, value_enum, default_value_t = FormatArg::Amplitude)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Directory of clean rasters (SARF or PGM).
    #[arg(long)]
    pub input_dir: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[command(flatten)]
    pub speckle: Speckle,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Synthetic,
    Multitemporal,
}

#[derive(Debug, Args)]
pub struct BuildDatasetArgs {
    #[arg(long, value_enum)]
    pub mode: Mode,
    /// Clean images (synthetic) or the acquisitions of one stack (multitemporal).
    #[arg(long)]
    pub input: PathBuf,
    /// Patch-set file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// Patches per image (synthetic) or in total (multitemporal).
    #[arg(long, default_value_t = 128)]
    pub count: usize,
    /// Change threshold as a multiple of the speckle-only CV.
    #[arg(long, default_value_t = 1.5)]
    pub threshold: f64,
    /// Stack index of the noisy acquisition (multitemporal).
    #[arg(long, default_value_t = 0)]
    pub noisy_index: usize,
    /// Restrict extraction to `row,col,height,width` (multitemporal).
    #[arg(long)]
    pub split: Option<String>,
    #[command(flatten)]
    pub speckle: Speckle,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub patches: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = sardine_core::model::DEFAULT_DEPTH)]
    pub depth: usize,
    #[arg(long, default_value_t = sardine_core::model::DEFAULT_WIDTH)]
    pub width: usize,
    /// Comma-separated `epochs:learning_rate` phases.
    #[arg(long, default_value = "30:0.001,20:0.0001")]
    pub schedule: String,
    #[arg(long, default_value_t = 128)]
    pub batch: usize,
    /// Per-epoch loss CSV (default: `<output>.loss.csv`).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[command(flatten)]
    pub speckle: Speckle,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct DespeckleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub tile: usize,
    #[arg(long, default_value_t = 16)]
    pub overlap: usize,
    /// Log-speckle mean override (default: derived from looks and format).
    #[arg(long, allow_hyphen_values = true)]
    pub c: Option<f64>,
    #[command(flatten)]
    pub speckle: Speckle,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub filtered: PathBuf,
    /// Clean reference; enables PSNR and SSIM.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Noisy input; enables ratio-image metrics.
    #[arg(long)]
    pub noisy: Option<PathBuf>,
    /// Homogeneous blocks file; enables ENL.
    #[arg(long)]
    pub blocks: Option<PathBuf>,
    /// Peak value, or `auto` for the 99.9th percentile of the reference.
    #[arg(long, default_value = "255")]
    pub peak: String,
    /// Row label (default: the filtered file name).
    #[arg(long)]
    pub name: Option<String>,
    /// CSV file to write (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub speckle: Speckle,
    #[command(flatten)]
    pub common: Common,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Simulate(a) => &a.common,
            Command::BuildDataset(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Despeckle(a) => &a.common,
            Command::Evaluate(a) => &a.common,
        }
    }
}
