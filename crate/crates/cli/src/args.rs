use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jd3net::archmodel::ArchConfig;
use jd3net::cfa::NoisePreset;
use jd3net::network::LossKind;
use jd3net::numerics::Precision;
use jd3net::search::Rho;

pub const SUBCOMMANDS: [&str; 11] = [
    "search",
    "sweep",
    "flops",
    "entropy",
    "mosaic",
    "demosaic",
    "gradcheck",
    "train-toy",
    "compare",
    "eval",
    "report",
];

/// Architecture design toolkit for downsampled isotropic demosaicing networks.
#[derive(Debug, Parser)]
#[command(name = "jd3net", version, args_override_self = true, propagate_version = true)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Seed for noise, initialisation, data generation and data order
    /// [default: 0, or the value in a --spec file]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; outputs are byte-reproducible at 1
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Arithmetic for training and inference: standard (f32) or high (f64)
    /// [default: standard, or the value in a --spec file]
    #[arg(long, global = true)]
    pub precision: Option<Precision>,
    /// Output path; companion artifacts are written next to it with a suffix.
    /// JSON goes to stdout when omitted
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON object of default flag values keyed by long flag name
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Include wall-clock seconds in run records (breaks byte reproducibility)
    #[arg(long, global = true)]
    pub record_timing: bool,
    /// Log progress to stderr (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Find the entropy-maximizing (d, w, B) under a FLOPs budget
    Search(SearchArgs),
    /// Solve a grid of budgets x rho values
    Sweep(SweepArgs),
    /// FLOPs and parameter count of one configuration
    Flops(FlopsArgs),
    /// Entropy score of one configuration
    Entropy(EntropyArgs),
    /// Sample an RGB image through a colour filter array
    Mosaic(MosaicArgs),
    /// Reconstruct RGB from a mosaic, bilinearly or with a trained network
    Demosaic(DemosaicArgs),
    /// Finite-difference audit of every backward pass
    Gradcheck(GradcheckArgs),
    /// Train one network on procedural data
    TrainToy(TrainToyArgs),
    /// FLOP-matched comparison of two architectures
    Compare(CompareArgs),
    /// PSNR and SSIM of predictions against ground truth
    Eval(EvalArgs),
    /// Render sweep or run records as CSV, JSON and plot data
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ConstraintArgs {
    /// Smallest downsampling ratio
    #[arg(long, default_value_t = 1)]
    pub d_min: usize,
    /// Largest downsampling ratio
    #[arg(long, default_value_t = 4)]
    pub d_max: usize,
    /// Step of the w and B grid
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    /// Smallest width in channels
    #[arg(long, default_value_t = 8)]
    pub w_min: usize,
    /// Largest width in channels
    #[arg(long, default_value_t = 512)]
    pub w_max: usize,
    /// Smallest number of blocks
    #[arg(long, default_value_t = 4)]
    pub b_min: usize,
    /// Largest number of blocks
    #[arg(long, default_value_t = 512)]
    pub b_max: usize,
    /// Input channels of the searched networks
    #[arg(long, default_value_t = 4)]
    pub c_in: usize,
    /// Output channels of the searched networks
    #[arg(long, default_value_t = 3)]
    pub c_out: usize,
    /// Height in pixels at which the budget is measured
    #[arg(long, default_value_t = 256)]
    pub ref_height_px: usize,
    /// Width in pixels at which the budget is measured
    #[arg(long, default_value_t = 256)]
    pub ref_width_px: usize,
    /// Number of ranked candidates kept in the result
    #[arg(long, default_value_t = 10)]
    pub frontier: usize,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// FLOPs budget in GFLOPs at the reference resolution
    #[arg(long)]
    pub budget_gflops: f64,
    /// Upper bound on B / w
    #[arg(long, default_value = "1.0")]
    pub rho: Rho,
    #[command(flatten)]
    pub constraints: ConstraintArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated FLOPs budgets in GFLOPs
    #[arg(long, alias = "budgets", value_delimiter = ',', default_value = "25,128")]
    pub budgets_gflops: Vec<f64>,
    /// Comma-separated B / w bounds
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.7,1.0,1.2,1.5")]
    pub rhos: Vec<Rho>,
    /// Regenerate the full search-results table (d free and d = 1, 20 rows);
    /// ignores the grid flags
    #[arg(long)]
    pub reference_table: bool,
    /// Also write the table as CSV to this path
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub constraints: ConstraintArgs,
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    /// Configuration as d,w,B
    #[arg(long, value_parser = parse_arch)]
    pub arch: ArchConfig,
    /// Input channels
    #[arg(long, default_value_t = 4)]
    pub c_in: usize,
    /// Output channels
    #[arg(long, default_value_t = 3)]
    pub c_out: usize,
}

impl ArchArgs {
    pub fn config(&self) -> ArchConfig {
        self.arch.with_channels(self.c_in, self.c_out)
    }
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Image height in pixels
    #[arg(long, default_value_t = 256)]
    pub height_px: usize,
    /// Image width in pixels
    #[arg(long, default_value_t = 256)]
    pub width_px: usize,
    /// Count the channel-attention parameters
    #[arg(long)]
    pub with_sca: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EntropyKindArg {
    Modified,
    Deepmad,
}

#[derive(Debug, Args)]
pub struct EntropyArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Score variant
    #[arg(long, value_enum, default_value = "modified")]
    pub kind: EntropyKindArg,
    /// Image height in pixels (deepmad only)
    #[arg(long, default_value_t = 256)]
    pub height_px: usize,
    /// Image width in pixels (deepmad only)
    #[arg(long, default_value_t = 256)]
    pub width_px: usize,
}

#[derive(Debug, Args)]
pub struct PatternArgs {
    /// Built-in pattern (bayer, quad, nona, hybridevs) or a pattern JSON file
    #[arg(long, default_value = "bayer")]
    pub pattern: String,
    /// Pattern phase offset as row,col in pixels
    #[arg(long, value_parser = parse_pair, default_value = "0,0")]
    pub phase: (usize, usize),
}

#[derive(Debug, Args)]
pub struct MosaicArgs {
    /// RGB input image (.png, .pfm or .tensor)
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub pattern: PatternArgs,
    /// Sensor noise preset (none, iso400, iso800, iso1600, iso3200)
    #[arg(long, default_value = "none")]
    pub noise: NoisePreset,
    /// Also write the network input with one-hot CFA planes to <out>.input.tensor
    #[arg(long)]
    pub append_cfa: bool,
    /// Bits per sample for PNG output
    #[arg(long, default_value_t = 16, value_parser = parse_bits)]
    pub bits: u8,
}

#[derive(Debug, Args)]
pub struct DemosaicArgs {
    /// Single-channel mosaic (.png, .pfm or .tensor)
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub pattern: PatternArgs,
    /// Trained checkpoint directory; bilinear interpolation when omitted
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Bits per sample for PNG output
    #[arg(long, default_value_t = 16, value_parser = parse_bits)]
    pub bits: u8,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Run every check (the default)
    #[arg(long)]
    pub all: bool,
    /// Keep only checks whose name contains this text
    #[arg(long)]
    pub filter: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LossArg {
    Mse,
    Psnr,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mse => LossKind::Mse,
            LossArg::Psnr => LossKind::Psnr,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Adam steps [default: 2000 for train-toy, 3000 for compare]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adam learning rate per step [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Patches per step [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training loss [default: psnr]
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Loss curve sampling interval in steps [default: 50]
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Procedural patch side in pixels [default: 48]
    #[arg(long)]
    pub patch_px: Option<usize>,
    /// CFA pattern name or file [default: bayer]
    #[arg(long)]
    pub pattern: Option<String>,
    /// Noise preset [default: none]
    #[arg(long)]
    pub noise: Option<NoisePreset>,
    /// Enable the channel-attention ablation
    #[arg(long)]
    pub with_sca: bool,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Training spec JSON; flags override its fields
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Architecture as d,w,B [default: 2,16,2]
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<ArchConfig>,
    /// Number of training patches [default: 8]
    #[arg(long)]
    pub count: Option<usize>,
    /// Append one-hot CFA planes to the input
    #[arg(long)]
    pub append_cfa: bool,
    /// Save trained weights to the directory <out>.ckpt (needs --out)
    #[arg(long)]
    pub save_checkpoint: bool,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Experiment spec JSON; flags override its fields
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// First arm as d,w,B [default: 1,12,3]
    #[arg(long, value_parser = parse_arch)]
    pub arch_a: Option<ArchConfig>,
    /// Second arm as d,w,B [default: 2,16,7]
    #[arg(long, value_parser = parse_arch)]
    pub arch_b: Option<ArchConfig>,
    /// Training patches [default: 64]
    #[arg(long)]
    pub train_count: Option<usize>,
    /// Held-out patches [default: 16]
    #[arg(long)]
    pub val_count: Option<usize>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction image or directory of images
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth image or directory with matching file names
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write per-image rows and the mean as CSV to this path
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Peak signal value
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Sweep table, run record(s) or report JSON
    #[arg(long = "in", required_unless_present = "reference_table")]
    pub input: Option<PathBuf>,
    /// Report the search-results table straight from the solver
    #[arg(long, conflicts_with = "input")]
    pub reference_table: bool,
}

fn parse_list(s: &str, n: usize) -> Result<Vec<usize>, String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} comma-separated integers, got {}", v.len()));
    }
    Ok(v)
}

pub fn parse_arch(s: &str) -> Result<ArchConfig, String> {
    let v = parse_list(s, 3)?;
    Ok(ArchConfig::new(v[0], v[1], v[2]))
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let v = parse_list(s, 2)?;
    Ok((v[0], v[1]))
}

fn parse_bits(s: &str) -> Result<u8, String> {
    match s {
        "8" => Ok(8),
        "16" => Ok(16),
        _ => Err("bits must be 8 or 16".into()),
    }
}
