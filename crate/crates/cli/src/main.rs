//! `rtmd`: command-line front end for the depth runtime.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rtmd::bench::BenchMode;
use rtmd::config::{Resolution, Variant};

#[derive(Parser, Debug)]
#[command(
    name = "rtmd",
    version,
    about = "Real-time monocular depth inference, evaluation and benchmarking"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write deterministic He-normal weights for an architecture to an RTMD file.
    InitWeights(InitArgs),
    /// Predict a 16-bit depth PNG from one RGB image.
    Infer(InferArgs),
    /// Time forward passes with warm-up and report latency statistics.
    Bench(BenchArgs),
    /// Score predicted depth PNGs against ground truth paired by file name.
    Eval(EvalArgs),
    /// Print parameter and MAC totals and the per-layer table.
    ArchInfo(ArchInfoArgs),
    /// Evaluate the self-supervised loss on a sample bundle.
    LossCheck(LossCheckArgs),
    /// Print the resolved architecture as TOML.
    DumpConfig(ArchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ArchArgs {
    /// Built-in preset: rt-monodepth or rt-monodepth-s.
    #[arg(long, default_value = "rt-monodepth", conflicts_with = "config")]
    pub variant: Variant,
    /// Architecture TOML file; overrides --variant.
    #[arg(long, value_name = "TOML")]
    pub config: Option<PathBuf>,
    /// Input resolution as WIDTHxHEIGHT, e.g. 640x192.
    #[arg(long, value_name = "WxH")]
    pub resolution: Option<Resolution>,
}

#[derive(Args, Debug, Clone)]
pub struct WeightsArgs {
    /// RTMD weight file; random weights from --seed when omitted.
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    /// Seed for random weights when --weights is not given.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Ignore weight entries that match no slot instead of failing.
    #[arg(long)]
    pub allow_extra: bool,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Random seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Store tensors as f16.
    #[arg(long)]
    pub f16: bool,
    /// Output RTMD file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub weights: WeightsArgs,
    /// 8-bit RGB PNG or binary PPM at the network resolution.
    #[arg(long, value_name = "IMAGE")]
    pub input: PathBuf,
    /// Output 16-bit depth PNG (depth * 256).
    #[arg(long, value_name = "PNG")]
    pub out: PathBuf,
    /// Also write raw little-endian f32 depth values.
    #[arg(long, value_name = "FILE")]
    pub raw: Option<PathBuf>,
    /// Depth at disparity 1.
    #[arg(long, default_value_t = 0.1)]
    pub min_depth: f32,
    /// Depth at disparity 0.
    #[arg(long, default_value_t = 100.0)]
    pub max_depth: f32,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub weights: WeightsArgs,
    /// Untimed warm-up forwards.
    #[arg(long, default_value_t = rtmd::bench::DEFAULT_WARMUP)]
    pub warmup: usize,
    /// Timed forwards.
    #[arg(long, default_value_t = rtmd::bench::DEFAULT_ITERS)]
    pub iters: usize,
    /// online (batch 1) or offline (batch N).
    #[arg(long, default_value = "online")]
    pub mode: BenchMode,
    /// Images per forward call.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Run every supervision head instead of only the full-resolution one.
    #[arg(long)]
    pub all_heads: bool,
    /// Write per-iteration times as CSV.
    #[arg(long, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of predicted 16-bit depth PNGs.
    #[arg(long, value_name = "DIR")]
    pub pred: PathBuf,
    /// Directory of ground-truth 16-bit depth PNGs.
    #[arg(long, value_name = "DIR")]
    pub gt: PathBuf,
    /// Lower bound of the evaluated depth range (exclusive).
    #[arg(long, default_value_t = rtmd::eval::DEFAULT_MIN_DEPTH)]
    pub min_depth: f64,
    /// Upper bound of the evaluated depth range (inclusive).
    #[arg(long, default_value_t = rtmd::eval::DEFAULT_MAX_DEPTH)]
    pub max_depth: f64,
    /// Scale each prediction by median(gt) / median(pred) first.
    #[arg(long)]
    pub median_scale: bool,
    /// Restrict to the Garg crop of each image.
    #[arg(long, conflicts_with = "crop")]
    pub garg_crop: bool,
    /// Restrict to the pixel rectangle TOP,BOTTOM,LEFT,RIGHT (half-open).
    #[arg(long, value_name = "T,B,L,R", value_parser = parse_crop)]
    pub crop: Option<rtmd::eval::Crop>,
    /// Emit JSON instead of a text table.
    #[arg(long)]
    pub json: bool,
    /// Write the report here instead of stdout.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ArchInfoArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    /// Emit JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct LossCheckArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub weights: WeightsArgs,
    /// JSON sidecar naming the target, source images, poses and intrinsics.
    #[arg(long, value_name = "JSON")]
    pub bundle: PathBuf,
    /// Emit JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

fn parse_crop(s: &str) -> Result<rtmd::eval::Crop, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("`{p}`: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [top, bottom, left, right] => Ok(rtmd::eval::Crop {
            top,
            bottom,
            left,
            right,
        }),
        _ => Err(format!(
            "expected four comma-separated values, got {}",
            parts.len()
        )),
    }
}

fn init_threads() {
    let Ok(value) = std::env::var("RTMD_THREADS") else {
        return;
    };
    match value.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
            {
                log::warn!("could not size the thread pool: {e}");
            }
        }
        _ => log::warn!("ignoring RTMD_THREADS={value:?}; expected a positive integer"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    init_threads();
    let result = match cli.command {
        Command::InitWeights(a) => commands::init_weights(a),
        Command::Infer(a) => commands::infer(a),
        Command::Bench(a) => commands::bench(a),
        Command::Eval(a) => commands::eval(a),
        Command::ArchInfo(a) => commands::arch_info(a),
        Command::LossCheck(a) => commands::loss_check(a),
        Command::DumpConfig(a) => commands::dump_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
