use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;

use stainkit::DEFAULT_EPS;

#[derive(Debug, Parser)]
#[command(name = "stainkit", version, about = "Stain separation, image metrics, loss breakdowns and HER2 retrieval evaluation")]
pub struct Cli {
    /// JSON file with nine numbers (row-major stain matrix) replacing the default basis
    #[arg(long, global = true, value_name = "JSON")]
    pub basis: Option<PathBuf>,

    /// Floor applied to intensities before taking logarithms
    #[arg(long, global = true, default_value_t = DEFAULT_EPS)]
    pub eps: f64,

    /// Output path (PNG for `separate`, JSON report otherwise; stdout if omitted)
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Print a JSON summary on stdout
    #[arg(long, global = true)]
    pub json: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Keep only the selected stain channels of an image (or a directory of PNGs)
    Separate(SeparateArgs),
    /// SSIM, PSNR and MAE between two images
    Metrics(MetricsArgs),
    /// Weighted loss breakdown from images, feature pairs and scalar terms
    Loss(LossArgs),
    /// Top-k retrieval and kNN accuracy of query features against a library
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    /// Input PNG, or a directory whose PNGs are all processed
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,

    /// One of H, E, DAB, HE, HDAB, ALL
    #[arg(long)]
    pub channel: String,
}

#[derive(Debug, Clone, Args)]
pub struct SsimArgs {
    #[arg(long, default_value_t = 11)]
    pub window: usize,
    #[arg(long, default_value_t = 1.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub k1: f64,
    #[arg(long, default_value_t = 0.03)]
    pub k2: f64,
    /// Dynamic range L of the intensities
    #[arg(long = "range", default_value_t = 1.0)]
    pub dynamic_range: f64,
}

impl SsimArgs {
    pub fn params(&self) -> stainkit::SsimParams {
        stainkit::SsimParams {
            window_size: self.window,
            gaussian_sigma: self.sigma,
            k1: self.k1,
            k2: self.k2,
            dynamic_range: self.dynamic_range,
        }
    }
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long, value_name = "PNG")]
    pub a: PathBuf,
    #[arg(long, value_name = "PNG")]
    pub b: PathBuf,
    #[command(flatten)]
    pub ssim: SsimArgs,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Generated IHC image
    #[arg(long, value_name = "PNG", requires = "target")]
    pub generated: Option<PathBuf>,
    /// Ground-truth IHC image
    #[arg(long, value_name = "PNG", requires = "generated")]
    pub target: Option<PathBuf>,

    /// Two-row numeric CSV: hematoxylin encoder features of the H&E and IHC inputs
    #[arg(long, value_name = "CSV")]
    pub h_pair: Option<PathBuf>,
    /// Two-row numeric CSV: comparator features of the generated and ground-truth images
    #[arg(long, value_name = "CSV")]
    pub cmp_pair: Option<PathBuf>,

    /// Comma-separated HER2-level probabilities (4 classes)
    #[arg(long, value_delimiter = ',', requires = "level")]
    pub probs: Option<Vec<f64>>,
    /// True HER2 level (0-3)
    #[arg(long, requires = "probs")]
    pub level: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,

    /// Patch GAN loss at full resolution
    #[arg(long = "gan-512", requires = "gan_256")]
    pub gan_512: Option<f64>,
    /// Patch GAN loss at half resolution
    #[arg(long = "gan-256", requires = "gan_512")]
    pub gan_256: Option<f64>,

    /// JSON object of precomputed terms (h, dab, ssim, mae, cmp, level, gan); overrides computed ones
    #[arg(long, value_name = "JSON")]
    pub components: Option<PathBuf>,
    /// JSON object overriding any of the loss weights
    #[arg(long, value_name = "JSON")]
    pub weights: Option<PathBuf>,

    #[command(flatten)]
    pub ssim: SsimArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ground-truth feature library CSV (id,label,f0,...)
    #[arg(long, value_name = "CSV")]
    pub library: PathBuf,
    /// Query feature CSV in the same format
    #[arg(long, value_name = "CSV")]
    pub queries: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    pub topk: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub knn: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("exit code {}", e.code());
            ExitCode::from(e.code())
        }
    }
}
