//! `gc` -- saliency-grounded slot tracking over dense feature maps.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 data/format error,
//! 4 internal invariant violation.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gc_core::Error;

#[derive(Parser)]
#[command(
    name = "gc",
    version,
    about = "Grounded slot discovery and Hungarian identity tracking for feature-map videos"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: features.gct, labels.gct, manifest.json
    Gen(GenArgs),
    /// Compute a saliency field (and optionally seeds) for stored features
    Saliency(SaliencyArgs),
    /// Track objects over a feature sequence: masks.gct, diagnostics.jsonl
    Track(TrackArgs),
    /// Evaluate predicted masks against ground truth (JSON on stdout)
    Eval(EvalArgs),
    /// Print per-frame-pair identity diagnostics as JSON lines
    Diagnose(DiagnoseArgs),
    /// Run several modes and compare their metrics side by side
    Compare(CompareArgs),
}

#[derive(Args, Clone)]
pub struct SaliencyFlags {
    /// Background penalty weight alpha
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Chebyshev neighborhood radius in patches
    #[arg(long)]
    pub radius: Option<usize>,
    /// Scoring strategy: grounded | norm | pca
    #[arg(long)]
    pub strategy: Option<String>,
    /// Component count for the pca strategy
    #[arg(long)]
    pub pca_components: Option<usize>,
    /// Count the center patch as its own neighbor
    #[arg(long)]
    pub include_center: bool,
}

#[derive(Args, Clone)]
pub struct BindingFlags {
    /// Attention iterations on the first frame
    #[arg(long)]
    pub iters_first: Option<usize>,
    /// Attention iterations on later frames
    #[arg(long)]
    pub iters_rest: Option<usize>,
    /// Logit scale override (default 1/sqrt(D))
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Slot update rule: weighted-mean | external-gru
    #[arg(long)]
    pub update_rule: Option<String>,
    /// Weights manifest for external-gru
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct PipelineFlags {
    /// grounded-correspondence | identity-propagation | independent-discovery | content-blind
    #[arg(long)]
    pub mode: Option<String>,
    /// Slot count
    #[arg(long)]
    pub k: Option<usize>,
    /// Seed for content-blind queries
    #[arg(long)]
    pub seed: Option<u64>,
    /// L2-normalize each patch feature before processing
    #[arg(long)]
    pub pre_normalize: bool,
}

#[derive(Args)]
pub struct GenArgs {
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    /// Feature dimension
    #[arg(long)]
    pub dim: Option<usize>,
    /// Number of objects
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub radius_min: Option<f64>,
    #[arg(long)]
    pub radius_max: Option<f64>,
    #[arg(long)]
    pub speed_min: Option<f64>,
    #[arg(long)]
    pub speed_max: Option<f64>,
    /// Per-coordinate Gaussian noise sigma
    #[arg(long)]
    pub noise: Option<f64>,
    /// Minimum pairwise cosine distance between prototypes
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Allow blobs to overlap (z-order rendering)
    #[arg(long)]
    pub allow_overlap: bool,
    /// Build exactly equidistant (simplex) prototypes
    #[arg(long)]
    pub symmetric_prototypes: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// JSON config file merged under explicit flags
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct SaliencyArgs {
    /// Features container (GCT1)
    pub features: PathBuf,
    #[command(flatten)]
    pub saliency: SaliencyFlags,
    /// Also select this many seeds per frame into seeds.json
    #[arg(long)]
    pub k: Option<usize>,
    /// L2-normalize each patch feature before processing
    #[arg(long)]
    pub pre_normalize: bool,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrackArgs {
    /// Features container (GCT1)
    pub features: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[command(flatten)]
    pub saliency: SaliencyFlags,
    #[command(flatten)]
    pub binding: BindingFlags,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Predicted masks (GCT1 labels)
    pub pred: PathBuf,
    /// Ground-truth masks (GCT1 labels)
    pub truth: PathBuf,
    /// image | video | both
    #[arg(long, default_value = "both")]
    pub level: String,
}

#[derive(Args)]
pub struct DiagnoseArgs {
    /// Features container (GCT1)
    pub features: PathBuf,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[command(flatten)]
    pub saliency: SaliencyFlags,
    #[command(flatten)]
    pub binding: BindingFlags,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct CompareArgs {
    /// Features container (GCT1)
    pub features: PathBuf,
    /// Ground-truth masks (GCT1 labels)
    pub truth: PathBuf,
    /// Comma-separated mode list (default: all four)
    #[arg(long)]
    pub modes: Option<String>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
    #[command(flatten)]
    pub saliency: SaliencyFlags,
    #[command(flatten)]
    pub binding: BindingFlags,
    /// Emit JSON instead of the aligned table
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Input(_) | Error::Format { .. } | Error::Io { .. } => 3,
    }
}

/// GC_THREADS caps internal parallelism; 0 or unset means automatic.
fn configure_threads() -> gc_core::Result<()> {
    if let Ok(value) = std::env::var("GC_THREADS") {
        let n: usize = value.trim().parse().map_err(|_| {
            Error::config(format!(
                "GC_THREADS must be a non-negative integer, got {value:?}"
            ))
        })?;
        if n > 0 {
            // A pool may already exist (repeat initialization); that case
            // keeps the earlier pool.
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
    Ok(())
}

fn run() -> gc_core::Result<()> {
    configure_threads()?;
    let cli = Cli::parse();
    match &cli.command {
        Command::Gen(args) => commands::cmd_gen(args),
        Command::Saliency(args) => commands::cmd_saliency(args),
        Command::Track(args) => commands::cmd_track(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Diagnose(args) => commands::cmd_diagnose(args),
        Command::Compare(args) => commands::cmd_compare(args),
    }
}

fn main() {
    let outcome = std::panic::catch_unwind(run);
    let code = match outcome {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        // The panic payload has already been printed by the default hook.
        Err(_) => 4,
    };
    std::process::exit(code);
}
