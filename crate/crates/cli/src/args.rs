use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "abmil",
    version,
    about = "Attention-based MIL for whole-slide treatment response",
    long_about = "Attention-based multiple-instance learning for whole-slide treatment response.\n\n\
        All randomness derives from --seed; results do not depend on --workers.\n\
        Exit codes: 0 success, 1 input error, 2 validation error, 3 runtime failure."
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Base seed for every random stream; overrides a config file's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Outputs are identical for any value.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only log errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    /// Append timestamped log lines to this file instead of stderr.
    #[arg(long, global = true)]
    pub log_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort (bags, manifests, ground truth).
    Synth(SynthArgs),
    /// Otsu tissue masks and thumbnails for slide images.
    Segment(SegmentArgs),
    /// Segment slide images and tile them into tissue regions.
    Tile(TileArgs),
    /// Cross-validate one configuration and keep the fold models.
    Train(TrainArgs),
    /// Staged grid search over hyperparameters.
    Tune(TuneArgs),
    /// Metrics with bootstrap intervals for a predictions file.
    Eval(EvalArgs),
    /// Train the k-member ensemble on a whole cohort.
    Ensemble(EnsembleArgs),
    /// Attention heatmaps and confounding summaries.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Cohort spec (TOML); keys left out take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub patients: Option<usize>,
    /// Signal shift in σ.
    #[arg(long)]
    pub effect: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Monte Carlo slides for the Bayes-optimal AUC (0 skips it).
    #[arg(long, default_value_t = abmil_core::synth::DEFAULT_BAYES_SAMPLES)]
    pub bayes_samples: usize,
    /// Also write this many synthetic slide images with ground-truth masks.
    #[arg(long, default_value_t = 0)]
    pub images: usize,
    /// Side length of synthetic slide images, in pixels.
    #[arg(long, default_value_t = 512)]
    pub image_size: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ChannelArg {
    Saturation,
    Luminance,
}

#[derive(Debug, Args)]
pub struct SegmentFlags {
    /// Channel thresholded by Otsu.
    #[arg(long, value_enum, default_value = "saturation")]
    pub channel: ChannelArg,
    /// Mask downsampling factor.
    #[arg(long, default_value_t = abmil_core::preprocess::DEFAULT_MASK_DOWNSAMPLE)]
    pub downsample: u32,
    /// Skip the 3×3 majority smoothing.
    #[arg(long)]
    pub no_smooth: bool,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Image file or directory of PNG/PPM images.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seg: SegmentFlags,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Image file or directory of PNG/PPM images.
    #[arg(long)]
    pub input: PathBuf,
    /// Region manifest CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub seg: SegmentFlags,
    /// Region side length in slide pixels.
    #[arg(long, default_value_t = abmil_core::preprocess::DEFAULT_REGION_SIZE)]
    pub region_size: u32,
    /// Minimum tissue fraction for a region to be kept.
    #[arg(long, default_value_t = abmil_core::preprocess::DEFAULT_MIN_TISSUE_FRACTION)]
    pub min_tissue: f64,
    /// Treat a slide smaller than one region as a single region.
    #[arg(long)]
    pub pad_small: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Cohort directory (cohort.csv plus bags).
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training config (TOML); defaults to the final tuned configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    /// Reuse a saved split plan instead of drawing one.
    #[arg(long)]
    pub splits: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Grid file (TOML or JSON).
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LevelArg {
    Slide,
    Patient,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions CSV (slide_id, patient_id, label, prob_effective).
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = abmil_core::metrics::DEFAULT_BOOTSTRAP_ITERATIONS)]
    pub iterations: usize,
    /// Bootstrap resampling unit.
    #[arg(long, value_enum, default_value = "slide")]
    pub level: LevelArg,
    /// Probability at or above which a slide is called effective.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = abmil_core::harness::DEFAULT_ENSEMBLE_MEMBERS)]
    pub members: usize,
    /// Labelled cohort to score with the trained ensemble.
    #[arg(long)]
    pub test_cohort: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Model stem (`<stem>.abmc`) or a directory of models whose attention is averaged.
    #[arg(long)]
    pub model: PathBuf,
    /// Region manifest CSV; defaults to `<cohort>/regions.csv`.
    #[arg(long)]
    pub regions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory of `<slide_id>.png` thumbnails; blank canvases otherwise.
    #[arg(long)]
    pub thumbnails: Option<PathBuf>,
    /// Slide pixels per thumbnail pixel.
    #[arg(long, default_value_t = abmil_core::preprocess::THUMBNAIL_DOWNSAMPLE)]
    pub thumbnail_scale: u32,
    #[arg(long, default_value_t = abmil_core::heatmap::DEFAULT_ALPHA)]
    pub alpha: f64,
    /// Clip attention to these percentiles before normalizing, e.g. `1,99`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub percentile: Option<Vec<f64>>,
    /// Only these slides (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub slides: Option<Vec<String>>,
}
