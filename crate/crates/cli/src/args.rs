use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "skinaux",
    version,
    about = "Multimodal skin-lesion classification with an auxiliary super-resolution task"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (images, metadata CSV, schema).
    Synth(SynthArgs),
    /// Apply color constancy, CLAHE and resizing to every image of a dataset.
    Preprocess(PreprocessArgs),
    /// Train a model and write checkpoints and history.
    Train(TrainArgs),
    /// Score a checkpoint on one partition and write the report files.
    Evaluate(EvaluateArgs),
    /// Classify a single image with its metadata record.
    Predict(PredictArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed for data generation, splitting, initialization and training.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory holding `metadata.csv`, `schema.json` and `images/`.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Metadata CSV (default: <data-dir>/metadata.csv).
    #[arg(long)]
    pub metadata: Option<PathBuf>,
    /// Schema JSON (default: <data-dir>/schema.json).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// CSV of `sample_id,partition` rows fixing the split.
    #[arg(long)]
    pub split_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub samples_per_class: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Resize to 224 × 224.
    #[arg(long)]
    pub paper_scale: bool,
    /// Output extent in pixels.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub skip_clahe: bool,
    #[arg(long)]
    pub skip_color_constancy: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Source of the super-resolution target.
    #[arg(long, value_parser = ["bilinear", "bicubic", "file"])]
    pub sr_method: Option<String>,
    /// How image and metadata features are combined.
    #[arg(long, value_parser = ["multiply", "concat", "image_only"])]
    pub fusion: Option<String>,
    /// Cross-entropy expression to minimize.
    #[arg(long, value_parser = ["as_written", "categorical"])]
    pub ce_form: Option<String>,
    /// Weight of the classification loss.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the super-resolution loss.
    #[arg(long)]
    pub beta: Option<f64>,
    /// 224 px input with five encoder stages.
    #[arg(long)]
    pub paper_scale: bool,
    /// Model input extent; defaults to the size recorded by `preprocess`.
    #[arg(long)]
    pub input_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Partition to score.
    #[arg(long, default_value = "test", value_parser = ["train", "val", "test"])]
    pub partition: String,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Raw image; preprocessed with the checkpoint's settings unless
    /// `--preprocessed` is given.
    #[arg(long)]
    pub image: PathBuf,
    /// CSV with a header and one row holding the metadata fields.
    #[arg(long)]
    pub record: PathBuf,
    /// The image has already been through `preprocess`.
    #[arg(long)]
    pub preprocessed: bool,
    /// Also write `prediction.json` here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
