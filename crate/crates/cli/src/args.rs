use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fieldforge::mosaic::SoilRatio;

use crate::DATA_ROOT_ENV;

#[derive(Debug, Parser)]
#[command(name = "fieldforge", version, about = "Synthetic field imagery, box fusion and evaluation tooling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count images per class in a label table.
    Stats(StatsArgs),
    /// Per-class synthesis quota that balances a label table.
    Plan(PlanArgs),
    /// Generate novel close-up images to fill the balance quota.
    Synthesize(SynthesizeArgs),
    /// Assemble mosaic field images with annotation tables.
    Generate(GenerateArgs),
    /// Apply CutMix to a directory of mosaics.
    Augment(AugmentArgs),
    /// Fuse JSON box lists with NMS or weighted boxes fusion.
    Fuse(FuseArgs),
    /// Print the learning rate schedule as `epoch,lr` CSV.
    LrDump(LrDumpArgs),
    /// Confusion matrix, per-class scores, detection confidences and bounds.
    Evaluate(EvaluateArgs),
    /// Run the identifier → classifier pipeline over generated fields.
    Simulate(SimulateArgs),
    /// Start the HTTP prediction service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Label table (`image_id,healthy,multiple_diseases,rust,scab`). Without
    /// it the procedural demo corpus is used.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Directory holding the images named in the label table.
    #[arg(long, env = DATA_ROOT_ENV)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub labels: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub labels: PathBuf,
    /// Per-class target count (default: the majority class count).
    #[arg(long)]
    pub target: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, env = DATA_ROOT_ENV)]
    pub images: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<usize>,
    /// Pre-generated images laid out as `<dir>/<class>/*.png`; the built-in
    /// flip/rotate/brightness generator is used otherwise.
    #[arg(long)]
    pub generator_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Expected `soil:leaf` cell ratio; `0:1` disables soil.
    #[arg(long, default_value = "1:5")]
    pub soil_ratio: SoilRatio,
    /// PNG soil texture; a procedural one is used otherwise.
    #[arg(long)]
    pub soil_texture: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Directory of `train_<k>.png` / `train_<k>.csv` pairs.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub probability: f64,
    #[arg(long, default_value_t = 0)]
    pub epoch: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FuseMethod {
    Nms,
    Wbf,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// JSON files holding either one box list or a list of box lists.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FuseMethod::Wbf)]
    pub method: FuseMethod,
    #[arg(long, default_value_t = 0.55)]
    pub iou: f64,
    /// Number of prediction sources for WBF score rescaling (default: the
    /// number of lists read).
    #[arg(long)]
    pub source_count: Option<usize>,
    /// Output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LrDumpArgs {
    #[arg(long)]
    pub epochs: u32,
    #[arg(long, default_value_t = 1e-5)]
    pub lr_start: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr_max: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub lr_min: f64,
    #[arg(long, default_value_t = 5)]
    pub ramp_epochs: u32,
    #[arg(long, default_value_t = 0)]
    pub sustain_epochs: u32,
    #[arg(long, default_value_t = 0.8)]
    pub decay: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Support {
    Predicted,
    Actual,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Confusion matrix JSON (`{"classes": [...], "counts": [[...]]}`).
    #[arg(long, conflicts_with = "predictions")]
    pub confusion: Option<PathBuf>,
    /// Classifier predictions as `image_id,label` CSV; needs `--labels`.
    #[arg(long, requires = "labels")]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Identifier boxes (JSON box list) for one mosaic; needs `--annotations`.
    #[arg(long, requires = "annotations")]
    pub detections: Option<PathBuf>,
    /// Annotation CSV of the mosaic the detections were made on.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pub match_iou: f64,
    /// Identifier accuracy for the composed bounds; needs a classifier
    /// accuracy, from `--classifier-accuracy` or the confusion matrix.
    #[arg(long)]
    pub identifier_accuracy: Option<f64>,
    #[arg(long)]
    pub classifier_accuracy: Option<f64>,
    #[arg(long, value_enum, default_value_t = Support::Predicted)]
    pub support: Support,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClassifierKind {
    /// Ground-truth oracle with `--error-rate` mistakes.
    Oracle,
    /// Nearest-centroid colour histogram model trained on a held-in split.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IdentifierKind {
    /// Ground-truth oracle with `--miss-rate` / `--false-alarm-rate`.
    Oracle,
    /// Per-tile baseline classifier with TTA.
    Baseline,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 10)]
    pub fields: usize,
    #[arg(long, value_enum, default_value_t = IdentifierKind::Oracle)]
    pub identifier: IdentifierKind,
    #[arg(long, value_enum, default_value_t = ClassifierKind::Oracle)]
    pub classifier: ClassifierKind,
    #[arg(long, default_value_t = 0.245)]
    pub miss_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub false_alarm_rate: f64,
    #[arg(long, default_value_t = 0.037)]
    pub error_rate: f64,
    /// Share one random stream between identifier and classifier oracles so
    /// classifier errors fall on tiles the identifier already missed.
    #[arg(long)]
    pub correlated: bool,
    /// Fraction of the corpus held out from baseline training and used to
    /// build the fields.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include per-tile diagnoses in the report.
    #[arg(long)]
    pub diagnoses: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Minimum diseased probability for the identifier to flag a tile.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Run the identifier through flip/rotate test-time augmentation.
    #[arg(long)]
    pub tta: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
