use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rsd_core::models::Family;
use rsd_core::train::Objective;

#[derive(Debug, Parser)]
#[command(name = "rsd", version, about = "Cross-architecture distillation with redundancy suppression")]
pub struct Cli {
    /// Log per-epoch progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a teacher with cross-entropy and keep its best-test-accuracy weights.
    TrainTeacher(RunArgs),
    /// Train a student against a frozen teacher checkpoint.
    Distill(RunArgs),
    /// Accuracy of a checkpoint on one split.
    Eval(EvalArgs),
    /// Distill every (lambda, kappa, expansion, seed) cell of a grid.
    Sweep(SweepArgs),
    /// Finite-difference check of every differentiable op and the full objective.
    Gradcheck(GradcheckArgs),
    /// Representation similarity and ablation tables.
    #[command(subcommand)]
    Analysis(AnalysisCommand),
    /// Print the build identifier.
    Version,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AadArg {
    Auto,
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApplyToArg {
    Penultimate,
    Logits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

/// Flags that also appear in a `--config` file. All are optional so that an
/// explicit flag can be told apart from a default.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// Data URI: synth://gauss?C=3&n=100&size=16&seed=7, idx:<dir> or csv:<dir> [default: synth://gauss?C=3&n=100&size=16&seed=7]
    #[arg(long)]
    pub data: Option<String>,
    /// Teacher checkpoint (required by every objective except ce)
    #[arg(long)]
    pub teacher: Option<PathBuf>,
    /// Model family [default: cnn for train-teacher, mixer for distill]
    #[arg(long)]
    pub family: Option<Family>,
    /// Penultimate embedding width [default: 32]
    #[arg(long)]
    pub embed_dim: Option<usize>,
    /// Number of blocks [default: 3 for cnn, 2 otherwise]
    #[arg(long)]
    pub depth: Option<usize>,
    /// Base channels (cnn) or hidden MLP width (token models) [default: 8 for cnn, 2×embed-dim otherwise]
    #[arg(long)]
    pub width: Option<usize>,
    /// Patch side for token models [default: 4]
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Training objective: ce, kd, feature_mse, rsd, rsd_logits [default: ce for train-teacher, rsd for distill]
    #[arg(long)]
    pub objective: Option<Objective>,
    /// Optimizer [default: sgd-momentum for cnn, adam otherwise]
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerKind>,
    /// Base learning rate [default: 0.05 for sgd-momentum, 0.001 for adam]
    #[arg(long)]
    pub lr: Option<f64>,
    /// SGD momentum [default: 0.9]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Weight decay [default: 5e-4 for sgd-momentum, 0 for adam]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Learning-rate schedule [default: cosine]
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    /// Epochs [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size, at least 2 [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Seed for initialization and shuffling [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the distillation term [default: 2]
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Off-diagonal weight of the redundancy term [default: 0.005]
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Decoupler expansion factor [default: 4]
    #[arg(long)]
    pub expansion: Option<f64>,
    /// Softmax temperature of the kd objective [default: 4]
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Embedding the rsd objective compares [default: penultimate]
    #[arg(long, value_enum)]
    pub apply_to: Option<ApplyToArg>,
    /// Decoupler use: auto builds one only when widths differ [default: auto]
    #[arg(long, value_enum)]
    pub aad: Option<AadArg>,
    /// Same as --aad off
    #[arg(long, conflicts_with = "aad")]
    pub no_aad: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Run configuration as JSON (the `config` object of a summary.json)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Let explicit flags replace values from --config
    #[arg(long, requires = "config")]
    pub r#override: bool,
    /// Run directory for config.json, metrics.jsonl, summary.json and ckpt/
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Model checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Data URI [default: synth://gauss?C=3&n=100&size=16&seed=7]
    #[arg(long)]
    pub data: Option<String>,
    /// Split to score
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Also write per-example logits and labels as CSV
    #[arg(long)]
    pub logits: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated lambda values
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambdas: Vec<f64>,
    /// Comma-separated kappa values [default: 0.005]
    #[arg(long, value_delimiter = ',')]
    pub kappas: Vec<f64>,
    /// Comma-separated expansion factors [default: 4]
    #[arg(long, value_delimiter = ',')]
    pub expansions: Vec<f64>,
    /// Comma-separated seeds [default: 0]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Random instances per op
    #[arg(long, default_value_t = 5)]
    pub trials: usize,
    /// Base seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Maximum accepted relative error
    #[arg(long, default_value_t = rsd_autograd::gradcheck::GRAD_TOLERANCE)]
    pub tolerance: f64,
}

#[derive(Debug, Subcommand)]
pub enum AnalysisCommand {
    /// Linear CKA between every teacher and student tap point over the test split.
    Cka(CkaArgs),
    /// Ablation tables from the summary.json files under a directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CkaArgs {
    /// Teacher checkpoint (grid rows)
    #[arg(long)]
    pub teacher: PathBuf,
    /// Student checkpoint (grid columns)
    #[arg(long)]
    pub student: PathBuf,
    /// Data URI whose test split is the probe set [default: synth://gauss?C=3&n=100&size=16&seed=7]
    #[arg(long)]
    pub data: Option<String>,
    /// grid.csv, or grid.csv,grid.pgm to also write an image
    #[arg(long, value_delimiter = ',', num_args = 1..=2, required = true)]
    pub out: Vec<PathBuf>,
    /// Comma-separated teacher taps [default: all]
    #[arg(long, value_delimiter = ',')]
    pub teacher_taps: Vec<String>,
    /// Comma-separated student taps [default: all]
    #[arg(long, value_delimiter = ',')]
    pub student_taps: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Directory searched recursively for summary.json
    #[arg(long)]
    pub runs: PathBuf,
    /// CSV output
    #[arg(long)]
    pub out: PathBuf,
}
