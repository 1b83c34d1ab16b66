use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use selftime::data::{Delimiter, MissingValues, PretrainOn};

#[derive(Debug, Parser)]
#[command(
    name = "selftime",
    version,
    about = "Self-supervised time-series representation learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain the encoder and relation heads; writes a checkpoint and a per-epoch CSV log.
    Pretrain(PretrainArgs),
    /// Linear evaluation of a frozen pretrained encoder on labeled data.
    EvalLinear(EvalArgs),
    /// Linear evaluation of an encoder pretrained on a different dataset.
    Transfer(EvalArgs),
    /// Fully supervised reference: encoder and classifier trained jointly.
    Supervised(BaselineArgs),
    /// Linear evaluation on an untrained, frozen encoder.
    RandomBaseline(BaselineArgs),
    /// Pretrain and evaluate over a grid of relation class counts and piece ratios.
    Sweep(SweepArgs),
    /// Write original and augmented series side by side as CSV.
    Augment(AugmentArgs),
    /// Exhaustive temporal relation label histogram for one setting.
    RelationLabels(RelationArgs),
    /// Export eval-mode embeddings of a dataset as CSV.
    Embed(EmbedArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DelimiterArg {
    Tab,
    Comma,
    Whitespace,
}

impl From<DelimiterArg> for Delimiter {
    fn from(d: DelimiterArg) -> Self {
        match d {
            DelimiterArg::Tab => Delimiter::Tab,
            DelimiterArg::Comma => Delimiter::Comma,
            DelimiterArg::Whitespace => Delimiter::Whitespace,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MissingArg {
    Interpolate,
    Reject,
}

impl From<MissingArg> for MissingValues {
    fn from(m: MissingArg) -> Self {
        match m {
            MissingArg::Interpolate => MissingValues::Interpolate,
            MissingArg::Reject => MissingValues::Reject,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PretrainOnArg {
    Train,
    All,
}

impl From<PretrainOnArg> for PretrainOn {
    fn from(p: PretrainOnArg) -> Self {
        match p {
            PretrainOnArg::Train => PretrainOn::Train,
            PretrainOnArg::All => PretrainOn::All,
        }
    }
}

/// Input series file.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Series file: one series per line, class label first (UCR layout).
    #[arg(long)]
    pub data: PathBuf,
    /// Archive test file appended after `--data`; its rows become the test
    /// set under `--keep-original-split`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Rows hold values only, no label column.
    #[arg(long)]
    pub unlabeled: bool,
    /// Cell separator; detected from the first line when omitted.
    #[arg(long, value_enum)]
    pub delimiter: Option<DelimiterArg>,
}

/// Training settings. Each flag overrides the config file key of the same
/// name, which overrides the defaults (with the dataset preset applied).
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed [default: $SELFTIME_SEED, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pretraining epochs [default: 400].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 128].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Pretraining learning rate [default: 0.01].
    #[arg(long)]
    pub lr_pretrain: Option<f64>,
    /// Linear classifier learning rate [default: 0.5].
    #[arg(long)]
    pub lr_linear: Option<f64>,
    /// Augmented views per sample [default: 16].
    #[arg(short = 'K', long = "views")]
    pub views: Option<usize>,
    /// Temporal relation classes [default: dataset preset, else 3].
    #[arg(short = 'C', long = "classes")]
    pub classes: Option<usize>,
    /// Piece length as a fraction of the series length [default: dataset preset, else 0.2].
    #[arg(long)]
    pub piece_ratio: Option<f64>,
    /// Linear classifier epochs [default: 400].
    #[arg(long)]
    pub eval_epochs: Option<usize>,
    /// Linear classifiers per split [default: 10].
    #[arg(long)]
    pub trials: Option<usize>,
    /// Random data splits [default: 5].
    #[arg(long)]
    pub splits: Option<usize>,
    /// Piece pairs per sample and step [default: 1].
    #[arg(long)]
    pub pieces_per_sample: Option<usize>,
    /// Sample the relation label uniformly before the piece starts [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub stratified_pieces: Option<bool>,
    /// Rows used for pretraining in protocol runs [default: train].
    #[arg(long, value_enum)]
    pub pretrain_on: Option<PretrainOnArg>,
    /// Z-normalize every series after loading [default: true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub znormalize: Option<bool>,
    /// Evaluate on the archive's own test rows (needs `--test`) [default: false].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub keep_original_split: Option<bool>,
    /// Handling of NaN or empty cells [default: interpolate].
    #[arg(long, value_enum)]
    pub missing_values: Option<MissingArg>,
    /// Comma-separated augmentations applied in order [default: magnitude_warp,time_warp].
    #[arg(long, value_delimiter = ',')]
    pub policy: Option<Vec<String>>,
    /// Worker threads for independent trials and sweep cells; 0 uses every core [default: 0].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct Verbosity {
    /// No progress messages on standard error.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch CSV log file [default: standard output].
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue from this checkpoint up to `--epochs` in total.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also write the checkpoint every N epochs.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[command(flatten)]
    pub verbosity: Verbosity,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Pretrained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Per-trial CSV report [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub verbosity: Verbosity,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Per-trial CSV report [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub verbosity: Verbosity,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Labeled file for linear evaluation [default: the `--data` file].
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Relation class counts, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub c_grid: Vec<usize>,
    /// Piece ratios, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ratio_grid: Vec<f64>,
    /// Result CSV [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub verbosity: Verbosity,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Augmentation names, comma-separated, applied in order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub op: Vec<String>,
    #[command(flatten)]
    pub data: DataArgs,
    /// Only this row (from 0) [default: every row].
    #[arg(long)]
    pub row: Option<usize>,
    /// Seed [default: $SELFTIME_SEED, else 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV `series,t,original,transformed` [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RelationArgs {
    /// Series length T.
    #[arg(long)]
    pub length: usize,
    /// Relation classes C.
    #[arg(long)]
    pub classes: usize,
    /// Piece length L.
    #[arg(long)]
    pub piece: usize,
    /// Output CSV `label,count,fraction` [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Pretrained checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Z-normalize every series after loading [default: true].
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub znormalize: Option<bool>,
    /// Output CSV `id,label,f0..f63` [default: standard output].
    #[arg(long)]
    pub out: Option<PathBuf>,
}
