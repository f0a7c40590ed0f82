use std::path::PathBuf;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "csalign", version, about = "CS / GCS divergence alignment tools")]
pub struct Cli {
    /// Force the single-threaded reference path.
    #[arg(long, global = true, action = ArgAction::Set, num_args = 0..=1,
          default_value_t = true, default_missing_value = "true")]
    pub deterministic: bool,

    /// Manifest destination. Defaults to `<out-dir>/manifest.json` when the
    /// command has an output directory, stderr otherwise.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Divergence between PMF vector files or embedding matrix files.
    Divergence(DivergenceArgs),
    /// Randomized invariant checks for CS and GCS.
    Props(PropsArgs),
    /// Train encoders on synthetic multimodal data.
    Train(TrainArgs),
    /// Train once per ring strategy and compare.
    Ablate(TrainArgs),
    /// PMF construction counts and timing, circular vs pairwise.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Measure {
    Cs,
    Gcs,
    Kl,
    Mmd,
    Coral,
}

impl Measure {
    pub fn name(self) -> &'static str {
        match self {
            Measure::Cs => "cs",
            Measure::Gcs => "gcs",
            Measure::Kl => "kl",
            Measure::Mmd => "mmd",
            Measure::Coral => "coral",
        }
    }
}

#[derive(Debug, Args)]
pub struct DivergenceArgs {
    #[arg(long, value_enum)]
    pub measure: Measure,

    /// PMF files (cs, gcs, kl) or embedding files (mmd, coral).
    #[arg(required = true, num_args = 2..)]
    pub files: Vec<PathBuf>,

    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Embedding CSVs carry a trailing integer label column to drop.
    #[arg(long)]
    pub label_col: bool,

    /// KL smoothing constant.
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,

    /// MMD kernel width: a positive number or `median`.
    #[arg(long, default_value = "median")]
    pub bandwidth: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    FlipGcsSign,
}

#[derive(Debug, Args)]
pub struct PropsArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Test hook that corrupts GCS so the suite must fail.
    #[arg(long, value_enum)]
    pub inject_fault: Option<Fault>,

    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// key=value config file; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,

    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 2)]
    pub min_m: usize,

    #[arg(long, default_value_t = 8)]
    pub max_m: usize,

    /// Samples per modality.
    #[arg(long, default_value_t = 64)]
    pub n: usize,

    /// Embedding width.
    #[arg(long, default_value_t = 16)]
    pub d: usize,

    /// Timed loss evaluations per M (after one warm-up).
    #[arg(long, default_value_t = 20)]
    pub reps: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}
