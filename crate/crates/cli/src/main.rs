mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "switchnet",
    version,
    about = "Train, sample and evaluate deep switch networks on binary data"
)]
pub struct Cli {
    /// Base seed for every random stream of the run
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Directory for outputs (created if missing)
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    /// Run configuration file (`key = value` lines); flags override it
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a dataset
    #[command(subcommand)]
    GenData(GenData),
    /// Train a model on a dataset
    Train(TrainArgs),
    /// Draw samples from a trained model
    Sample(SampleArgs),
    /// Evaluate models and samples
    #[command(subcommand)]
    Eval(Eval),
    /// Check analytic gradients and the MCMC estimator
    Gradcheck(GradcheckArgs),
}

#[derive(Subcommand, Debug)]
pub enum GenData {
    /// Random distribution over {0,1}^n plus i.i.d. samples from it
    Synthetic {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 100_000)]
        count: usize,
        /// Extra held-out samples written to `test.txt`
        #[arg(long, default_value_t = 0)]
        test_count: usize,
    },
    /// Binarized MNIST images from an IDX3 file (plain or gzip)
    Mnist {
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value_t = switchnet::data::MNIST_THRESHOLD)]
        threshold: u8,
        /// Keep only the central s×s window
        #[arg(long)]
        crop: Option<usize>,
        /// Keep only the first images
        #[arg(long)]
        limit: Option<usize>,
    },
    /// 40-bit encodings of a word list (one word per line)
    Words {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ArchKind {
    Single,
    Two,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GradMode {
    Exact,
    Mcmc,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long, value_enum)]
    pub arch: Option<ArchKind>,
    /// Switch width of a single-layer network
    #[arg(long)]
    pub m: Option<usize>,
    /// First-layer switch width
    #[arg(long)]
    pub m1: Option<usize>,
    /// Number of intermediate variables
    #[arg(long)]
    pub l: Option<usize>,
    /// Second-layer switch width
    #[arg(long)]
    pub m2: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset file
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch")]
    pub batch_size: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    pub grad_mode: Option<GradMode>,
    /// MCMC chains per sample
    #[arg(long)]
    pub r: Option<usize>,
    /// MCMC steps per chain
    #[arg(long)]
    pub t: Option<usize>,
    /// Save a checkpoint every this many epochs
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Train conditionals on all cores
    #[arg(long)]
    pub parallel: bool,
    /// Also write per-conditional NLL traces
    #[arg(long)]
    pub per_k_metrics: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SampleFormat {
    RawBits,
    PgmGrid,
    Words,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Checkpoint file
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = SampleFormat::RawBits)]
    pub format: SampleFormat,
    /// Output file (default: `samples.<ext>` in the output directory)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Eval {
    /// Exact NLL, TV and JS of a model against a distribution table
    TableMetrics {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        table: PathBuf,
        /// Label used in reports
        #[arg(long)]
        name: Option<String>,
    },
    /// Mean negative log-likelihood of a dataset
    TestNll {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Fraction of sampled words found in a lexicon
    DictRatio {
        /// Word samples, one per line
        #[arg(long)]
        samples: PathBuf,
        /// Word list; its distinct words form the lexicon
        #[arg(long)]
        lexicon: PathBuf,
    },
    /// Train single-layer models across switch widths; emit train/test NLL
    Sweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 4, 8, 32])]
        ms: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long = "batch", default_value_t = 1000)]
        batch_size: usize,
        #[arg(long = "lr", default_value_t = 10.0)]
        learning_rate: f64,
    },
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random instances for the finite-difference check
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    /// Chain counts for the MCMC comparison
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 10, 50])]
    pub r: Vec<usize>,
    /// Steps per chain
    #[arg(long, default_value_t = 20)]
    pub t: usize,
    /// Intermediate variables of the MCMC test conditional
    #[arg(long, default_value_t = 8)]
    pub l: usize,
    #[arg(long, default_value_t = 8)]
    pub m1: usize,
    #[arg(long, default_value_t = 4)]
    pub m2: usize,
    /// Samples in the fixed batch
    #[arg(long = "batch", default_value_t = 256)]
    pub batch_size: usize,
    /// Estimator repetitions per r
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 1 {
                eprintln!("run `switchnet --help` for usage");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
