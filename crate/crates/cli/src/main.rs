//! `bandnet`: synthesize, featurize, train, evaluate and verify
//! mixed-bandwidth acoustic models.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use bandnet::Error;
use clap::{Args, Parser, Subcommand};
use log::{error, info};

#[derive(Debug, Parser)]
#[command(name = "bandnet", version, about = "Mixed-bandwidth acoustic modeling toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Worker threads for per-utterance and per-batch parallelism.
    #[arg(long, global = true, env = "BANDNET_JOBS")]
    jobs: Option<usize>,
    /// Require bit-reproducible output. Reduction order is always fixed, so
    /// this only records the request in the log.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Log more (repeat for trace output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic two-bandwidth corpus.
    Synth(SynthArgs),
    /// Compute log-mel features for a manifest.
    Featurize(FeaturizeArgs),
    /// Train a model under one of the AM1-AM4 regimes.
    Train(TrainArgs),
    /// Score a model on a labeled test set.
    Eval(EvalArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate one embeddings model per embedding size.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus spec (TOML); defaults apply to omitted fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the spec's root seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// native, upsample-16k, downsample-8k, or a regime name (AM1-AM4).
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training scenario (TOML).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Feature file produced by `featurize`.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training state file to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Overrides the scenario's regime.
    #[arg(long)]
    pub regime: Option<String>,
    /// Overrides the scenario's model variant.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Test feature file.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub features: Option<PathBuf>,
    /// Test manifest, featurized the way the model expects.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory for report.tsv and table.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Row label in the table.
    #[arg(long)]
    pub label: Option<String>,
    /// fer (frame error rate) or ter (token error rate).
    #[arg(long, default_value = "fer")]
    pub metric: String,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Model config (TOML); reduced dimensions by default.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Variant name, or `all`.
    #[arg(long, default_value = "all")]
    pub variant: String,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of consecutive seeds.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 2)]
    pub batch: usize,
    /// Elements sampled per tensor (0 checks every element).
    #[arg(long, default_value_t = 64)]
    pub elements: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub tol: f64,
    /// Perturbs the analytic gradient of one tensor.
    #[arg(long, hide = true)]
    pub corrupt_tensor: Option<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated embedding sizes, reported in the given order.
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Training feature file.
    #[arg(long)]
    pub train: PathBuf,
    /// Test feature file.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "fer")]
    pub metric: String,
}

/// Outcome of a command that ran to completion.
pub enum Status {
    Success,
    /// A check ran and failed.
    Failed,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        e if e.is_config() => 2,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.global.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            error!("cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    info!(
        "jobs {}, deterministic {}",
        rayon::current_num_threads(),
        cli.global.deterministic
    );
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Featurize(a) => commands::featurize(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Failed) => ExitCode::from(1),
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
