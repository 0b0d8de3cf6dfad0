//! `fairprobe`: train models, search them for individual discrimination,
//! explain predictions, retrain on findings and compare runs.

mod commands;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "fairprobe", version, about = "Individual-fairness testing for black-box classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a built-in model on a dataset.
    Train(TrainArgs),
    /// Search a model for discriminatory inputs.
    Test(TestArgs),
    /// Print the ranked local explanation of one sample.
    Explain(ExplainArgs),
    /// Augment the data with findings, retrain and report before/after.
    Retrain(RetrainArgs),
    /// Compare per-run DSS of two groups of runs.
    Compare(CompareArgs),
    /// Diversity projection and summary table over runs.
    Report(ReportArgs),
    /// Re-check every record of a run against its model.
    Verify(VerifyArgs),
    /// Serve a model over the adapter protocol on stdin/stdout or TCP.
    Serve(ServeArgs),
    /// Write a synthetic benchmark dataset and schema.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelChoice {
    Logistic,
    Mlp,
    Bow,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long, value_enum)]
    pub model: ModelChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub neurons: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Ga,
    Random,
}

/// Model and knowledge sources shared by several subcommands.
#[derive(Args, Clone)]
pub struct SourceArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    /// Model file from `train`, or `planted` for the built-in benchmark classifier.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Adapter: `tcp://host:port` or a shell command speaking the protocol on stdio.
    #[arg(long)]
    pub external: Option<String>,
    /// Comma-separated protected attributes; overrides the schema's set.
    #[arg(long, value_delimiter = ',')]
    pub protected: Vec<String>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 0.7)]
    pub expand_threshold: f64,
}

/// Engine parameters; unset values fall back to per-mode defaults.
#[derive(Args, Clone)]
pub struct EngineArgs {
    /// Rank threshold, or `auto` for the 20th-percentile heuristic.
    #[arg(long, default_value = "auto")]
    pub epsilon: String,
    #[arg(long)]
    pub cr: Option<f64>,
    #[arg(long)]
    pub mr: Option<f64>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub budget_seconds: Option<f64>,
    /// Stop after this many discriminatory checks.
    #[arg(long)]
    pub tsn_budget: Option<u64>,
    #[arg(long, default_value_t = 1000)]
    pub seed_num: usize,
    /// Text population fan-out.
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ModeChoice::Ga)]
    pub mode: ModeChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub n_perturb: Option<usize>,
}

#[derive(Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Re-run from a saved `run_config.json`; other source and engine flags are ignored.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: PathBuf,
    #[arg(long)]
    pub model_file: PathBuf,
    #[arg(long)]
    pub index: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_perturb: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LabelChoice {
    Majority,
    Original,
}

#[derive(Args)]
pub struct RetrainArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,
    #[arg(long, value_enum, default_value_t = LabelChoice::Majority)]
    pub label_policy: LabelChoice,
    /// Share of the data held out for normal-sample accuracy.
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Training epochs for the retrained model. Model files do not store
    /// the original count, so this falls back to the model kind's default.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub runs_a: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub runs_b: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct VerifyArgs {
    /// Run directory holding `run_config.json` and `records.csv`.
    #[arg(long)]
    pub run: PathBuf,
}

#[derive(Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub schema: PathBuf,
    /// Model file, or `planted`.
    #[arg(long)]
    pub model_file: PathBuf,
    /// Listen on this address for one TCP client instead of using stdio.
    #[arg(long)]
    pub listen: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SynthKind {
    Planted,
    Census,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Make the planted region rare in the data.
    #[arg(long)]
    pub skewed: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status for a failure: 2 for I/O, data-format and adapter
/// problems, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    use fairprobe::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Io(_)
                | E::Csv(_)
                | E::Json(_)
                | E::AdapterDown(_)
                | E::ProtocolViolation { .. }
                | E::AdapterError { .. }
                | E::MalformedRow { .. }
                | E::MalformedTriple { .. }
                | E::EmptyCorpus => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if let Some(f) = cause.downcast_ref::<commands::VerifyFailed>() {
            return f.exit_code();
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Test(a) => commands::test(a),
        Command::Explain(a) => commands::explain(a),
        Command::Retrain(a) => commands::retrain(a),
        Command::Compare(a) => commands::compare(a),
        Command::Report(a) => commands::report(a),
        Command::Verify(a) => commands::verify(a),
        Command::Serve(a) => commands::serve(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
