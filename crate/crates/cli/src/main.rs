//! `halluspan`: annotate hallucinated spans with an LLM ensemble, score
//! predictions against gold labels, and inspect single items.

mod annotate;
mod config;
mod evaluate;
mod inspect;

use std::io::IsTerminal;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  usage, input or configuration error
  2  partial failure: some items could not be annotated
  3  API key environment variable not set
  4  ids differ between files, or the requested id is unknown";

#[derive(Parser)]
#[command(name = "halluspan", version, about, after_help = EXIT_CODES)]
struct Cli {
    /// Log more (-v: info, -vv: debug). Logs go to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Annotate a dataset and write prediction JSONL.
    Annotate(AnnotateArgs),
    /// Score predictions against gold labels.
    Evaluate(EvaluateArgs),
    /// Show one item with its predicted (and gold) spans bracketed.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
pub struct AnnotateArgs {
    /// Dataset JSONL with id, lang, model_input, model_output_text.
    #[arg(long)]
    pub input: PathBuf,
    /// Where to write prediction JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// TOML file with pipeline settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Chat model name sent to the provider.
    #[arg(long)]
    pub model: Option<String>,
    /// Provider preset: mock, openai or deepseek.
    #[arg(long)]
    pub provider: Option<String>,
    /// Annotation runs per item [default: 12].
    #[arg(long)]
    pub runs: Option<usize>,
    /// Hard-label threshold on the vote proportion [default: 0.5].
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Sampling temperature of the annotation runs [default: 1.0].
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Use a single generic annotator role instead of assigned ones.
    #[arg(long)]
    pub no_roles: bool,
    /// Skip keyword extraction and Wikipedia retrieval.
    #[arg(long)]
    pub no_external: bool,
    /// Minimum similarity between a marked reply and the answer [default: 0.7].
    #[arg(long)]
    pub min_similarity: Option<f64>,
    /// Persist LLM responses here and reuse them on later runs.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    /// Upper bound on concurrent items and on concurrent runs per item.
    #[arg(long)]
    pub max_parallel: Option<usize>,
    /// Directory with replacement prompt templates.
    #[arg(long)]
    pub prompts_dir: Option<PathBuf>,
    /// JSON script for the mock provider (and mock Wikipedia).
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Wikipedia base URL; `{lang}` is replaced by the language code.
    #[arg(long)]
    pub wiki_base: Option<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Prediction JSONL.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold JSONL with model_output_text, hard_labels and soft_labels.
    #[arg(long)]
    pub gold: PathBuf,
    /// JSON report path [default: <pred>.report.json].
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Prediction JSONL.
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold JSONL; also supplies the answer text.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Dataset JSONL supplying the answer text when no gold file is given.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Item to show.
    #[arg(long)]
    pub id: String,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            error: error.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: 1, error }
    }
}

pub const EXIT_PARTIAL: u8 = 2;
pub const EXIT_MISSING_KEY: u8 = 3;
pub const EXIT_IDS: u8 = 4;

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
}

fn main() -> ExitCode {
    // clap would exit with 2 on usage errors, which is taken by partial failure
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    let result = match cli.command {
        Command::Annotate(args) => {
            let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
            runtime.block_on(annotate::run(args))
        }
        Command::Evaluate(args) => evaluate::run(args),
        Command::Inspect(args) => inspect::run(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}
