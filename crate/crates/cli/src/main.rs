//! `nscl`: dataset generation, training, evaluation, experiment suites,
//! few-shot concept addition, querying, planning and metric export.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nscl::learning::suite::SuiteKind;

#[derive(Parser, Debug)]
#[command(name = "nscl", version, about = "Concept learning over synthetic scenes")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON config document; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random stream [default: 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for generation and evaluation; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate scenes, questions and captions.
    Gen {
        #[arg(long)]
        out: PathBuf,
        /// Number of questions.
        #[arg(long)]
        size: Option<usize>,
        /// Number of captions.
        #[arg(long)]
        captions: Option<usize>,
        /// Store features in scenes.jsonl instead of recomputing them on load.
        #[arg(long)]
        embed_features: bool,
    },
    /// Curriculum training from a generated dataset directory.
    Train {
        /// Directory with scenes.jsonl and qa.jsonl.
        #[arg(long)]
        data: PathBuf,
        /// Optional validation directory in the same format.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Maximum epochs per curriculum stage.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Evaluate a checkpoint on a dataset directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment suite.
    Suite {
        #[arg(value_parser = parse_suite)]
        kind: SuiteKind,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint for the retrieval suite; trained from scratch when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Training questions.
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        test_size: Option<usize>,
        /// Comma-separated training fractions.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        captions: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Add a new concept from a few examples with everything else frozen.
    Fewshot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        word: String,
        #[arg(long, default_value = "color")]
        namespace: String,
        #[arg(long)]
        shots: Option<usize>,
        /// Dataset directory whose accuracy is compared before and after.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Answer a question about one scene.
    Query {
        /// scenes.jsonl file.
        #[arg(long)]
        scene: PathBuf,
        /// Scene id in the file [default: the first scene].
        #[arg(long)]
        scene_id: Option<u64>,
        #[arg(long)]
        question: String,
        /// Checkpoint for soft execution; ground truth is used when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Print every program node's value.
        #[arg(long)]
        trace: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan a tabletop goal such as `left(a,b) & red(a)`.
    Plan {
        /// Tabletop state JSON.
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        goal: String,
        #[arg(long)]
        depth: Option<usize>,
        /// Checkpoint whose concepts verify the goal after execution.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a metrics file to CSV or JSON.
    Export {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

fn parse_suite(s: &str) -> Result<SuiteKind, String> {
    SuiteKind::from_name(s).ok_or_else(|| format!("unknown suite `{s}` (data-efficiency, compositional, retrieval)"))
}

/// Bad input that argument parsing could not catch, such as an unreadable config.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// The error chain joined by `: `, skipping causes the previous message already quotes.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
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
    let jobs = cli.global.jobs;
    match nscl::par::with_jobs(jobs, move || commands::run(&cli.global, cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}
