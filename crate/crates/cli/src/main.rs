//! `scan`: command-line front end for the hypergraph video QA pipeline.
//!
//! Exit status is 0 on success, 2 on usage errors (bad flags, unknown
//! config keys) and 1 on everything else.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "scan", version, about = "Syntactic hypergraph alignment for video question answering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic compositional dataset.
    Synth(SynthArgs),
    /// Build the syntactic hypergraph of a parsed question.
    BuildHypergraph(HypergraphArgs),
    /// Align a question's hyperedges with video frames.
    Align(AlignArgs),
    /// Train a model on a dataset manifest.
    Train(TrainArgs),
    /// Evaluate a trained model.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Summarise a feature container, parse, embedding table, manifest or model.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; receives train.jsonl, test.jsonl, embeddings.txt and config.toml.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    arity: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    /// Frames per video.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Syntax {
    Hypergraph,
    WordLevel,
}

#[derive(Args)]
struct HypergraphArgs {
    #[arg(long)]
    conllu: PathBuf,
    /// Zero-based sentence index within the file.
    #[arg(long, default_value_t = 0)]
    sentence: usize,
    #[arg(long, value_enum, default_value_t = Syntax::Hypergraph)]
    syntax: Syntax,
    /// JSON output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the incidence matrix as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ot,
    Dot,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    conllu: PathBuf,
    #[arg(long, default_value_t = 0)]
    sentence: usize,
    /// Embedding table covering the sentence's tokens.
    #[arg(long)]
    embeddings: PathBuf,
    /// Frame feature container.
    #[arg(long)]
    frames: PathBuf,
    /// Clip feature container; only used with --model.
    #[arg(long)]
    clips: Option<PathBuf>,
    /// Trained model whose first block supplies the projections. Without
    /// one, hyperedges and frames are compared in their raw feature space.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long, value_enum)]
    syntax: Option<Syntax>,
    /// JSON output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV output path (one row per hyperedge, one column per frame).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Training manifest (JSONL).
    #[arg(long)]
    train: PathBuf,
    /// Validation manifest, scored after every epoch.
    #[arg(long)]
    valid: Option<PathBuf>,
    /// TOML file of training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set lr=0.05`. Repeatable; applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Per-epoch metrics as JSON lines.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Per-example predictions as JSON lines.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Width of every feature and hidden dimension.
    #[arg(long, default_value_t = 4)]
    dims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = scan_core::pipeline::gradcheck::DEFAULT_TOLERANCE)]
    tol: f64,
    #[arg(long, default_value_t = scan_core::pipeline::gradcheck::DEFAULT_STEP)]
    step: f64,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

/// Misuse of the command line, as opposed to bad data.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::BuildHypergraph(a) => commands::build_hypergraph(a),
        Command::Align(a) => commands::align(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Inspect(a) => commands::inspect(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            // Some causes already quote their source in their own message.
            let mut msg = String::new();
            for cause in e.chain().map(|c| c.to_string()) {
                if !msg.contains(&cause) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&cause);
                }
            }
            eprintln!("error: {msg}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
