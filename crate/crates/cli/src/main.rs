//! `dravida` command-line interface.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "dravida", version, about = "Multilingual classification with language-weighted adversarial training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the classifier; builds a lexicon first when none is given.
    Train(TrainArgs),
    /// Train the language recognizer and write the language-specific lexicon.
    ExtractLexicon(LexiconArgs),
    /// Evaluate a checkpoint on one split.
    Evaluate(EvalArgs),
    /// Write `language<TAB>gold<TAB>pred` predictions for one split.
    Predict(EvalArgs),
    /// Run the four-rung ablation ladder.
    Ablate(TrainArgs),
    /// Train the full framework once per α value.
    SweepAlpha(SweepArgs),
    /// Render a comparison-table JSON fixture.
    Report(ReportArgs),
    /// Label distribution per language and split.
    Stats(StatsArgs),
    /// Generate the seeded synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Reference hyperparameters.
    Default,
    /// Faster settings tuned for the synthetic corpus.
    Synthetic,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON training configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Default)]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    /// `tiny` or `pretrained:<name>`.
    #[arg(long)]
    backend: Option<String>,
    /// Perturbation weight of language-specific words.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Epochs for the language recognizer (defaults to the training epochs).
    #[arg(long)]
    recognizer_epochs: Option<usize>,
    #[arg(long)]
    monolingual_batches: bool,
    #[arg(long)]
    freeze_encoder: bool,
    /// Update with the perturbed-pass gradient only.
    #[arg(long)]
    adversarial_only_grad: bool,
    /// Weight each sentence's own salient words instead of the per-language list.
    #[arg(long)]
    per_sentence_lexicon: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    /// Lexicon TSV or saliency JSONL from `extract-lexicon`.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    charts: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct LexiconArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint directory.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "dev")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Comma-separated α values.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.1, 1.2, 1.3, 1.4, 1.5])]
    alphas: Vec<f64>,
    #[arg(long)]
    charts: bool,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Comparison-table JSON (`title`, `row_header`, `columns`, `rows`).
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated output formats: `md`, `json`.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["md".to_string(), "json".to_string()])]
    format: Vec<String>,
    #[arg(long)]
    charts: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    train_per_language: usize,
    #[arg(long, default_value_t = 200)]
    dev_per_language: usize,
    #[arg(long, default_value_t = 0)]
    test_per_language: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = err
                .downcast_ref::<dravida_core::Error>()
                .map_or("other", dravida_core::Error::kind);
            let record = serde_json::json!({
                "error": kind,
                "message": format!("{err:#}"),
            });
            eprintln!("{record}");
            ExitCode::from(2)
        }
    }
}
