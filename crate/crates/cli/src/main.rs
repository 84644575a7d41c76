use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{
    AnalyzeArgs, BiaslabArgs, ExtractArgs, GenerateArgs, IngestArgs, PipelineArgs, SurprisalArgs,
    TrainArgs,
};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "lexinfo", version, about = "Where in a word is the information?")]
struct Cli {
    /// JSON file with defaults for the subcommand's options; flags win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a lexicon from a wordlist (one word per line).
    Ingest(IngestArgs),
    /// Build a lexicon from the most frequent types of a raw corpus.
    Extract(ExtractArgs),
    /// Train a model on a lexicon's training split.
    Train(TrainArgs),
    /// Score a lexicon split with a trained model.
    Surprisal(SurprisalArgs),
    /// Statistical reports over surprisal records or lexicons.
    Analyze(AnalyzeArgs),
    /// Plug-in entropy bias on synthetic iid lexicons.
    Biaslab(BiaslabArgs),
    /// Write a synthetic lexicon.
    Generate(GenerateArgs),
    /// Ingest, train, score and analyze in one run.
    Pipeline(PipelineArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = cli.config.as_deref();
    match cli.command {
        Command::Ingest(a) => commands::ingest(a, file),
        Command::Extract(a) => commands::extract(a, file),
        Command::Train(a) => commands::train(a, file),
        Command::Surprisal(a) => commands::surprisal(a, file),
        Command::Analyze(a) => commands::analyze(a, file),
        Command::Biaslab(a) => commands::biaslab(a, file),
        Command::Generate(a) => commands::generate(a, file),
        Command::Pipeline(a) => commands::pipeline(a, file),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numeric = err
        .chain()
        .filter_map(|e| e.downcast_ref::<lexinfo::Error>())
        .any(lexinfo::Error::is_numeric);
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_INPUT
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
