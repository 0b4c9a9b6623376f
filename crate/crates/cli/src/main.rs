//! `hsd`: runs the hate-speech detection pipeline one stage at a time.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Ctx, Provider};
use error::CliError;

#[derive(Parser)]
#[command(name = "hsd", version, about = "Multilingual hate-speech detection pipeline")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory every stage reads from and writes to.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Translation and LLM backend.
    #[arg(long, global = true, value_enum, default_value_t = Provider::Mock)]
    provider: Provider,
    /// Overrides `features.idf_mode`.
    #[arg(long, global = true, value_parser = ["literal", "log"])]
    idf_mode: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write the seeded toy corpora, resources and config to --out.
    GenToy,
    /// Validate the three input corpora and copy them into the run.
    Ingest,
    /// Corpus statistics.
    Stats,
    /// Serve the annotation API.
    AnnotateServe,
    /// Inter-annotator agreement over the annotation log.
    Kappa,
    /// Translate every corpus into the other two languages.
    Translate,
    /// Build the combined and joint corpora.
    Align,
    /// Stratified train/test split of every corpus.
    Split,
    /// Clean, tokenize, filter and stem.
    Preprocess,
    /// TF-IDF matrices and GloVe vectors.
    Featurize,
    /// Train and apply the SVM and attention classifiers.
    Train,
    /// Few-shot LLM classification.
    ClassifyLlm,
    /// Score every prediction file against the test labels.
    Evaluate,
    /// Render the metrics, confusion and improvement tables.
    Report,
}

fn run(cli: Cli) -> Result<(), CliError> {
    if cli.command == Command::GenToy {
        return commands::gen_toy_cmd(&cli.out, cli.seed.unwrap_or(0));
    }
    let config = cli
        .config
        .ok_or_else(|| CliError::Usage("--config is required for this command".into()))?;
    let ctx = Ctx::new(&config, cli.out, cli.seed, cli.idf_mode, cli.provider)?;
    match cli.command {
        Command::GenToy => unreachable!(),
        Command::Ingest => commands::ingest(&ctx),
        Command::Stats => commands::stats(&ctx),
        Command::AnnotateServe => commands::annotate_serve(&ctx),
        Command::Kappa => commands::kappa(&ctx),
        Command::Translate => commands::translate(&ctx),
        Command::Align => commands::align(&ctx),
        Command::Split => commands::split(&ctx),
        Command::Preprocess => commands::preprocess(&ctx),
        Command::Featurize => commands::featurize(&ctx),
        Command::Train => commands::train(&ctx),
        Command::ClassifyLlm => commands::classify_llm(&ctx),
        Command::Evaluate => commands::evaluate(&ctx),
        Command::Report => commands::report_cmd(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
