mod commands;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "mia", version, about = "Multi-granularity image-text alignment for description-based person retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic attribute-person corpus.
    GenData(commands::data::GenDataArgs),
    /// Train one step, or all remaining steps, of the step-wise schedule.
    Train(commands::train::TrainArgs),
    /// Text-to-image retrieval metrics on a split.
    Eval(commands::eval::EvalArgs),
    /// Rank a split's images against a free-text caption.
    Retrieve(commands::eval::RetrieveArgs),
    /// Evaluate s_F over a grid of λ1 × λ2.
    Sweep(commands::eval::SweepArgs),
    /// Finite-difference check of the step-2 and step-3 losses.
    GradCheck(commands::gradcheck::GradCheckArgs),
    /// Print the noun phrases of each caption in a text file.
    Chunk(commands::data::ChunkArgs),
}

/// Options shared by commands that read a corpus split.
#[derive(Args, Clone, Debug)]
pub struct CorpusArgs {
    /// Corpus directory (defaults to the one recorded in the checkpoint).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Split to evaluate: train, val or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Content-word lexicon TSV replacing the built-in one.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::data::gen_data(a),
        Command::Train(a) => commands::train::train(a),
        Command::Eval(a) => commands::eval::eval(a),
        Command::Retrieve(a) => commands::eval::retrieve(a),
        Command::Sweep(a) => commands::eval::sweep(a),
        Command::GradCheck(a) => commands::gradcheck::grad_check(a),
        Command::Chunk(a) => commands::data::chunk(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
