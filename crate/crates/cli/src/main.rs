//! `stream-etm`: preprocess corpora, simulate streams, run the online topic
//! model and analyse its output.

mod detect;
mod eval;
mod files;
mod preprocess;
mod run;
mod simulate;
mod toy;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stream_etm::Error;

#[derive(Debug, Parser)]
#[command(name = "stream-etm", version, about = "Streaming embedded topic model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a vocabulary and per-step bag-of-words batches from raw text.
    Preprocess(preprocess::PreprocessArgs),
    /// Generate a topic schedule and sample batches from it.
    Simulate(simulate::SimulateArgs),
    /// Run the stream over every batch.
    Run(run::RunArgs),
    /// Change-point alerts on topic proportion series.
    Detect(detect::DetectArgs),
    /// Coherence/diversity of a run and the merge/discovery benchmark.
    Eval(eval::EvalArgs),
    /// Perturbation toy comparing transport and euclidean matching.
    ToyFig1(toy::ToyArgs),
}

/// 2 usage or I/O, 3 numerical, 4 data format.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::InvalidConfig(_) => 2,
        Error::Numerical(_) | Error::Divergence { .. } | Error::ZeroVector | Error::DegenerateEmbedding => 3,
        Error::EmptyVocabulary
        | Error::Format { .. }
        | Error::Dimension(_)
        | Error::Pool(_)
        | Error::Schedule { .. }
        | Error::Label(_)
        | Error::Json { .. } => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("STREAM_ETM_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess(a) => preprocess::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Run(a) => run::run(a),
        Command::Detect(a) => detect::run(a),
        Command::Eval(a) => eval::run(a),
        Command::ToyFig1(a) => toy::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::from(exit_code(&e))
        }
    }
}
