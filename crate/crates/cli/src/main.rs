//! `trackmpnn` command-line tool: synthesize data, train, track and
//! evaluate.

use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

mod eval;
mod synth;
mod track;
mod train;
mod util;

#[derive(Parser)]
#[command(name = "trackmpnn", version, about = "Online multi-object tracking with a message-passing graph network")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train(train::TrainArgs),
    /// Track every detection file in a directory.
    Track(track::TrackArgs),
    /// CLEAR-MOT scores of result files against ground truth.
    Eval(eval::EvalArgs),
    /// Write synthetic ground truth and detections.
    Synth(synth::SynthArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Track(a) => track::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
