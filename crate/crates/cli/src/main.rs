mod args;
mod commands;
mod resolve;

use std::process::ExitCode;

use clap::Parser;
use mimalloc::MiMalloc;

use args::{AnalysisCommand, Cli, Command};
use commands::Outcome;

#[global_allocator]
static GLOBAL: MiMalloc = MiMalloc;

/// Exit status for failed sweep cells or a failed gradient check.
const EXIT_FAILED: u8 = 1;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::TrainTeacher(a) => commands::train_teacher_cmd(a),
        Command::Distill(a) => commands::distill_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Sweep(a) => commands::sweep_cmd(a),
        Command::Gradcheck(a) => commands::gradcheck_cmd(a),
        Command::Analysis(AnalysisCommand::Cka(a)) => commands::cka_cmd(a),
        Command::Analysis(AnalysisCommand::Report(a)) => commands::report_cmd(a),
        Command::Version => {
            println!("rsd {}", env!("RSD_BUILD_ID"));
            Ok(Outcome::Ok)
        }
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed(f)) => {
            eprintln!("error: {}", f.0);
            ExitCode::from(EXIT_FAILED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
