use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = carp3d::cli::Cli::parse();
    match carp3d::cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
