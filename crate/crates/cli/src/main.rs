use std::process::ExitCode;

use bolm::Cli;
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match bolm::run(&cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
