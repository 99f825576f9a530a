use std::panic;
use std::process::ExitCode;

use bcpnn_cli::args::Cli;
use clap::Parser;

/// Exit code for failures that are bugs rather than bad input.
const INTERNAL: u8 = 5;

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match panic::catch_unwind(|| bcpnn_cli::dispatch(&cli.command)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => ExitCode::from(INTERNAL),
    }
}
