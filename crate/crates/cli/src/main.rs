use std::process::ExitCode;

use clap::Parser;
use loid_cli::{exit_code, init_logging, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.global.verbose);
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((e, diagnostics)) => {
            eprintln!("error[{:?}]: {e}", e.category());
            if let Some(p) = diagnostics {
                eprintln!("diagnostics: {}", p.display());
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
