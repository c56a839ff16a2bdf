use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use softdepth::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) => {
            let mut out = std::io::stdout().lock();
            // a closed pipe is not worth reporting
            let _ = out.write_all(outcome.stdout.as_bytes());
            if outcome.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
