use std::process::ExitCode;

use clap::Parser;
use gan_sentinel::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match gan_sentinel::run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(gan_sentinel::EXIT_ERROR as u8)
        }
    }
}
