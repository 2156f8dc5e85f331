use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = adschain::cli::Cli::parse();
    match adschain::cli::run(cli, &mut std::io::stdout().lock()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("adschain: {e}");
            ExitCode::from(2)
        }
    }
}
