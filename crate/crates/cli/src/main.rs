use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = lsta_cli::Cli::parse();
    match lsta_cli::run(cli, &mut std::io::stdout()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
