use std::process::ExitCode;

use clap::Parser;
use nvsim_cli::{configure_threads, run, Cli};

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&argv);
    let result = configure_threads().and_then(|()| run(&cli, &argv));
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("nvsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
