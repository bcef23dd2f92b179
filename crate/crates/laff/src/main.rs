use std::process::ExitCode;

use laff::cli::{parse_args, run_command};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let invocation = match parse_args(&args) {
        Ok(inv) => inv,
        Err(e) => {
            eprintln!("laff: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run_command(&invocation.command, &invocation.config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("laff {}: {e}", invocation.command);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
