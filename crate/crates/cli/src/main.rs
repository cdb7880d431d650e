use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(rdream_cli::run(std::env::args_os()))
}
