use std::process::ExitCode;

fn main() -> ExitCode {
    loadveil::cli::run(std::env::args_os())
}
