use std::process::ExitCode;

fn main() -> ExitCode {
    loghmm::cli::main_with_args(std::env::args_os())
}
