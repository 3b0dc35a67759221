use std::process::ExitCode;

fn main() -> ExitCode {
    arterial_core::cli::main_with_args(std::env::args_os())
}
