use std::process::ExitCode;

fn main() -> ExitCode {
    brachisto::cli::main_with(std::env::args_os())
}
