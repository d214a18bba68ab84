use std::process::ExitCode;

fn main() -> ExitCode {
    defx::cli::main_with_args(std::env::args_os())
}
