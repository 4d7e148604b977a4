use std::process::ExitCode;

fn main() -> ExitCode {
    utmsim::cli::main_impl()
}
