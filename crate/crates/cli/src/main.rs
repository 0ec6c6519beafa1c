use std::process::ExitCode;

fn main() -> ExitCode {
    skewkurt_cli::main_entry()
}
