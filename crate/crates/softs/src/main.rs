use std::process::ExitCode;

fn main() -> ExitCode {
    softs::cli::run()
}
