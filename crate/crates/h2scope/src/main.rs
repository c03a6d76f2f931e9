use std::process::ExitCode;

fn main() -> ExitCode {
    h2scope::cli::run()
}
