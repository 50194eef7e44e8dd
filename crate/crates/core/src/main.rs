use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ninformer::cli::run(std::env::args_os()))
}
