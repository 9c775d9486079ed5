use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(gamblet::cli::run(std::env::args()) as u8)
}
