use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(csanet::commands::run(std::env::args_os()))
}
