use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ldct_cli::run(std::env::args_os()))
}
