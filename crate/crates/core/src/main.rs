use std::process::ExitCode;

fn main() -> ExitCode {
    mimo_iwf::cli::parse_and_dispatch(std::env::args_os())
}
