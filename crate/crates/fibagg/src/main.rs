use std::process::ExitCode;

fn main() -> ExitCode {
    fibagg::cli::run()
}
