use std::process::ExitCode;

fn main() -> ExitCode {
    invprop_cli::run_cli()
}
