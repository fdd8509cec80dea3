use std::process::ExitCode;

fn main() -> ExitCode {
    fracal::cli::main()
}
