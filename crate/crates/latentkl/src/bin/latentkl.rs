use std::process::ExitCode;

fn main() -> ExitCode {
    latentkl::cli::main()
}
