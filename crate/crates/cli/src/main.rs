use std::process::ExitCode;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    ExitCode::from(spi::harness::cli::run_cli(&argv) as u8)
}
