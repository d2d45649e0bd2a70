//! `pfb`: run, resume, inspect and ablate partial forward blocking experiments.

mod app;

use std::process::ExitCode;

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let code = app::main_with_args(&argv);
    ExitCode::from(code)
}
