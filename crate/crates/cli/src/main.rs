use std::collections::HashMap;
use std::process::ExitCode;

use ftct_cli::{execute, parse_cli, EXIT_CONFIG};
use ftct_core::clock::Shutdown;

fn main() -> ExitCode {
    let env: HashMap<String, String> = std::env::vars().collect();
    let invocation = match parse_cli(std::env::args_os(), &env) {
        Ok(inv) => inv,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };

    let shutdown = Shutdown::new();
    let handler = shutdown.clone();
    if let Err(e) = ctrlc::set_handler(move || handler.trigger()) {
        eprintln!("ftct: cannot install signal handler: {e}");
    }

    match execute(invocation, shutdown) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ftct: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
