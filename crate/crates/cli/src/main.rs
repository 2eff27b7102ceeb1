use std::process::ExitCode;

use rdmc_cli::{execute, parse_invocation, UsageError, EXIT_USAGE};

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("RDMC_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .map_err(|_| format!("RDMC_THREADS must be a non-negative integer, got `{value}`"))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(EXIT_USAGE as u8);
    }
    let code = match parse_invocation(std::env::args_os()) {
        Ok(manifest) => execute(&manifest),
        Err(e @ UsageError::Display(_)) => {
            print!("{e}");
            e.exit_code()
        }
        Err(e) => {
            eprint!("{e}");
            if !e.to_string().ends_with('\n') {
                eprintln!();
            }
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
