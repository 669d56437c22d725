//! Writes a synthetic raw dataset: `make_fixture DIR [N] [SIZE] [SEED]`.

use std::path::PathBuf;
use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(dir) = args.first().map(PathBuf::from) else {
        eprintln!("usage: make_fixture DIR [N] [SIZE] [SEED]");
        return ExitCode::FAILURE;
    };
    let num = |i: usize, default: u64| args.get(i).map_or(Ok(default), |s| s.parse::<u64>());
    let (n, size, seed) = match (num(1, 10), num(2, 96), num(3, 0)) {
        (Ok(n), Ok(size), Ok(seed)) => (n, size, seed),
        _ => {
            eprintln!("N, SIZE and SEED must be non-negative integers");
            return ExitCode::FAILURE;
        }
    };
    match eyemark::data::synthetic::write_fixture(&dir, n as usize, size as usize, seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
