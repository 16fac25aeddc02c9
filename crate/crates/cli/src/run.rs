//! Run directories: thread setup, resolved config and run manifest.

use std::path::Path;

use crate::config::render;
use crate::error::{CliError, Result};

pub const THREADS_ENV: &str = "DTNT_THREADS";

/// Caps the global rayon pool at `DTNT_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = match raw.trim().parse() {
        Ok(n) if n > 0 => n,
        _ => {
            return Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got `{raw}`"
            )))
        }
    };
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::info!("{THREADS_ENV}={n} ignored: built without the `parallel` feature");
    Ok(())
}

pub fn worker_threads() -> usize {
    #[cfg(feature = "parallel")]
    return rayon::current_num_threads();
    #[cfg(not(feature = "parallel"))]
    1
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes `config.txt` (the resolved settings) and `run.txt` (command,
/// arguments, versions, parallelism).
pub fn write_run_files(dir: &Path, command: &str, resolved: &str) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("config.txt"), resolved)?;
    let argv: Vec<String> = std::env::args().collect();
    let manifest = render(&[
        ("command", command.to_string()),
        ("argv", argv.join(" ")),
        ("dtnt_version", env!("CARGO_PKG_VERSION").to_string()),
        (
            "checkpoint_format",
            dtnt_core::model::FORMAT_VERSION.to_string(),
        ),
        ("parallel_feature", cfg!(feature = "parallel").to_string()),
        ("worker_threads", worker_threads().to_string()),
        ("os", std::env::consts::OS.to_string()),
        ("arch", std::env::consts::ARCH.to_string()),
    ]);
    write_text(&dir.join("run.txt"), &manifest)
}
