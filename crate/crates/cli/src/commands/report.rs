use std::path::PathBuf;

use clap::Args;
use dtnt_core::train::read_confusion;

use super::write_results;
use crate::error::{CliError, Result};
use crate::run::create_dir;

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// confusion.csv files from train or eval runs; rows are concatenated in order.
    #[arg(long = "input", value_name = "PATH", required = true)]
    inputs: Vec<PathBuf>,
    /// Directory receiving confusion.csv, report.csv and report.md.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

pub fn run(args: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for path in &args.inputs {
        rows.extend(read_confusion(path)?);
    }
    if rows.is_empty() {
        return Err(CliError::Failed("inputs contain no results".into()));
    }
    create_dir(&args.out)?;
    write_results(&args.out, &rows)?;
    log::info!("{} rows written to {}", rows.len(), args.out.display());
    Ok(())
}
