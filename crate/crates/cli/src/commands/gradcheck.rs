use clap::Args;
use dtnt_core::gradcheck::suite;

use crate::error::{CliError, Result};

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = 10)]
    instances: usize,
    /// Only run checks whose name contains this text.
    #[arg(long)]
    filter: Option<String>,
}

pub fn run(args: GradcheckArgs) -> Result<()> {
    if args.instances == 0 {
        return Err(CliError::Usage("--instances must be at least 1".into()));
    }
    let checks: Vec<_> = suite::registry()
        .into_iter()
        .filter(|c| args.filter.as_deref().is_none_or(|f| c.name.contains(f)))
        .collect();
    if checks.is_empty() {
        return Err(CliError::Usage("no check matches the filter".into()));
    }
    let results = suite::run(&checks, args.instances);
    println!("check,level,instances,max_rel_error,tolerance,status");
    for r in &results {
        let status = match (&r.error, r.passed()) {
            (Some(e), _) => format!("ERROR {e}"),
            (None, true) => "PASS".into(),
            (None, false) => "FAIL".into(),
        };
        println!(
            "{},{},{},{:.3e},{:.0e},{status}",
            r.name,
            r.level.as_str(),
            r.instances,
            r.max_rel_error,
            r.tolerance()
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} gradient checks failed",
            results.len()
        )));
    }
    Ok(())
}
