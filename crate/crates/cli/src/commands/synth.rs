use std::path::PathBuf;

use clap::Args;
use dtnt_core::data::{synth_generate, write_dataset};

use crate::config::{render, Settings};
use crate::error::{CliError, Result};
use crate::run::write_run_files;
use crate::ConfigArgs;

const KEYS: [&str; 3] = ["n", "seed", "out"];

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Images per class.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Output directory; receives `sedan/` and `pickup/` folders.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn run(args: SynthArgs) -> Result<()> {
    let s = Settings::layered(
        args.config.config.as_deref(),
        vec![
            ("n", args.n),
            ("seed", args.seed),
            ("out", args.out.map(|p| p.display().to_string())),
        ],
        &args.config.set,
        |k| KEYS.contains(&k),
    )?;
    let n: usize = s.parse_or("n", 16)?;
    let seed: u64 = s.parse_or("seed", 0)?;
    let out = s.require_path("out")?;
    if n == 0 {
        return Err(CliError::Usage("n must be at least 1".into()));
    }
    let ds = synth_generate(n, seed);
    write_dataset(&ds, &out)?;
    let resolved = render(&[
        ("n", n.to_string()),
        ("seed", seed.to_string()),
        ("out", out.display().to_string()),
    ]);
    write_run_files(&out, "synth", &resolved)?;
    log::info!("wrote {} images to {}", ds.len(), out.display());
    Ok(())
}
