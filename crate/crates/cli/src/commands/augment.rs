use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use dtnt_core::data::{read_png, write_png};
use dtnt_core::fog::{apply_fog, FogParams};

use crate::config::{render, Settings};
use crate::error::{CliError, Result};
use crate::run::{write_run_files, write_text};
use crate::ConfigArgs;

const KEYS: [&str; 3] = ["beta", "in", "out"];
pub const MANIFEST_HEADER: &str = "filename,beta,clamp_count";

#[derive(Args, Debug)]
pub struct AugmentArgs {
    /// Fog strength.
    #[arg(long)]
    beta: Option<String>,
    /// Input directory; searched recursively for PNG files.
    #[arg(long = "in", value_name = "DIR")]
    input: Option<PathBuf>,
    /// Output directory mirroring the input tree.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

/// PNG files under `dir`, relative to it, sorted. `skip` is not descended into.
fn png_files(dir: &Path, skip: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| CliError::io(&d, e))? {
            let path = entry.map_err(|e| CliError::io(&d, e))?.path();
            if path.is_dir() {
                if path != skip {
                    stack.push(path);
                }
            } else if path
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
            {
                found.push(
                    path.strip_prefix(dir)
                        .expect("walk stays under root")
                        .to_path_buf(),
                );
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn run(args: AugmentArgs) -> Result<()> {
    let s = Settings::layered(
        args.config.config.as_deref(),
        vec![
            ("beta", args.beta),
            ("in", args.input.map(|p| p.display().to_string())),
            ("out", args.out.map(|p| p.display().to_string())),
        ],
        &args.config.set,
        |k| KEYS.contains(&k),
    )?;
    let beta: f64 = s
        .get("beta")
        .ok_or_else(|| CliError::Usage("missing required `beta`".into()))?
        .parse()
        .map_err(|_| {
            dtnt_core::Error::Config(format!(
                "invalid value `{}` for `beta`",
                s.get("beta").unwrap_or_default()
            ))
        })?;
    let input = s.require_path("in")?;
    let out = s.require_path("out")?;
    if !input.is_dir() {
        return Err(CliError::Usage(format!(
            "{} is not a directory",
            input.display()
        )));
    }
    let mut resolved = render(&[
        ("beta", beta.to_string()),
        ("in", input.display().to_string()),
        ("out", out.display().to_string()),
    ]);
    resolved.push_str("# transmission clamped to [0, 1]; fogged values clamped to [0, 1]\n");
    write_run_files(&out, "augment", &resolved)?;

    let files = png_files(&input, &out)?;
    let mut manifest = format!("{MANIFEST_HEADER}\n");
    let mut total_clamps = 0;
    for rel in &files {
        let image = read_png(&input.join(rel))?;
        let s = image.shape();
        let fogged = apply_fog(&image, &FogParams::new(beta, s[1], s[2])?)?;
        write_png(&out.join(rel), &fogged.image)?;
        let name = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let _ = writeln!(manifest, "{name},{beta},{}", fogged.clamp_count());
        total_clamps += fogged.clamp_count();
    }
    write_text(&out.join("manifest.csv"), &manifest)?;
    log::info!(
        "fogged {} images at beta {beta}; {total_clamps} clamped values",
        files.len()
    );
    Ok(())
}
