use std::path::PathBuf;

use clap::Args;
use dtnt_core::data::load_dataset;
use dtnt_core::model::load;

use super::{evaluate_conditions, write_results, DEFAULT_BETAS};
use crate::config::{format_betas, parse_betas, render, Settings};
use crate::error::Result;
use crate::run::write_run_files;
use crate::ConfigArgs;

const KEYS: [&str; 5] = ["checkpoint", "data", "betas", "out", "tag"];

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    /// Dataset root with one PNG folder per class; every image is evaluated.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Fog strengths, comma separated; empty for clean only.
    #[arg(long)]
    betas: Option<String>,
    /// Run directory [default: runs/eval].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Model tag in the report [default: checkpoint file stem].
    #[arg(long)]
    tag: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

pub fn run(args: EvalArgs) -> Result<()> {
    let path = |p: Option<PathBuf>| p.map(|p| p.display().to_string());
    let s = Settings::layered(
        args.config.config.as_deref(),
        vec![
            ("checkpoint", path(args.checkpoint)),
            ("data", path(args.data)),
            ("betas", args.betas),
            ("out", path(args.out)),
            ("tag", args.tag),
        ],
        &args.config.set,
        |k| KEYS.contains(&k),
    )?;
    let checkpoint = s.require_path("checkpoint")?;
    let data = s.require_path("data")?;
    let betas = parse_betas(s.get("betas").unwrap_or(DEFAULT_BETAS))?;
    let out = s.path("out").unwrap_or_else(|| PathBuf::from("runs/eval"));
    let tag = match s.get("tag") {
        Some(t) => t.to_string(),
        None => checkpoint
            .file_stem()
            .map_or_else(|| "model".into(), |n| n.to_string_lossy().into_owned()),
    };
    let resolved = render(&[
        ("checkpoint", checkpoint.display().to_string()),
        ("data", data.display().to_string()),
        ("betas", format_betas(&betas)),
        ("out", out.display().to_string()),
        ("tag", tag.clone()),
    ]);
    write_run_files(&out, "eval", &resolved)?;

    let (model, meta) = load(&checkpoint)?;
    let ds = load_dataset(&data)?;
    log::info!("{} images, checkpoint from epoch {}", ds.len(), meta.epoch);
    let rows = evaluate_conditions(&model, &ds, &betas, &tag)?;
    write_results(&out, &rows)
}
