use std::collections::HashSet;
use std::path::PathBuf;

use clap::Args;
use dtnt_core::data::{load_dataset, synth_generate, Dataset};
use dtnt_core::kernels::Exec;
use dtnt_core::model::{save, CheckpointMeta, Model, ModelConfig};
use dtnt_core::train::{train, write_history, write_timing, Hyperparams, TrainOptions};

use super::{evaluate_conditions, write_results, DEFAULT_BETAS};
use crate::config::{format_betas, parse_betas, render, Settings};
use crate::error::{CliError, Result};
use crate::run::write_run_files;
use crate::ConfigArgs;

const KEYS: [&str; 9] = [
    "data",
    "synth_n",
    "preset",
    "out",
    "betas",
    "balance",
    "train_fraction",
    "wall_time",
    "tag",
];
const MODEL_PREFIX: &str = "model.";

fn known(key: &str) -> bool {
    KEYS.contains(&key)
        || Hyperparams::KEYS.contains(&key)
        || key
            .strip_prefix(MODEL_PREFIX)
            .is_some_and(|k| ModelConfig::KEYS.contains(&k))
}

/// Flags cover the common keys; anything else goes through `--set` or
/// `--config`: training keys (`max_lr`, `loss`, ...) unprefixed, model keys
/// as `model.<key>`.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root with one PNG folder per class.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Generate this many synthetic images per class instead of reading `--data`.
    #[arg(long, value_name = "N")]
    synth_n: Option<String>,
    /// Model preset: tiny, s12 or s24.
    #[arg(long)]
    preset: Option<String>,
    /// Run directory [default: runs/train].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    /// Fog strengths evaluated after training, comma separated.
    #[arg(long)]
    betas: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

struct Resolved {
    data: Option<PathBuf>,
    synth_n: Option<usize>,
    preset: String,
    out: PathBuf,
    betas: Vec<f64>,
    balance: bool,
    train_fraction: f64,
    wall_time: bool,
    tag: String,
    hp: Hyperparams,
    model: ModelConfig,
}

impl Resolved {
    fn from_settings(s: &Settings) -> Result<Self> {
        let preset = s.get("preset").unwrap_or("tiny").to_string();
        let mut model = ModelConfig::preset(&preset)?;
        let mut hp = Hyperparams::default();
        for (k, v) in s.iter() {
            if let Some(mk) = k.strip_prefix(MODEL_PREFIX) {
                model.set(mk, v)?;
            } else if Hyperparams::KEYS.contains(&k) {
                hp.set(k, v)?;
            }
        }
        if s.get("model.seed").is_none() {
            model.seed = hp.seed;
        }
        hp.validate()?;
        let train_fraction = s.parse_or("train_fraction", 0.8)?;
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(CliError::Usage("train_fraction must lie in (0, 1)".into()));
        }
        let data = s.path("data");
        let synth_n = s
            .get("synth_n")
            .map(|_| s.parse_or("synth_n", 0))
            .transpose()?;
        if data.is_none() == synth_n.is_none() {
            return Err(CliError::Usage(
                "give exactly one of --data or --synth-n".into(),
            ));
        }
        Ok(Resolved {
            data,
            synth_n,
            out: s.path("out").unwrap_or_else(|| PathBuf::from("runs/train")),
            betas: parse_betas(s.get("betas").unwrap_or(DEFAULT_BETAS))?,
            balance: s.parse_or("balance", true)?,
            train_fraction,
            wall_time: s.parse_or("wall_time", false)?,
            tag: s.get("tag").unwrap_or(&preset).to_string(),
            preset,
            hp,
            model,
        })
    }

    /// Every key, so the file alone reproduces the run.
    fn to_text(&self) -> String {
        let mut pairs = Vec::new();
        match (&self.data, self.synth_n) {
            (Some(d), _) => pairs.push(("data", d.display().to_string())),
            (None, Some(n)) => pairs.push(("synth_n", n.to_string())),
            (None, None) => {}
        }
        pairs.extend([
            ("preset", self.preset.clone()),
            ("out", self.out.display().to_string()),
            ("betas", format_betas(&self.betas)),
            ("balance", self.balance.to_string()),
            ("train_fraction", self.train_fraction.to_string()),
            ("wall_time", self.wall_time.to_string()),
            ("tag", self.tag.clone()),
        ]);
        let mut text = render(&pairs);
        text.push_str(&self.hp.to_text());
        for line in self.model.to_text().lines() {
            text.push_str(MODEL_PREFIX);
            text.push_str(line);
            text.push('\n');
        }
        text
    }
}

/// Items of `full` that did not take part in training.
fn held_out(full: &Dataset, train_set: &Dataset) -> Dataset {
    let used: HashSet<&str> = train_set.items.iter().map(|i| i.name.as_str()).collect();
    let items = full
        .items
        .iter()
        .filter(|i| !used.contains(i.name.as_str()))
        .cloned()
        .collect();
    Dataset {
        items,
        ..full.clone()
    }
}

pub fn run(args: TrainArgs) -> Result<()> {
    let s = Settings::layered(
        args.config.config.as_deref(),
        vec![
            ("data", args.data.map(|p| p.display().to_string())),
            ("synth_n", args.synth_n),
            ("preset", args.preset),
            ("out", args.out.map(|p| p.display().to_string())),
            ("seed", args.seed),
            ("epochs", args.epochs),
            ("betas", args.betas),
        ],
        &args.config.set,
        known,
    )?;
    let r = Resolved::from_settings(&s)?;
    write_run_files(&r.out, "train", &r.to_text())?;

    let seed = r.hp.seed;
    let full = match (&r.data, r.synth_n) {
        (Some(dir), _) => load_dataset(dir)?,
        (None, n) => synth_generate(n.unwrap_or_default(), seed),
    };
    let pool = if r.balance {
        full.balance(seed)?
    } else {
        full.clone()
    };
    let (train_set, test_set) = pool.split(r.train_fraction, seed)?;
    log::info!(
        "{} images: {} train / {} test",
        full.len(),
        train_set.len(),
        test_set.len()
    );

    let mut model = Model::<f32>::build(&r.model)?;
    log::info!(
        "preset {} with {} parameters",
        r.preset,
        model.param_count()
    );
    let outcome = train(
        &mut model,
        &train_set,
        &test_set,
        &r.hp,
        TrainOptions {
            exec: Exec::auto(),
            evaluate_each_epoch: true,
        },
    )?;

    write_history(&r.out.join("history.csv"), &outcome.history, r.wall_time)?;
    if r.wall_time {
        write_timing(&r.out.join("timing.csv"), &outcome.history)?;
    }
    save(
        &outcome.best,
        CheckpointMeta {
            epoch: outcome.best_epoch as u32,
        },
        &r.out.join("best.ckpt"),
    )?;
    save(
        &model,
        CheckpointMeta {
            epoch: r.hp.epochs as u32,
        },
        &r.out.join("last.ckpt"),
    )?;
    log::info!("best test accuracy at epoch {}", outcome.best_epoch);

    let mut rows = evaluate_conditions(&outcome.best, &test_set, &r.betas, &r.tag)?;
    let raw = held_out(&full, &train_set);
    if raw.len() > test_set.len() {
        rows.extend(evaluate_conditions(
            &outcome.best,
            &raw,
            &r.betas,
            &format!("{}-raw", r.tag),
        )?);
    }
    write_results(&r.out, &rows)
}
