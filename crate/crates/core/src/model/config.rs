//! Model configuration, presets and the canonical `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Activation;

/// Order of the convolutional and transformer stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageOrder {
    /// Dense stage on the image, TNT on its feature map, head on the class token.
    DenseFirst,
    /// TNT on the image, dense stage on the sentence grid, head on pooled features.
    TntFirst,
}

/// How raw pixels are standardized before the first layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputNorm {
    /// Per-channel mean/std measured on the training split, stored as buffers.
    Dataset,
    /// Each image standardized by its own mean and std.
    PerImage,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stem_channels: usize,
    pub stem_stride: usize,
    /// `(num_layers, growth_rate)` per dense block; each block is followed by a transition.
    pub dense: Vec<(usize, usize)>,
    pub patch_size: usize,
    pub word_size: usize,
    pub sentence_dim: usize,
    pub word_dim: usize,
    pub depth: usize,
    pub heads_outer: usize,
    pub heads_inner: usize,
    pub mlp_ratio: usize,
    pub classes: usize,
    pub activation: Activation,
    pub positional: bool,
    pub stage_order: StageOrder,
    pub input_norm: InputNorm,
    pub seed: u64,
}

pub const PRESETS: [&str; 3] = ["tiny", "s12", "s24"];

impl ModelConfig {
    pub fn tiny() -> Self {
        ModelConfig {
            channels: 1,
            height: 64,
            width: 64,
            stem_channels: 8,
            stem_stride: 1,
            dense: vec![(2, 4)],
            patch_size: 8,
            word_size: 4,
            sentence_dim: 32,
            word_dim: 16,
            depth: 2,
            heads_outer: 4,
            heads_inner: 2,
            mlp_ratio: 4,
            classes: 2,
            activation: Activation::Relu,
            positional: true,
            stage_order: StageOrder::DenseFirst,
            input_norm: InputNorm::PerImage,
            seed: 0,
        }
    }

    /// RGB model of roughly 12M parameters.
    pub fn s12() -> Self {
        ModelConfig {
            channels: 3,
            stem_channels: 32,
            dense: vec![(6, 16)],
            patch_size: 4,
            word_size: 2,
            sentence_dim: 384,
            word_dim: 24,
            depth: 6,
            heads_outer: 6,
            heads_inner: 4,
            ..Self::tiny()
        }
    }

    /// RGB model of roughly 21M parameters.
    pub fn s24() -> Self {
        ModelConfig {
            depth: 11,
            dense: vec![(6, 16), (6, 16)],
            patch_size: 2,
            word_size: 1,
            ..Self::s12()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "s12" | "s12-like" => Ok(Self::s12()),
            "s24" | "s24-like" => Ok(Self::s24()),
            other => Err(Error::Config(format!(
                "unknown preset `{other}` (expected one of {PRESETS:?})"
            ))),
        }
    }

    pub const KEYS: [&'static str; 20] = [
        "channels",
        "height",
        "width",
        "stem_channels",
        "stem_stride",
        "dense",
        "patch_size",
        "word_size",
        "sentence_dim",
        "word_dim",
        "depth",
        "heads_outer",
        "heads_inner",
        "mlp_ratio",
        "classes",
        "activation",
        "positional",
        "stage_order",
        "input_norm",
        "seed",
    ];

    /// Sets one field from its text form. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "channels" => self.channels = parse(key, value)?,
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "stem_channels" => self.stem_channels = parse(key, value)?,
            "stem_stride" => self.stem_stride = parse(key, value)?,
            "dense" => self.dense = parse_dense(value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "word_size" => self.word_size = parse(key, value)?,
            "sentence_dim" => self.sentence_dim = parse(key, value)?,
            "word_dim" => self.word_dim = parse(key, value)?,
            "depth" => self.depth = parse(key, value)?,
            "heads_outer" => self.heads_outer = parse(key, value)?,
            "heads_inner" => self.heads_inner = parse(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "activation" => self.activation = value.parse()?,
            "positional" => self.positional = parse(key, value)?,
            "stage_order" => {
                self.stage_order = match value {
                    "dense_first" => StageOrder::DenseFirst,
                    "tnt_first" => StageOrder::TntFirst,
                    _ => return Err(bad(key, value)),
                }
            }
            "input_norm" => {
                self.input_norm = match value {
                    "dataset" => InputNorm::Dataset,
                    "per_image" => InputNorm::PerImage,
                    _ => return Err(bad(key, value)),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical text: every key, one per line, fixed order.
    pub fn to_text(&self) -> String {
        let dense: Vec<String> = self.dense.iter().map(|(l, g)| format!("{l}x{g}")).collect();
        let values = [
            self.channels.to_string(),
            self.height.to_string(),
            self.width.to_string(),
            self.stem_channels.to_string(),
            self.stem_stride.to_string(),
            dense.join(","),
            self.patch_size.to_string(),
            self.word_size.to_string(),
            self.sentence_dim.to_string(),
            self.word_dim.to_string(),
            self.depth.to_string(),
            self.heads_outer.to_string(),
            self.heads_inner.to_string(),
            self.mlp_ratio.to_string(),
            self.classes.to_string(),
            self.activation.as_str().to_string(),
            self.positional.to_string(),
            match self.stage_order {
                StageOrder::DenseFirst => "dense_first",
                StageOrder::TntFirst => "tnt_first",
            }
            .to_string(),
            match self.input_norm {
                InputNorm::Dataset => "dataset",
                InputNorm::PerImage => "per_image",
            }
            .to_string(),
            self.seed.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in Self::KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses `key = value` lines on top of the tiny preset. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::tiny();
        for (key, value) in parse_kv(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                n + 1
            ))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value `{value}` for `{key}`"))
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| bad(key, value))
}

fn parse_dense(value: &str) -> Result<Vec<(usize, usize)>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| {
            let (l, g) = item
                .trim()
                .split_once('x')
                .ok_or_else(|| bad("dense", value))?;
            Ok((parse("dense", l)?, parse("dense", g)?))
        })
        .collect()
}
