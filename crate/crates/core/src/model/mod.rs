//! The assembled classifier: stem, dense stage, sentence/word embedding,
//! TNT stage and classifier head.

mod checkpoint;
mod config;

use std::collections::BTreeMap;

pub use checkpoint::{load, load_bytes, save, save_bytes, CheckpointMeta, FORMAT_VERSION, MAGIC};
pub use config::{parse_kv, InputNorm, ModelConfig, StageOrder, PRESETS};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::Exec;
use crate::nn::{
    ClassifierHead, Conv2d, Ctx, DenseBlock, Init, LayerNorm, Mode, ParamStore,
    SentenceWordEmbedding, TntBlock, Transition,
};
use crate::real::Real;
use crate::tensor::Tensor;

const INPUT_MEAN: &str = "input.mean";
const INPUT_STD: &str = "input.std";

/// Layer structure derived from a [`ModelConfig`]; holds no parameter values.
#[derive(Clone, Debug)]
pub struct Architecture {
    pub config: ModelConfig,
    pub stem: Option<Conv2d>,
    pub dense: Vec<(DenseBlock, Transition)>,
    pub embed: SentenceWordEmbedding,
    pub tnt: Vec<TntBlock>,
    pub tnt_norm: LayerNorm,
    pub head: ClassifierHead,
}

fn geometry(stage: &str, msg: impl Into<String>) -> Error {
    Error::Geometry {
        stage: stage.to_string(),
        msg: msg.into(),
    }
}

/// Builds the dense stage on a `c×h×w` map, returning the blocks and the
/// output geometry.
fn dense_stage(
    cfg: &ModelConfig,
    mut c: usize,
    mut h: usize,
    mut w: usize,
) -> Result<(Vec<(DenseBlock, Transition)>, usize, usize, usize)> {
    let mut stage = Vec::new();
    for (i, &(layers, growth)) in cfg.dense.iter().enumerate() {
        if growth == 0 {
            return Err(geometry(
                &format!("dense.block{i}"),
                "growth rate must be positive",
            ));
        }
        let block = DenseBlock::new(&format!("dense.block{i}"), c, layers, growth);
        let name = format!("dense.trans{i}");
        if h < 2 || w < 2 {
            return Err(geometry(
                &name,
                format!("pooling needs spatial extent >= 2, got {h}x{w}"),
            ));
        }
        let trans = Transition::new(&name, block.c_out())?;
        c = trans.c_out();
        h /= 2;
        w /= 2;
        stage.push((block, trans));
    }
    Ok((stage, c, h, w))
}

impl Architecture {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let cfg = config.clone();
        let positive = [
            ("input", cfg.channels.min(cfg.height).min(cfg.width)),
            ("tnt", cfg.sentence_dim.min(cfg.word_dim).min(cfg.mlp_ratio)),
            ("head", cfg.classes),
        ];
        for (stage, v) in positive {
            if v == 0 {
                return Err(geometry(stage, "all widths must be positive"));
            }
        }
        if cfg.classes < 2 {
            return Err(geometry("head", "need at least 2 classes"));
        }
        let tnt_blocks = |n: usize, m: usize| -> Result<Vec<TntBlock>> {
            (0..cfg.depth)
                .map(|i| {
                    TntBlock::new(
                        &format!("tnt.block{i}"),
                        n,
                        m,
                        cfg.sentence_dim,
                        cfg.word_dim,
                        cfg.heads_outer,
                        cfg.heads_inner,
                        cfg.mlp_ratio,
                        cfg.activation,
                    )
                    .map_err(|e| geometry("tnt", e.to_string()))
                })
                .collect()
        };
        let tnt_norm = LayerNorm::new("tnt.norm", cfg.sentence_dim);

        match cfg.stage_order {
            StageOrder::DenseFirst => {
                let (stem, c, h, w) = if cfg.stem_channels > 0 {
                    let s = cfg.stem_stride;
                    if s == 0 {
                        return Err(geometry("stem", "stride must be positive"));
                    }
                    let conv = Conv2d {
                        name: "stem.conv".into(),
                        c_in: cfg.channels,
                        c_out: cfg.stem_channels,
                        kernel: 3,
                        stride: s,
                        pad: 1,
                        bias: true,
                    };
                    (
                        Some(conv),
                        cfg.stem_channels,
                        (cfg.height - 1) / s + 1,
                        (cfg.width - 1) / s + 1,
                    )
                } else {
                    (None, cfg.channels, cfg.height, cfg.width)
                };
                let (dense, c, h, w) = dense_stage(&cfg, c, h, w)?;
                let embed = SentenceWordEmbedding::new(
                    "embed",
                    c,
                    h,
                    w,
                    cfg.patch_size,
                    cfg.word_size,
                    cfg.sentence_dim,
                    cfg.word_dim,
                    cfg.positional,
                )?;
                let tnt = tnt_blocks(embed.n, embed.m)?;
                let head = ClassifierHead::new("head", cfg.sentence_dim, cfg.classes);
                Ok(Architecture {
                    config: cfg,
                    stem,
                    dense,
                    embed,
                    tnt,
                    tnt_norm,
                    head,
                })
            }
            StageOrder::TntFirst => {
                let embed = SentenceWordEmbedding::new(
                    "embed",
                    cfg.channels,
                    cfg.height,
                    cfg.width,
                    cfg.patch_size,
                    cfg.word_size,
                    cfg.sentence_dim,
                    cfg.word_dim,
                    cfg.positional,
                )?;
                let tnt = tnt_blocks(embed.n, embed.m)?;
                let (gh, gw) = (cfg.height / cfg.patch_size, cfg.width / cfg.patch_size);
                let (dense, c, h, w) = dense_stage(&cfg, cfg.sentence_dim, gh, gw)?;
                if h != w {
                    return Err(geometry(
                        "head",
                        format!("global pooling needs a square map, got {h}x{w}"),
                    ));
                }
                let head = ClassifierHead::new("head", c, cfg.classes);
                Ok(Architecture {
                    config: cfg,
                    stem: None,
                    dense,
                    embed,
                    tnt,
                    tnt_norm,
                    head,
                })
            }
        }
    }

    /// Initializes every parameter and buffer from the config seed.
    pub fn init<T: Real>(&self) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        let mut init = Init::new(self.config.seed);
        let c = [self.config.channels];
        store.add_buffer(INPUT_MEAN, Tensor::zeros(&c))?;
        store.add_buffer(INPUT_STD, Tensor::ones(&c))?;
        if let Some(stem) = &self.stem {
            stem.init(&mut store, &mut init)?;
        }
        for (block, trans) in &self.dense {
            block.init(&mut store, &mut init)?;
            trans.init(&mut store, &mut init)?;
        }
        self.embed.init(&mut store, &mut init)?;
        for block in &self.tnt {
            block.init(&mut store, &mut init)?;
        }
        self.tnt_norm.init(&mut store)?;
        self.head.init(&mut store, &mut init)?;
        Ok(store)
    }

    /// Parameter counts keyed by stage (`stem`, `dense`, `embed`, `tnt`, `head`).
    pub fn stage_param_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut out = BTreeMap::new();
        out.insert("stem", self.stem.as_ref().map_or(0, Conv2d::param_count));
        out.insert(
            "dense",
            self.dense
                .iter()
                .map(|(b, t)| b.param_count() + t.param_count())
                .sum(),
        );
        out.insert("embed", self.embed.param_count());
        out.insert(
            "tnt",
            self.tnt.iter().map(TntBlock::param_count).sum::<usize>() + self.tnt_norm.param_count(),
        );
        out.insert("head", self.head.param_count());
        out
    }

    pub fn param_count(&self) -> usize {
        self.stage_param_counts().values().sum()
    }

    fn normalize<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        let (n, c) = (shape[0], shape[1]);
        let plane = shape[2] * shape[3];
        match self.config.input_norm {
            InputNorm::Dataset => {
                let mean = ctx.buffer(INPUT_MEAN)?.data().to_vec();
                let std = ctx.buffer(INPUT_STD)?.data().to_vec();
                let scale = Tensor::from_fn(&shape, |i| T::one() / std[(i / plane) % c]);
                let shift =
                    Tensor::from_fn(&shape, |i| -mean[(i / plane) % c] / std[(i / plane) % c]);
                let tape = ctx.tape();
                x.mul(tape.constant(scale))?.add(tape.constant(shift))
            }
            InputNorm::PerImage => {
                let d = c * plane;
                let tape = ctx.tape();
                let flat = x.reshape(&[n, d])?;
                let y = flat.layer_norm(
                    tape.constant(Tensor::ones(&[d])),
                    tape.constant(Tensor::zeros(&[d])),
                    T::lit(1e-5),
                )?;
                y.reshape(&shape)
            }
        }
    }

    /// `x[N×C×H×W]` in `[0, 1]` → class probabilities `[N × classes]`.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let cfg = &self.config;
        let shape = x.shape();
        if shape.len() != 4 || shape[1..] != [cfg.channels, cfg.height, cfg.width] {
            return Err(geometry(
                "input",
                format!(
                    "expected N×{}×{}×{}, got {shape:?}",
                    cfg.channels, cfg.height, cfg.width
                ),
            ));
        }
        let n = shape[0];
        let mut h = self.normalize(ctx, x)?;
        match cfg.stage_order {
            StageOrder::DenseFirst => {
                if let Some(stem) = &self.stem {
                    h = stem.forward(ctx, h)?;
                }
                for (block, trans) in &self.dense {
                    h = trans.forward(ctx, block.forward(ctx, h)?)?;
                }
                let sentences = self.run_tnt(ctx, h)?;
                let class = sentences.slice(1, 0, 1)?.reshape(&[n, cfg.sentence_dim])?;
                self.head.forward(ctx, class)
            }
            StageOrder::TntFirst => {
                let sentences = self.run_tnt(ctx, h)?;
                let (gh, gw) = (cfg.height / cfg.patch_size, cfg.width / cfg.patch_size);
                let grid = sentences
                    .slice(1, 1, gh * gw)?
                    .reshape(&[n, gh, gw, cfg.sentence_dim])?
                    .permute(&[0, 3, 1, 2])?;
                let mut h = grid;
                for (block, trans) in &self.dense {
                    h = trans.forward(ctx, block.forward(ctx, h)?)?;
                }
                let s = h.shape();
                let pooled = h.avg_pool2d(s[2], 1)?.reshape(&[n, s[1]])?;
                self.head.forward(ctx, pooled)
            }
        }
    }

    fn run_tnt<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (mut sentences, mut words) = self.embed.forward(ctx, x)?;
        for block in &self.tnt {
            (sentences, words) = block.forward(ctx, sentences, words)?;
        }
        self.tnt_norm.forward(ctx, sentences)
    }
}

/// Architecture plus parameter values.
#[derive(Clone, Debug)]
pub struct Model<T: Real> {
    pub arch: Architecture,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// Builds the network and initializes it deterministically from `cfg.seed`.
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        let arch = Architecture::new(cfg)?;
        let params = arch.init()?;
        Ok(Model { arch, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    /// Sets the per-channel input standardization buffers.
    pub fn set_input_stats(&mut self, mean: &[T], std: &[T]) -> Result<()> {
        let c = self.config().channels;
        if mean.len() != c || std.len() != c || std.iter().any(|&s| s <= T::zero()) {
            return Err(Error::invalid(
                "set_input_stats",
                format!("need {c} means and {c} positive stds"),
            ));
        }
        self.params
            .set(INPUT_MEAN, Tensor::new(vec![c], mean.to_vec())?)?;
        self.params
            .set(INPUT_STD, Tensor::new(vec![c], std.to_vec())?)
    }

    /// Eval-mode class probabilities for a batch.
    pub fn predict(&self, batch: &Tensor<T>, exec: Exec) -> Result<Tensor<T>> {
        let tape = Tape::with_exec(exec);
        let ctx = Ctx::bind(&tape, &self.params, Mode::Eval, false);
        let probs = self.arch.forward(&ctx, tape.constant(batch.clone()))?;
        let out = probs.value().clone();
        Ok(out)
    }
}
