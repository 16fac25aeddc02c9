//! Sentence/word embedding and the two-stream transformer-in-transformer block.

use super::attention::EncoderLayer;
use super::ctx::Ctx;
use super::layers::{Activation, LayerNorm, Linear, PROJ_STD};
use super::store::{Init, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Splits feature maps into `n` sentences of `m` words and projects both.
#[derive(Clone, Debug)]
pub struct SentenceWordEmbedding {
    pub name: String,
    pub channels: usize,
    pub patch_size: usize,
    pub word_size: usize,
    /// Sentences per image.
    pub n: usize,
    /// Words per sentence.
    pub m: usize,
    pub sentence_dim: usize,
    pub word_dim: usize,
    pub positional: bool,
    pub word_proj: Linear,
    pub sentence_proj: Linear,
    /// Applied to each projected word and sentence before positions are added.
    pub word_norm: LayerNorm,
    pub sentence_norm: LayerNorm,
}

impl SentenceWordEmbedding {
    /// Checks the patch/word grids against an `h×w` map.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        channels: usize,
        h: usize,
        w: usize,
        patch_size: usize,
        word_size: usize,
        sentence_dim: usize,
        word_dim: usize,
        positional: bool,
    ) -> Result<Self> {
        let geometry = |msg: String| Error::Geometry {
            stage: name.to_string(),
            msg,
        };
        if patch_size == 0 || !h.is_multiple_of(patch_size) || !w.is_multiple_of(patch_size) {
            return Err(geometry(format!(
                "patch size {patch_size} does not divide {h}x{w}"
            )));
        }
        if word_size == 0 || !patch_size.is_multiple_of(word_size) {
            return Err(geometry(format!(
                "word size {word_size} does not divide patch size {patch_size}"
            )));
        }
        let n = (h / patch_size) * (w / patch_size);
        let m = (patch_size / word_size).pow(2);
        Ok(SentenceWordEmbedding {
            name: name.to_string(),
            channels,
            patch_size,
            word_size,
            n,
            m,
            sentence_dim,
            word_dim,
            positional,
            word_proj: Linear::new(
                format!("{name}.word_proj"),
                channels * word_size * word_size,
                word_dim,
            ),
            sentence_proj: Linear::new(
                format!("{name}.sentence_proj"),
                channels * patch_size * patch_size,
                sentence_dim,
            ),
            word_norm: LayerNorm::new(format!("{name}.word_norm"), word_dim),
            sentence_norm: LayerNorm::new(format!("{name}.sentence_norm"), sentence_dim),
        })
    }

    fn key(&self, what: &str) -> String {
        format!("{}.{what}", self.name)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.word_proj.init(store, init)?;
        self.sentence_proj.init(store, init)?;
        self.word_norm.init(store)?;
        self.sentence_norm.init(store)?;
        store.add_param(
            &self.key("class_token"),
            init.trunc_normal(&[self.sentence_dim], PROJ_STD),
        )?;
        if self.positional {
            store.add_param(
                &self.key("sentence_pos"),
                init.trunc_normal(&[self.n + 1, self.sentence_dim], PROJ_STD),
            )?;
            store.add_param(
                &self.key("word_pos"),
                init.trunc_normal(&[self.m, self.word_dim], PROJ_STD),
            )?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let pos = if self.positional {
            (self.n + 1) * self.sentence_dim + self.m * self.word_dim
        } else {
            0
        };
        self.word_proj.param_count()
            + self.sentence_proj.param_count()
            + self.word_norm.param_count()
            + self.sentence_norm.param_count()
            + self.sentence_dim
            + pos
    }

    /// `x[N×C×H×W]` → (sentences `[N × (n+1) × D]`, words `[N·n × m × word_dim]`).
    pub fn forward<'t, T: Real>(
        &self,
        ctx: &Ctx<'t, T>,
        x: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let batch = x.shape()[0];
        let (n, m) = (self.n, self.m);
        let pixels = x.unfold_patches(self.patch_size, self.word_size)?;
        let word_len = self.channels * self.word_size * self.word_size;
        let words = self
            .word_proj
            .forward(ctx, pixels.reshape(&[batch * n, m, word_len])?)?;
        let mut words = self.word_norm.forward(ctx, words)?;
        if self.positional {
            words = words.add(ctx.var(&self.key("word_pos"))?.tile(batch * n)?)?;
        }

        let patch_len = self.channels * self.patch_size * self.patch_size;
        let patches = x
            .unfold_patches(self.patch_size, self.patch_size)?
            .reshape(&[batch, n, patch_len])?;
        let projected = self
            .sentence_norm
            .forward(ctx, self.sentence_proj.forward(ctx, patches)?)?;
        let class = ctx.var(&self.key("class_token"))?.tile(batch)?.reshape(&[
            batch,
            1,
            self.sentence_dim,
        ])?;
        let mut sentences = ctx.tape().concat(&[class, projected], 1)?;
        if self.positional {
            sentences = sentences.add(ctx.var(&self.key("sentence_pos"))?.tile(batch)?)?;
        }
        Ok((sentences, words))
    }
}

/// Inner transformer over words, word-to-sentence injection, outer
/// transformer over sentences.
#[derive(Clone, Debug)]
pub struct TntBlock {
    pub n: usize,
    pub m: usize,
    pub sentence_dim: usize,
    pub word_dim: usize,
    pub inner: EncoderLayer,
    pub word_to_sentence: Linear,
    pub outer: EncoderLayer,
}

impl TntBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        n: usize,
        m: usize,
        sentence_dim: usize,
        word_dim: usize,
        heads_outer: usize,
        heads_inner: usize,
        mlp_ratio: usize,
        activation: Activation,
    ) -> Result<Self> {
        Ok(TntBlock {
            n,
            m,
            sentence_dim,
            word_dim,
            inner: EncoderLayer::new(
                &format!("{name}.inner"),
                word_dim,
                heads_inner,
                mlp_ratio,
                activation,
            )?,
            word_to_sentence: Linear::new(format!("{name}.proj"), m * word_dim, sentence_dim),
            outer: EncoderLayer::new(
                &format!("{name}.outer"),
                sentence_dim,
                heads_outer,
                mlp_ratio,
                activation,
            )?,
        })
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.inner.init(store, init)?;
        self.word_to_sentence.init(store, init)?;
        self.outer.init(store, init)
    }

    pub fn param_count(&self) -> usize {
        self.inner.param_count() + self.word_to_sentence.param_count() + self.outer.param_count()
    }

    pub fn forward<'t, T: Real>(
        &self,
        ctx: &Ctx<'t, T>,
        sentences: Var<'t, T>,
        words: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let s_shape = sentences.shape();
        let w_shape = words.shape();
        let batch = s_shape[0];
        if s_shape != [batch, self.n + 1, self.sentence_dim]
            || w_shape != [batch * self.n, self.m, self.word_dim]
        {
            return Err(Error::shape("tnt_block", &s_shape, &w_shape));
        }
        let words = self.inner.forward(ctx, words)?;
        let flat = words.reshape(&[batch, self.n, self.m * self.word_dim])?;
        let injected = self.word_to_sentence.forward(ctx, flat)?;
        // The class token has no patch underneath it and receives nothing.
        let zero = ctx
            .tape()
            .constant(Tensor::zeros(&[batch, 1, self.sentence_dim]));
        let injected = ctx.tape().concat(&[zero, injected], 1)?;
        let sentences = self.outer.forward(ctx, sentences.add(injected)?)?;
        Ok((sentences, words))
    }
}
