//! Multi-head self-attention, the MLP, and the pre-norm residual encoder
//! layer shared by the inner (word) and outer (sentence) transformers.

use super::ctx::Ctx;
use super::layers::{Activation, LayerNorm, Linear};
use super::store::{Init, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::real::Real;

/// Scaled dot-product attention with learned Q/K/V/output projections.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub dim: usize,
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new(name: &str, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::invalid(
                "msa",
                format!("width {dim} not divisible by {heads} heads"),
            ));
        }
        Ok(MultiHeadAttention {
            dim,
            heads,
            query: Linear::new(format!("{name}.q"), dim, dim),
            key: Linear::new(format!("{name}.k"), dim, dim),
            value: Linear::new(format!("{name}.v"), dim, dim),
            out: Linear::new(format!("{name}.o"), dim, dim),
        })
    }

    fn linears(&self) -> [&Linear; 4] {
        [&self.query, &self.key, &self.value, &self.out]
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.linears().iter().try_for_each(|l| l.init(store, init))
    }

    pub fn param_count(&self) -> usize {
        self.linears().iter().map(|l| l.param_count()).sum()
    }

    /// `x` is `[B × T × d]`: `B` independent sequences of `T` tokens.
    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 3 || shape[2] != self.dim {
            return Err(Error::shape("msa", &shape, &[self.dim]));
        }
        let (b, t, h) = (shape[0], shape[1], self.heads);
        let dh = self.dim / h;
        // [B,T,d] → [B,T,h,dh] → [B,h,T,dh] → [B·h,T,dh]
        let split = |v: Var<'t, T>| -> Result<Var<'t, T>> {
            v.reshape(&[b, t, h, dh])?
                .permute(&[0, 2, 1, 3])?
                .reshape(&[b * h, t, dh])
        };
        let q = split(self.query.forward(ctx, x)?)?;
        let k = split(self.key.forward(ctx, x)?)?;
        let v = split(self.value.forward(ctx, x)?)?;
        let scores = q.bmm_nt(k)?.scale(T::lit(1.0 / (dh as f64).sqrt()));
        let attn = scores.softmax(2)?;
        let mixed = attn
            .bmm(v)?
            .reshape(&[b, h, t, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[b, t, self.dim])?;
        self.out.forward(ctx, mixed)
    }
}

/// Two-layer perceptron `fc2(act(fc1(x)))`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
    pub activation: Activation,
}

impl Mlp {
    pub fn new(name: &str, dim: usize, hidden: usize, activation: Activation) -> Self {
        Mlp {
            fc1: Linear::new(format!("{name}.fc1"), dim, hidden),
            fc2: Linear::new(format!("{name}.fc2"), hidden, dim),
            activation,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.fc1.init(store, init)?;
        self.fc2.init(store, init)
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.activation.apply(self.fc1.forward(ctx, x)?);
        self.fc2.forward(ctx, h)
    }
}

/// `x' = x + MSA(LN(x))`, then `x'' = x' + MLP(LN(x'))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

impl EncoderLayer {
    pub fn new(
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: usize,
        activation: Activation,
    ) -> Result<Self> {
        Ok(EncoderLayer {
            norm1: LayerNorm::new(format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(&format!("{name}.attn"), dim, heads)?,
            norm2: LayerNorm::new(format!("{name}.norm2"), dim),
            mlp: Mlp::new(&format!("{name}.mlp"), dim, dim * mlp_ratio, activation),
        })
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.norm1.init(store)?;
        self.attn.init(store, init)?;
        self.norm2.init(store)?;
        self.mlp.init(store, init)
    }

    pub fn param_count(&self) -> usize {
        self.norm1.param_count()
            + self.attn.param_count()
            + self.norm2.param_count()
            + self.mlp.param_count()
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = x.add(self.attn.forward(ctx, self.norm1.forward(ctx, x)?)?)?;
        x.add(self.mlp.forward(ctx, self.norm2.forward(ctx, x)?)?)
    }
}
