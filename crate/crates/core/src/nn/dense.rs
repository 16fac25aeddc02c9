//! Densely connected convolution blocks and the transitions between them.

use super::ctx::Ctx;
use super::layers::{BatchNorm2d, Conv2d};
use super::store::{Init, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::real::Real;

/// Batch norm, ReLU, then a 3×3 convolution emitting `growth` channels.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub norm: BatchNorm2d,
    pub conv: Conv2d,
}

impl DenseLayer {
    pub fn new(name: &str, c_in: usize, growth: usize) -> Self {
        DenseLayer {
            norm: BatchNorm2d::new(format!("{name}.bn"), c_in),
            conv: Conv2d {
                name: format!("{name}.conv"),
                c_in,
                c_out: growth,
                kernel: 3,
                stride: 1,
                pad: 1,
                bias: false,
            },
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.norm.init(store)?;
        self.conv.init(store, init)
    }

    pub fn param_count(&self) -> usize {
        self.norm.param_count() + self.conv.param_count()
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.conv.forward(ctx, self.norm.forward(ctx, x)?.relu())
    }
}

/// Layer `i` sees the concatenation of the block input and every earlier
/// layer's output.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub c_in: usize,
    pub growth: usize,
    pub layers: Vec<DenseLayer>,
}

impl DenseBlock {
    pub fn new(name: &str, c_in: usize, num_layers: usize, growth: usize) -> Self {
        let layers = (0..num_layers)
            .map(|i| DenseLayer::new(&format!("{name}.layer{i}"), c_in + i * growth, growth))
            .collect();
        DenseBlock {
            c_in,
            growth,
            layers,
        }
    }

    pub fn c_out(&self) -> usize {
        self.c_in + self.layers.len() * self.growth
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.layers.iter().try_for_each(|l| l.init(store, init))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != self.c_in {
            return Err(Error::invalid(
                "dense_block",
                format!("expected {} input channels, got shape {shape:?}", self.c_in),
            ));
        }
        let mut features = vec![x];
        for layer in &self.layers {
            let input = if features.len() == 1 {
                features[0]
            } else {
                ctx.tape().concat(&features, 1)?
            };
            features.push(layer.forward(ctx, input)?);
        }
        if features.len() == 1 {
            Ok(x)
        } else {
            ctx.tape().concat(&features, 1)
        }
    }
}

/// 1×1 convolution halving the channel count, then 2×2 average pooling.
#[derive(Clone, Debug)]
pub struct Transition {
    pub name: String,
    pub conv: Conv2d,
}

impl Transition {
    pub fn new(name: &str, c_in: usize) -> Result<Self> {
        if c_in < 2 {
            return Err(Error::Geometry {
                stage: name.to_string(),
                msg: format!("cannot halve {c_in} channel(s)"),
            });
        }
        Ok(Transition {
            name: name.to_string(),
            conv: Conv2d {
                name: format!("{name}.conv"),
                c_in,
                c_out: c_in / 2,
                kernel: 1,
                stride: 1,
                pad: 0,
                bias: true,
            },
        })
    }

    pub fn c_out(&self) -> usize {
        self.conv.c_out
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        self.conv.init(store, init)
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count()
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[2] < 2 || shape[3] < 2 {
            return Err(Error::Geometry {
                stage: self.name.clone(),
                msg: format!("pooling needs spatial extent >= 2, got {shape:?}"),
            });
        }
        self.conv.forward(ctx, x)?.avg_pool2d(2, 2)
    }
}
