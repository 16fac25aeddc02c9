//! Basic parameterized layers.

use super::ctx::{BnStats, Ctx, Mode};
use super::store::{Init, ParamStore};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Std of the truncated normal used for projections and embeddings.
pub const PROJ_STD: f64 = 0.02;

/// Affine map over the last axis: `x · W + b` with `W: [d_in × d_out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, d_in: usize, d_out: usize) -> Self {
        Linear {
            name: name.into(),
            d_in,
            d_out,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        store.add_param(
            &self.weight_name(),
            init.trunc_normal(&[self.d_in, self.d_out], PROJ_STD),
        )?;
        store.add_param(&self.bias_name(), Tensor::zeros(&[self.d_out]))
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.d_out
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = x.shape();
        if shape.last() != Some(&self.d_in) {
            return Err(Error::shape("linear", &shape, &[self.d_in, self.d_out]));
        }
        let rows = x.value().len() / self.d_in;
        let y = x
            .reshape(&[rows, self.d_in])?
            .matmul(ctx.var(&self.weight_name())?)?
            .add_bias(ctx.var(&self.bias_name())?)?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.d_out;
        y.reshape(&out_shape)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        LayerNorm {
            name: name.into(),
            dim,
            eps: 1e-5,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        store.add_param(&format!("{}.gamma", self.name), Tensor::ones(&[self.dim]))?;
        store.add_param(&format!("{}.beta", self.name), Tensor::zeros(&[self.dim]))
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let gamma = ctx.var(&format!("{}.gamma", self.name))?;
        let beta = ctx.var(&format!("{}.beta", self.name))?;
        x.layer_norm(gamma, beta, T::lit(self.eps))
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        BatchNorm2d {
            name: name.into(),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let c = [self.channels];
        store.add_param(&format!("{}.gamma", self.name), Tensor::ones(&c))?;
        store.add_param(&format!("{}.beta", self.name), Tensor::zeros(&c))?;
        store.add_buffer(&format!("{}.running_mean", self.name), Tensor::zeros(&c))?;
        store.add_buffer(&format!("{}.running_var", self.name), Tensor::ones(&c))
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let gamma = ctx.var(&format!("{}.gamma", self.name))?;
        let beta = ctx.var(&format!("{}.beta", self.name))?;
        let eps = T::lit(self.eps);
        match ctx.mode() {
            Mode::Train => {
                let (y, stats) = x.batch_norm(gamma, beta, None, eps)?;
                if let Some((mean, var)) = stats {
                    ctx.record_bn(BnStats {
                        name: self.name.clone(),
                        mean,
                        var,
                    });
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = ctx.buffer(&format!("{}.running_mean", self.name))?;
                let var = ctx.buffer(&format!("{}.running_var", self.name))?;
                Ok(
                    x.batch_norm(gamma, beta, Some((mean.data(), var.data())), eps)?
                        .0,
                )
            }
        }
    }

    /// Folds batch statistics into the running averages:
    /// `r ← (1 − momentum)·r + momentum·batch`.
    pub fn update_running<T: Real>(
        store: &mut ParamStore<T>,
        stats: &BnStats<T>,
        momentum: f64,
    ) -> Result<()> {
        let m = T::lit(momentum);
        for (suffix, batch) in [("running_mean", &stats.mean), ("running_var", &stats.var)] {
            let buf = store.buffer_mut(&format!("{}.{suffix}", stats.name))?;
            for (r, &b) in buf.data_mut().iter_mut().zip(batch.iter()) {
                *r = (T::one() - m) * *r + m * b;
            }
        }
        Ok(())
    }
}

/// Square-kernel 2-D convolution over `N×C×H×W` maps.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn init<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        let fan_in = self.c_in * self.kernel * self.kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let shape = [self.c_out, self.c_in, self.kernel, self.kernel];
        store.add_param(
            &format!("{}.weight", self.name),
            init.trunc_normal(&shape, std),
        )?;
        if self.bias {
            store.add_param(&format!("{}.bias", self.name), Tensor::zeros(&[self.c_out]))?;
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.c_out * self.c_in * self.kernel * self.kernel + if self.bias { self.c_out } else { 0 }
    }

    pub fn forward<'t, T: Real>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = ctx.var(&format!("{}.weight", self.name))?;
        let b = if self.bias {
            Some(ctx.var(&format!("{}.bias", self.name))?)
        } else {
            None
        };
        x.conv2d(w, b, self.stride, self.pad)
    }
}

/// Activation used inside MLPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply<'t, T: Real>(self, x: Var<'t, T>) -> Var<'t, T> {
        match self {
            Activation::Relu => x.relu(),
            Activation::Gelu => x.gelu(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}
