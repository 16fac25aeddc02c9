//! Registered gradient checks: every tape primitive plus the composed
//! blocks and the full tiny model, each run over several random instances.

use std::rc::Rc;

use super::{grad_check, grad_check_coords, project, random_tensor, Coords};
use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::nn::{Activation, Ctx, DenseBlock, Init, Mode, ParamStore, TntBlock, Transition};
use crate::tensor::Tensor;
use crate::train::rmse_loss;

/// Central-difference step used by every registered check.
pub const STEP: f64 = 1e-5;
pub const PRIMITIVE_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Primitive,
    Composite,
}

impl Level {
    pub fn tolerance(self) -> f64 {
        match self {
            Level::Primitive => PRIMITIVE_TOL,
            Level::Composite => COMPOSITE_TOL,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Primitive => "primitive",
            Level::Composite => "composite",
        }
    }
}

/// A named check; `run(seed)` returns the worst relative error over all
/// gradients it compares for that instance.
#[derive(Clone, Copy)]
pub struct Check {
    pub name: &'static str,
    pub level: Level,
    run: fn(u64) -> Result<f64>,
}

impl Check {
    pub fn run(&self, seed: u64) -> Result<f64> {
        (self.run)(seed)
    }
}

impl std::fmt::Debug for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Check")
            .field("name", &self.name)
            .field("level", &self.level)
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub level: Level,
    pub instances: usize,
    pub max_rel_error: f64,
    /// First failure to evaluate, if any instance errored.
    pub error: Option<String>,
}

impl CheckOutcome {
    pub fn tolerance(&self) -> f64 {
        self.level.tolerance()
    }

    pub fn passed(&self) -> bool {
        self.error.is_none() && self.max_rel_error < self.tolerance()
    }
}

/// Runs each check on seeds `0..instances`.
pub fn run(checks: &[Check], instances: usize) -> Vec<CheckOutcome> {
    checks
        .iter()
        .map(|c| {
            let mut out = CheckOutcome {
                name: c.name,
                level: c.level,
                instances,
                max_rel_error: 0.0,
                error: None,
            };
            for seed in 0..instances as u64 {
                match c.run(seed) {
                    Ok(e) => out.max_rel_error = out.max_rel_error.max(e),
                    Err(e) => {
                        out.error = Some(format!("seed {seed}: {e}"));
                        break;
                    }
                }
            }
            out
        })
        .collect()
}

/// All registered checks, primitives first.
pub fn registry() -> Vec<Check> {
    let p = |name, run| Check {
        name,
        level: Level::Primitive,
        run,
    };
    let c = |name, run| Check {
        name,
        level: Level::Composite,
        run,
    };
    vec![
        p("matmul", matmul),
        p("bmm", bmm),
        p("add_sub_mul", add_sub_mul),
        p("scale", scale),
        p("relu", relu),
        p("gelu", gelu),
        p("sqrt", sqrt),
        p("ln", ln),
        p("sum_mean", sum_mean),
        p("add_bias", add_bias),
        p("layer_norm", layer_norm),
        p("softmax", softmax),
        p("conv2d", conv2d),
        p("avg_pool2d", avg_pool2d),
        p("batch_norm", batch_norm),
        p("concat", concat),
        p("reshape_permute", reshape_permute),
        p("slice_tile", slice_tile),
        p("unfold_patches", unfold_patches),
        p("reindex", reindex),
        c("dense_block", dense_block),
        c("tnt_block", tnt_block),
        c("tiny_model", tiny_model),
    ]
}

/// Max error of `f` projected to a scalar, at a random point.
fn prim<F>(shape: &[usize], scale: f64, seed: u64, f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>> + Sync,
{
    let x = random_tensor(shape, scale, 1000 + seed);
    grad_check(|tape, v| project(f(tape, v)?, seed), &x, STEP)
}

fn worst(errors: impl IntoIterator<Item = Result<f64>>) -> Result<f64> {
    let mut m = 0.0f64;
    for e in errors {
        m = m.max(e?);
    }
    Ok(m)
}

fn matmul(seed: u64) -> Result<f64> {
    let w = random_tensor(&[4, 3], 1.0, seed);
    let a = random_tensor(&[3, 2], 1.0, seed + 1);
    worst([
        prim(&[2, 4], 1.0, seed, |t, x| x.matmul(t.constant(w.clone()))),
        prim(&[2, 4], 1.0, seed, |t, x| t.constant(a.clone()).matmul(x)),
    ])
}

fn bmm(seed: u64) -> Result<f64> {
    let w = random_tensor(&[2, 4, 3], 1.0, seed);
    let v = random_tensor(&[2, 5, 4], 1.0, seed + 1);
    worst([
        prim(&[2, 3, 4], 1.0, seed, |t, x| x.bmm(t.constant(w.clone()))),
        prim(&[2, 3, 4], 1.0, seed, |t, x| t.constant(w.clone()).bmm(x)),
        prim(&[2, 3, 4], 1.0, seed, |t, x| {
            x.bmm_nt(t.constant(v.clone()))
        }),
        prim(&[2, 5, 4], 1.0, seed, |t, x| {
            t.constant(v.clone()).bmm_nt(x)
        }),
    ])
}

fn add_sub_mul(seed: u64) -> Result<f64> {
    let o = random_tensor(&[3, 4], 1.0, seed);
    worst([
        prim(&[3, 4], 1.0, seed, |t, x| x.add(t.constant(o.clone()))),
        prim(&[3, 4], 1.0, seed, |t, x| t.constant(o.clone()).sub(x)),
        prim(&[3, 4], 1.0, seed, |t, x| x.mul(t.constant(o.clone()))),
        prim(&[3, 4], 1.0, seed, |_, x| x.mul(x)),
    ])
}

fn scale(seed: u64) -> Result<f64> {
    prim(&[3, 4], 1.0, seed, |_, x| Ok(x.scale(-2.5)))
}

fn relu(seed: u64) -> Result<f64> {
    prim(&[3, 4], 1.0, seed, |_, x| Ok(x.relu()))
}

fn gelu(seed: u64) -> Result<f64> {
    prim(&[3, 4], 2.0, seed, |_, x| Ok(x.gelu()))
}

/// `sqrt` and `ln` are checked on `x² + 1` so the argument stays positive.
fn sqrt(seed: u64) -> Result<f64> {
    prim(&[3, 4], 1.0, seed, |t, x| {
        Ok(x.mul(x)?.add(t.constant(Tensor::ones(&[3, 4])))?.sqrt())
    })
}

fn ln(seed: u64) -> Result<f64> {
    prim(&[3, 4], 1.0, seed, |t, x| {
        Ok(x.mul(x)?.add(t.constant(Tensor::ones(&[3, 4])))?.ln())
    })
}

fn sum_mean(seed: u64) -> Result<f64> {
    worst([
        prim(&[3, 4], 1.0, seed, |_, x| x.sum().reshape(&[1])),
        prim(&[3, 4], 1.0, seed, |_, x| x.mean().reshape(&[1])),
    ])
}

fn add_bias(seed: u64) -> Result<f64> {
    let b = random_tensor(&[4], 1.0, seed);
    let a = random_tensor(&[2, 3, 4], 1.0, seed + 1);
    worst([
        prim(&[3, 4], 1.0, seed, |t, x| x.add_bias(t.constant(b.clone()))),
        prim(&[4], 1.0, seed, |t, x| t.constant(a.clone()).add_bias(x)),
    ])
}

fn layer_norm(seed: u64) -> Result<f64> {
    let g = random_tensor(&[5], 1.0, seed);
    let b = random_tensor(&[5], 1.0, seed + 1);
    let x0 = random_tensor(&[3, 5], 2.0, seed + 2);
    worst([
        prim(&[3, 5], 2.0, seed, |t, x| {
            x.layer_norm(t.constant(g.clone()), t.constant(b.clone()), 1e-5)
        }),
        prim(&[5], 1.0, seed, |t, gam| {
            t.constant(x0.clone())
                .layer_norm(gam, t.constant(b.clone()), 1e-5)
        }),
        prim(&[5], 1.0, seed, |t, bet| {
            t.constant(x0.clone())
                .layer_norm(t.constant(g.clone()), bet, 1e-5)
        }),
    ])
}

fn softmax(seed: u64) -> Result<f64> {
    worst([
        prim(&[3, 5], 3.0, seed, |_, x| x.softmax(1)),
        prim(&[3, 5, 2], 3.0, seed, |_, x| x.softmax(1)),
        prim(&[4, 2], 3.0, seed, |_, x| x.softmax(0)),
    ])
}

fn conv2d(seed: u64) -> Result<f64> {
    let k = random_tensor(&[3, 2, 3, 3], 1.0, seed);
    let bias = random_tensor(&[3], 1.0, seed + 1);
    let x0 = random_tensor(&[2, 2, 5, 5], 1.0, seed + 2);
    worst([
        prim(&[2, 2, 5, 5], 1.0, seed, |t, x| {
            x.conv2d(t.constant(k.clone()), Some(t.constant(bias.clone())), 1, 1)
        }),
        prim(&[2, 2, 6, 5], 1.0, seed, |t, x| {
            x.conv2d(t.constant(k.clone()), None, 2, 1)
        }),
        prim(&[3, 2, 3, 3], 1.0, seed, |t, kk| {
            t.constant(x0.clone()).conv2d(kk, None, 1, 0)
        }),
        prim(&[3], 1.0, seed, |t, bb| {
            t.constant(x0.clone())
                .conv2d(t.constant(k.clone()), Some(bb), 1, 1)
        }),
    ])
}

fn avg_pool2d(seed: u64) -> Result<f64> {
    worst([
        prim(&[2, 3, 4, 4], 1.0, seed, |_, x| x.avg_pool2d(2, 2)),
        prim(&[1, 2, 5, 5], 1.0, seed, |_, x| x.avg_pool2d(3, 1)),
    ])
}

fn batch_norm(seed: u64) -> Result<f64> {
    let g = random_tensor(&[3], 1.0, seed);
    let b = random_tensor(&[3], 1.0, seed + 1);
    let x0 = random_tensor(&[4, 3, 2, 2], 2.0, seed + 2);
    let rm = vec![0.1, -0.2, 0.3];
    let rv = vec![1.5, 0.5, 2.0];
    worst([
        prim(&[4, 3, 2, 2], 2.0, seed, |t, x| {
            Ok(
                x.batch_norm(t.constant(g.clone()), t.constant(b.clone()), None, 1e-5)?
                    .0,
            )
        }),
        prim(&[2, 3, 2, 2], 2.0, seed, |t, x| {
            Ok(x.batch_norm(
                t.constant(g.clone()),
                t.constant(b.clone()),
                Some((&rm, &rv)),
                1e-5,
            )?
            .0)
        }),
        prim(&[3], 1.0, seed, |t, gam| {
            Ok(t.constant(x0.clone())
                .batch_norm(gam, t.constant(b.clone()), None, 1e-5)?
                .0)
        }),
        prim(&[3], 1.0, seed, |t, bet| {
            Ok(t.constant(x0.clone())
                .batch_norm(t.constant(g.clone()), bet, None, 1e-5)?
                .0)
        }),
    ])
}

fn concat(seed: u64) -> Result<f64> {
    let o = random_tensor(&[2, 2, 3], 1.0, seed);
    worst([
        prim(&[2, 1, 3], 1.0, seed, |t, x| {
            t.concat(&[t.constant(o.clone()), x], 1)
        }),
        prim(&[2, 1, 3], 1.0, seed, |t, x| {
            t.concat(&[x, t.constant(o.clone()), x], 1)
        }),
    ])
}

fn reshape_permute(seed: u64) -> Result<f64> {
    worst([
        prim(&[2, 6], 1.0, seed, |_, x| x.reshape(&[3, 4])),
        prim(&[2, 3, 4], 1.0, seed, |_, x| x.permute(&[2, 0, 1])),
    ])
}

fn slice_tile(seed: u64) -> Result<f64> {
    worst([
        prim(&[2, 3, 4], 1.0, seed, |_, x| x.slice(1, 1, 2)),
        prim(&[3], 1.0, seed, |_, x| x.tile(4)),
    ])
}

fn unfold_patches(seed: u64) -> Result<f64> {
    prim(&[1, 2, 4, 4], 1.0, seed, |_, x| x.unfold_patches(4, 2))
}

fn reindex(seed: u64) -> Result<f64> {
    prim(&[4], 1.0, seed, |_, x| {
        x.reindex(&[3], Rc::new(vec![3, 0, 3]))
    })
}

/// Adds uniform noise to every parameter so that norms, biases and zero
/// rows take generic values.
fn perturb(store: &mut ParamStore<f64>, scale: f64, seed: u64) -> Result<()> {
    let names: Vec<String> = store.params().keys().cloned().collect();
    for (i, name) in names.iter().enumerate() {
        let base = store.param(name)?.clone();
        let noise = random_tensor(
            base.shape(),
            scale,
            seed.wrapping_mul(7919).wrapping_add(i as u64),
        );
        store.set(
            name,
            Tensor::from_fn(base.shape(), |k| base.data()[k] + noise.data()[k]),
        )?;
    }
    Ok(())
}

/// Checks the input and each named parameter of `forward`.
fn check_module<F>(
    store: &ParamStore<f64>,
    x: &Tensor<f64>,
    params: &[&str],
    coords: Coords,
    seed: u64,
    forward: F,
) -> Result<f64>
where
    F: for<'t> Fn(&Ctx<'t, f64>, Var<'t, f64>) -> Result<Var<'t, f64>> + Sync,
{
    let mut errors = vec![grad_check_coords(
        |tape, xv| {
            let ctx = Ctx::bind(tape, store, Mode::Train, false);
            project(forward(&ctx, xv)?, seed)
        },
        x,
        STEP,
        coords,
    )
    .map(|r| r.max_rel_error)];
    for name in params {
        let p = store.param(name)?.clone();
        errors.push(
            grad_check_coords(
                |tape, pv| {
                    let mut ctx = Ctx::bind(tape, store, Mode::Train, false);
                    ctx.rebind(name, pv)?;
                    project(forward(&ctx, tape.constant(x.clone()))?, seed)
                },
                &p,
                STEP,
                coords,
            )
            .map(|r| r.max_rel_error),
        );
    }
    worst(errors)
}

fn dense_block(seed: u64) -> Result<f64> {
    let block = DenseBlock::new("dense", 3, 2, 2);
    let trans = Transition::new("trans", block.c_out())?;
    let mut store = ParamStore::new();
    let mut init = Init::new(seed);
    block.init(&mut store, &mut init)?;
    trans.init(&mut store, &mut init)?;
    perturb(&mut store, 0.2, seed)?;
    let x = random_tensor(&[2, 3, 4, 4], 1.0, 50 + seed);
    check_module(
        &store,
        &x,
        &[
            "dense.layer0.bn.gamma",
            "dense.layer1.conv.weight",
            "trans.conv.weight",
            "trans.conv.bias",
        ],
        Coords::All,
        seed,
        |ctx, xv| trans.forward(ctx, block.forward(ctx, xv)?),
    )
}

fn tnt_block(seed: u64) -> Result<f64> {
    let (n, m, d, wd) = (2, 4, 8, 4);
    let block = TntBlock::new("tnt", n, m, d, wd, 2, 2, 2, Activation::Gelu)?;
    let mut store = ParamStore::new();
    block.init(&mut store, &mut Init::new(seed))?;
    perturb(&mut store, 0.2, seed)?;
    let batch = 2;
    let s_len = batch * (n + 1) * d;
    let x = random_tensor(&[s_len + batch * n * m * wd], 1.0, 60 + seed);
    check_module(
        &store,
        &x,
        &[
            "tnt.inner.attn.q.weight",
            "tnt.inner.mlp.fc1.weight",
            "tnt.proj.weight",
            "tnt.outer.attn.v.weight",
            "tnt.outer.norm2.gamma",
        ],
        Coords::All,
        seed,
        |ctx, xv| {
            let s = xv.slice(0, 0, s_len)?.reshape(&[batch, n + 1, d])?;
            let w = xv
                .slice(0, s_len, batch * n * m * wd)?
                .reshape(&[batch * n, m, wd])?;
            let (s, w) = block.forward(ctx, s, w)?;
            let tape = ctx.tape();
            tape.concat(
                &[s.reshape(&[s_len])?, w.reshape(&[batch * n * m * wd])?],
                0,
            )
        },
    )
}

/// RMSE loss of the full tiny model on two images, at sampled input and
/// parameter coordinates.
fn tiny_model(seed: u64) -> Result<f64> {
    let cfg = ModelConfig {
        seed,
        ..ModelConfig::tiny()
    };
    let mut model = Model::<f64>::build(&cfg)?;
    perturb(&mut model.params, 0.05, seed)?;
    let x = random_tensor(&[2, 1, 64, 64], 0.5, 70 + seed).map(|v| v + 0.5);
    let labels = [0usize, 1];
    let coords = Coords::Sample { count: 4, seed };
    let arch = &model.arch;
    check_module(
        &model.params,
        &x,
        &[
            "stem.conv.weight",
            "dense.block0.layer1.conv.weight",
            "embed.sentence_proj.weight",
            "tnt.block1.outer.attn.k.weight",
            "head.weight",
        ],
        coords,
        seed,
        |ctx, xv| rmse_loss(arch.forward(ctx, xv)?, &labels),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_registered_check_passes_on_two_instances() {
        for outcome in run(&registry(), 2) {
            assert!(outcome.passed(), "{outcome:?}");
        }
    }

    #[test]
    fn registry_covers_composites() {
        let names: Vec<_> = registry()
            .iter()
            .filter(|c| c.level == Level::Composite)
            .map(|c| c.name)
            .collect();
        assert_eq!(names, ["dense_block", "tnt_block", "tiny_model"]);
    }
}
