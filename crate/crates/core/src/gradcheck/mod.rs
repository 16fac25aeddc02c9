//! Central finite-difference oracle for the autodiff tape.

pub mod suite;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::kernels::{self, Exec};
use crate::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|a − n| / max(1, |a|, |n|)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Which input coordinates to perturb.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coords {
    All,
    /// `count` distinct coordinates drawn with the given seed.
    Sample {
        count: usize,
        seed: u64,
    },
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central differences with the given step, over every coordinate.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>> + Sync,
{
    grad_check_coords(f, x, step, Coords::All).map(|r| r.max_rel_error)
}

pub fn grad_check_coords<F>(
    f: F,
    x: &Tensor<f64>,
    step: f64,
    coords: Coords,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> Result<Var<'t, f64>> + Sync,
{
    if !(step > 0.0) {
        return Err(Error::invalid("grad_check", "step must be positive"));
    }
    let analytic = {
        let tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = f(&tape, xv)?;
        check_scalar(&y.value())?;
        let grads = tape.backward(y)?;
        grads.get_or_zeros(xv)
    };
    if !analytic.is_finite() {
        return Err(Error::NonFinite("analytic gradient".into()));
    }

    let indices: Vec<usize> = match coords {
        Coords::All => (0..x.len()).collect(),
        Coords::Sample { count, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = sample(&mut rng, x.len(), count.min(x.len())).into_vec();
            v.sort_unstable();
            v
        }
    };

    let eval = |i: usize, delta: f64| -> Result<f64> {
        let mut xp = x.clone();
        xp.data_mut()[i] += delta;
        let tape = Tape::with_exec(Exec::Sequential);
        let xv = tape.constant(xp);
        let y = f(&tape, xv)?;
        let v = check_scalar(&y.value())?;
        Ok(v)
    };

    let numeric = kernels::map_indices(Exec::auto(), indices.len(), |k| -> Result<f64> {
        let i = indices[k];
        Ok((eval(i, step)? - eval(i, -step)?) / (2.0 * step))
    });

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        coords_checked: indices.len(),
    };
    for (&i, n) in indices.iter().zip(numeric) {
        let n = n?;
        let a = analytic.data()[i];
        let err = (a - n).abs() / 1f64.max(a.abs()).max(n.abs());
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

fn check_scalar(t: &Tensor<f64>) -> Result<f64> {
    let v = t.item().map_err(|_| {
        Error::Graph(format!(
            "function must return a scalar, got {:?}",
            t.shape()
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite("function value during grad check".into()));
    }
    Ok(v)
}

/// Reduces any tensor to a scalar by a fixed pseudo-random projection, so
/// vector-valued functions can be checked through [`grad_check`].
pub fn project<'t>(y: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let shape = y.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0));
    let wv = y.tape().constant(w);
    Ok(y.mul(wv)?.sum())
}

/// Random tensor with entries uniform in `[-scale, scale]`.
pub fn random_tensor(shape: &[usize], scale: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}
